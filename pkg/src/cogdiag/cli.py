"""Command-line interface.

Every option can also be given in a JSON file passed with ``--config``; a flag
on the command line wins over the JSON value, which wins over the default.
Outputs go to ``<out>/<command>-seed<seed>/``. Each run writes a manifest
(deterministic) and a separate ``timing.json`` holding wall-clock data.

Exit codes: 0 success, 1 usage or configuration error, 2 invalid input data,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from ._validation import ConfigError, DataValidationError
from .core.io import load_qmatrix, load_responses, save_qmatrix, save_responses
from .core.types import QMatrix, ResponseMatrix
from .dina_em import EmState, em_predict
from .estimators import DinaEM, EsveDina, HbcaLabeler
from .experiment import MODELS, Q_SOURCES, ExperimentConfig, format_table, run_experiment, run_ratio_table, run_sweep
from .hbca import GOALS, HbcaConfig
from .predict import DENOMINATORS, SlipGuessTable, predict_all
from .synth import GenerativeSpec, generate

log = logging.getLogger("cogdiag")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


def _dims(text):
    """``"5:9"`` -> ``(5, 9)``; a single number means a one-value range."""
    if isinstance(text, (list, tuple)):
        lo, hi = text
        return int(lo), int(hi)
    parts = str(text).split(":")
    try:
        lo, hi = (int(parts[0]), int(parts[-1]))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    if len(parts) > 2:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}")
    return lo, hi


def _rate(text):
    """A constant rate or ``"a,b"`` for the linear model ``a + b * index``."""
    if isinstance(text, (int, float)):
        return float(text)
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    parts = str(text).split(",")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a rate or a,b, got {text!r}") from None
    if len(vals) == 1:
        return vals[0]
    if len(vals) == 2:
        return tuple(vals)
    raise argparse.ArgumentTypeError(f"expected a rate or a,b, got {text!r}")


def _str_list(value):
    return value if isinstance(value, list) else [value]


def _float_list(value):
    return [float(v) for v in _str_list(value)]


@dataclass(frozen=True)
class Opt:
    default: object
    type: object = str
    help: str = ""
    nargs: str | None = None
    choices: tuple | None = None
    flag: bool = False
    name: str | None = None  # flag and JSON key when it differs from the internal key


_H = HbcaConfig()

OPTIONS = {
    "seed": Opt(0, int, "root random seed"),
    "out": Opt("runs", str, "base directory for run outputs"),
    "workers": Opt(1, int, "parallel workers (results do not depend on this)"),
    "responses": Opt(None, str, "response log"),
    "format": Opt("csv-long", str, "response file format", choices=("csv-long", "csv-wide")),
    "lenient": Opt(False, help="keep the first of duplicate responses instead of failing", flag=True),
    "q": Opt(None, str, "Q-matrix CSV"),
    "model": Opt("esve-sd", str, "prediction model", choices=MODELS),
    "models": Opt(["esve-sd"], str, "one or more prediction models", nargs="+", choices=MODELS, name="model"),
    "smoothing": Opt(0.0, float, "pseudo-count for slip/guess tables"),
    "denominator": Opt("ideal", str, "slip/guess count pool", choices=DENOMINATORS),
    "em_max_iter": Opt(500, int, "EM iteration cap"),
    "em_tol": Opt(1e-6, float, "EM log-likelihood tolerance"),
    "em_restarts": Opt(1, int, "EM restarts"),
    "max_skills": Opt(15, int, "largest skill count for exact EM"),
    "trained": Opt(None, str, "output directory of a train run"),
    "cells": Opt(None, str, "CSV of student_id,question_id pairs to predict (default: unobserved cells)"),
    "q_source": Opt("file", str, "where the Q-matrix comes from", choices=Q_SOURCES),
    "test_ratio": Opt([0.2], float, "held-out share of observed cells (several values give a ratio table)", nargs="+"),
    "repeat": Opt(5, int, "trials with resampled splits"),
    "eta": Opt(_H.eta, float, "covering threshold"),
    "dims": Opt(_H.dim_qv_range, _dims, "skill-count range LO:HI"),
    "pop": Opt(_H.population_size, int, "population size"),
    "iters": Opt(_H.iterations, int, "calibration iterations (0 gives the tree initialization only)"),
    "replace": Opt(_H.replace_count, int, "candidates replaced on stagnation"),
    "flip_prob": Opt(_H.flip_prob, float, "chance of setting a zero bit of an inherited vector"),
    "leaf_density": Opt(_H.leaf_density, float, "bit density of leaf question vectors"),
    "da_sample_size": Opt(_H.da_sample_size, int, "students sampled per question for re-estimation"),
    "goal": Opt(None, str, "selection model for labeling (default follows --model)", choices=GOALS),
    "validation_ratio": Opt(_H.validation_ratio, float, "share of training cells used to score candidates"),
    "students": Opt(200, int, "number of students"),
    "questions": Opt(20, int, "number of questions"),
    "skills": Opt(4, int, "number of skills"),
    "q_density": Opt(0.4, float, "Q-matrix bit density"),
    "profile_density": Opt(0.5, float, "profile bit density"),
    "s": Opt(0.1, _rate, "slip: a rate, or a,b for a + b*level"),
    "g": Opt(0.1, _rate, "guess: a rate, or a,b for a + b*deficiency"),
    "mask_rate": Opt(0.0, float, "share of cells hidden"),
}

HBCA_OPTS = ["eta", "dims", "pop", "iters", "replace", "flip_prob", "leaf_density", "da_sample_size", "goal", "validation_ratio"]
EM_OPTS = ["smoothing", "denominator", "em_max_iter", "em_tol", "em_restarts", "max_skills"]
DATA_OPTS = ["responses", "format", "lenient"]

COMMANDS = {
    "train": ("fit a model and write profiles and parameters", DATA_OPTS + ["q", "model"] + EM_OPTS),
    "predict": ("predict response probabilities with a trained model", DATA_OPTS + ["trained", "cells"]),
    "label-q": ("label a Q-matrix from responses alone", DATA_OPTS + ["model"] + HBCA_OPTS),
    "eval": (
        "held-out prediction metrics over resampled splits",
        DATA_OPTS + ["q", "q_source", "models", "test_ratio", "repeat"] + EM_OPTS + HBCA_OPTS,
    ),
    "consistency": (
        "reference slip/guess rates on held-out cells and table distortion",
        DATA_OPTS + ["q", "models", "test_ratio", "repeat"] + EM_OPTS,
    ),
    "synth": (
        "generate synthetic responses with known Q and profiles",
        ["students", "questions", "skills", "q_density", "profile_density", "s", "g", "mask_rate", "format"],
    ),
    "sweep": (
        "validation and test error of labeled Q-matrices per skill count",
        DATA_OPTS + ["model", "test_ratio", "repeat"] + EM_OPTS + HBCA_OPTS,
    ),
}
COMMON = ["seed", "out", "workers"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cogdiag", description="Cognitive diagnosis toolkit.")
    parser.add_argument("--version", action="version", version=f"cogdiag {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (helptext, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext)
        p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS, help="more logging")
        p.add_argument("--config", help="JSON file with option values (keys as in the flag names, '_' for '-')")
        for key in COMMON + opts:
            o = OPTIONS[key]
            flag = "--" + (o.name or key).replace("_", "-")
            default = o.default if not isinstance(o.default, tuple) else ":".join(map(str, o.default))
            h = f"{o.help} (default: {default})" if o.default is not None else o.help
            if o.flag:
                p.add_argument(flag, dest=key, action="store_true", default=argparse.SUPPRESS, help=h)
            else:
                p.add_argument(
                    flag, dest=key, type=o.type, nargs=o.nargs, choices=o.choices, default=argparse.SUPPRESS, help=h
                )
    return parser


def resolve(command: str, flags: dict, json_path: str | None):
    """Merge flag values, JSON values and defaults; report where each value came from."""
    allowed = COMMON + COMMANDS[command][1]
    from_json = {}
    if json_path:
        try:
            with open(json_path, encoding="utf-8") as fh:
                from_json = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {json_path}: {exc}") from None
        if not isinstance(from_json, dict):
            raise UsageError("config file must hold a JSON object")
        names = {(OPTIONS[k].name or k): k for k in allowed}
        from_json = {k.replace("-", "_"): v for k, v in from_json.items()}
        unknown = sorted(set(from_json) - set(names))
        from_json = {names[k]: v for k, v in from_json.items() if k in names}
        if unknown:
            raise UsageError(f"unknown config keys for '{command}': {', '.join(unknown)}")
    values, sources = {}, {}
    for key in allowed:
        o = OPTIONS[key]
        if key in flags:
            values[key], sources[key] = flags[key], "flag"
        elif key in from_json:
            v = from_json[key]
            try:
                if o.nargs:
                    v = [o.type(x) for x in _str_list(v)]
                elif v is not None and not o.flag:
                    v = o.type(v)
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"bad value for config key '{key}': {exc}") from None
            if o.choices:
                for item in _str_list(v):
                    if item not in o.choices:
                        raise UsageError(f"config key '{key}' must be one of {o.choices}")
            values[key], sources[key] = v, "json"
        else:
            values[key], sources[key] = o.default, "default"
    return values, sources


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


class Run:
    """Output directory plus manifest bookkeeping for one command."""

    def __init__(self, command, values, sources):
        self.command = command
        self.values = values
        self.sources = sources
        self.dir = os.path.join(values["out"], f"{command}-seed{values['seed']}")
        os.makedirs(self.dir, exist_ok=True)
        self.inputs = {}
        self.outputs = []
        self.start = time.perf_counter()

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.dir, name)

    def add_input(self, path):
        if path:
            self.inputs[path] = _digest(path)

    def finish(self):
        config = {k: _jsonable(v) for k, v in self.values.items() if k not in ("out", "workers")}
        manifest = {
            "command": self.command,
            "seed": self.values["seed"],
            "config": config,
            "config_sources": {k: v for k, v in self.sources.items() if k not in ("out", "workers")},
            "inputs": self.inputs,
            "outputs": {n: _digest(os.path.join(self.dir, n)) for n in sorted(set(self.outputs))},
            "toolkit_version": __version__,
        }
        _dump_json(manifest, os.path.join(self.dir, "manifest.json"))
        _dump_json(
            {"wall_clock_seconds": time.perf_counter() - self.start, "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S")},
            os.path.join(self.dir, "timing.json"),
        )
        print(self.dir)


def _load_data(run, v) -> ResponseMatrix:
    if not v["responses"]:
        raise UsageError("--responses is required")
    run.add_input(v["responses"])
    return load_responses(v["responses"], v["format"], strict=not v["lenient"])


def _load_q(run, v, responses, required=True) -> QMatrix | None:
    if not v.get("q"):
        if required:
            raise UsageError("--q is required for this command")
        return None
    run.add_input(v["q"])
    q = load_qmatrix(v["q"])
    return q.aligned_to(responses.question_ids)


def _hbca_config(v, model=None) -> HbcaConfig:
    goal = v["goal"] or {"dina-em": "EM", "esve-si": "SI", "esve-sd": "SD"}[model or "esve-sd"]
    return HbcaConfig(
        eta=v["eta"],
        dim_qv_range=v["dims"],
        population_size=v["pop"],
        iterations=v["iters"],
        replace_count=v["replace"],
        flip_prob=v["flip_prob"],
        leaf_density=v["leaf_density"],
        da_sample_size=v["da_sample_size"],
        selecting_goal=goal,
        validation_ratio=v["validation_ratio"],
    )


def _experiment_config(v, model, ratio, q_source="file", consistency=False) -> ExperimentConfig:
    hbca = _hbca_config(v, model) if "eta" in v else HbcaConfig()
    return ExperimentConfig(
        model=model,
        q_source=q_source,
        test_ratio=ratio,
        repeat=v["repeat"],
        seed=v["seed"],
        smoothing=v["smoothing"],
        denominator=v["denominator"],
        em_max_iter=v["em_max_iter"],
        em_tol=v["em_tol"],
        em_restarts=v["em_restarts"],
        max_skills=v["max_skills"],
        hbca=hbca,
        hbca_goal=v.get("goal"),
        consistency=consistency,
        n_workers=v["workers"],
    )


def _write_matrix_csv(path, header, row_ids, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rid, row in zip(row_ids, rows):
            w.writerow([rid, *row])


def _fmt(v):
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return "NA"
    return repr(float(v))


def cmd_train(v, run):
    responses = _load_data(run, v)
    q = _load_q(run, v, responses)
    X = responses.values
    model = v["model"]
    header = ["student_id", *q.skill_ids]
    if model == "dina-em":
        est = DinaEM(q, v["em_max_iter"], v["em_tol"], v["em_restarts"], v["max_skills"], random_state=v["seed"]).fit(X)
        log.info("EM path: %s, %d iterations", est.state_.mode, est.state_.n_iter)
        params = {"model": model, "em_state": est.state_.to_dict()}
        rows = est.profiles_.tolist()
    else:
        est = EsveDina(q, model[-2:].upper(), v["smoothing"], v["denominator"], random_state=v["seed"]).fit(X)
        b = est.batch_
        params = {
            "model": model,
            "table": est.table_.to_dict(list(q.question_ids)),
            "fallback": est.fallback_.tolist(),
            "has_data": b.has_data.tolist(),
        }
        header += [f"determined_{k}" for k in q.skill_ids]
        rows = np.hstack([b.profiles, b.determined.astype(np.int8)]).tolist()
        qids = responses.question_ids

        def names(mask):
            return [qids[j] for j in np.flatnonzero(mask)]

        audit = [
            {
                "student_id": sid,
                "filtered_from_right": names(b.filtered_right[i]),
                "filtered_from_wrong": names(b.filtered_wrong[i]),
                "residual_inconsistent_wrong": names(b.residual_wrong[i]),
            }
            for i, sid in enumerate(responses.student_ids)
        ]
        _dump_json(audit, run.path("esve_audit.json"))
    params["student_ids"] = list(responses.student_ids)
    params["question_ids"] = list(responses.question_ids)
    _write_matrix_csv(run.path("profiles.csv"), header, responses.student_ids, rows)
    _dump_json(params, run.path("parameters.json"))
    save_qmatrix(q, run.path("q.csv"))


def _target_cells(v, run, sids, qids, responses):
    if v["cells"]:
        run.add_input(v["cells"])
        s_index = {s: i for i, s in enumerate(sids)}
        q_index = {q: j for j, q in enumerate(qids)}
        cells = []
        with open(v["cells"], encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["student_id", "question_id"]:
                raise DataValidationError(f"{v['cells']}: header must start with student_id,question_id")
            for n, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    cells.append((s_index[row[0].strip()], q_index[row[1].strip()]))
                except (KeyError, IndexError):
                    raise DataValidationError(f"{v['cells']}:{n}: unknown student or question") from None
        return np.asarray(cells, dtype=np.intp).reshape(-1, 2)
    if responses is None:
        raise UsageError("--cells or --responses is needed to choose target cells")
    return np.argwhere(np.isnan(responses.values))


def cmd_predict(v, run):
    if not v["trained"]:
        raise UsageError("--trained is required")
    ppath = os.path.join(v["trained"], "parameters.json")
    qpath = os.path.join(v["trained"], "q.csv")
    for p in (ppath, qpath):
        if not os.path.exists(p):
            raise UsageError(f"{p} not found; point --trained at a train run directory")
        run.add_input(p)
    with open(ppath, encoding="utf-8") as fh:
        params = json.load(fh)
    sids, qids = params["student_ids"], params["question_ids"]
    q = load_qmatrix(qpath).aligned_to(qids)
    responses = None
    if v["responses"]:
        responses = _load_data(run, v)
        if list(responses.student_ids) != sids or list(responses.question_ids) != qids:
            raise DataValidationError("responses do not match the trained students and questions")
    cells = _target_cells(v, run, sids, qids, responses)
    flags = np.zeros(len(cells), dtype=bool)
    if params["model"] == "dina-em":
        if responses is None:
            raise UsageError("dina-em predictions need the training --responses as evidence")
        state = EmState.from_dict(params["em_state"])
        X = responses.values
        probs = em_predict(state, X, ~np.isnan(X), cells)
    else:
        profiles = np.loadtxt(os.path.join(v["trained"], "profiles.csv"), delimiter=",", skiprows=1, dtype=str, ndmin=2)
        profiles = profiles[:, 1 : 1 + q.n_skills].astype(np.int8)
        table = SlipGuessTable.from_dict(params["table"])
        probs, flags = predict_all(
            profiles, q.entries, table, cells, params["has_data"], params["fallback"], return_flags=True
        )
    with open(run.path("predictions.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["student_id", "question_id", "p_correct", "fallback"])
        for (i, j), p, f in zip(cells, probs, flags):
            w.writerow([sids[i], qids[j], repr(float(p)), int(f)])


def cmd_label_q(v, run):
    responses = _load_data(run, v)
    config = _hbca_config(v, v["model"])
    est = HbcaLabeler(**config.to_dict(), n_workers=v["workers"], random_state=v["seed"]).fit(responses)
    save_qmatrix(est.q_matrix_, run.path("q.csv"))
    with open(run.path("report.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        for row in est.report_:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    log.info("best dim %d, validation MAE %.4f", est.result_.best_dim, est.result_.best_validation_mae)


def cmd_eval(v, run):
    responses = _load_data(run, v)
    q = _load_q(run, v, responses, required=v["q_source"] == "file")
    ratios = _float_list(v["test_ratio"])
    reports, rows = [], []
    for model in v["models"]:
        for ratio in ratios:
            rep = run_experiment(responses, q, _experiment_config(v, model, ratio, v["q_source"]))
            reports.append(rep.to_dict())
            label = model if v["q_source"] == "file" else f"{model}+{v['q_source']}"
            rows.append({"model": label, "test_ratio": ratio, "mae": rep.mae, "rmse": rep.rmse, "auc": rep.auc})
    _dump_json({"experiments": reports}, run.path("report.json"))
    text = format_table(rows)
    with open(run.path("report.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    sys.stdout.write(text)


def cmd_consistency(v, run):
    responses = _load_data(run, v)
    q = _load_q(run, v, responses)
    ratio = _float_list(v["test_ratio"])[0]
    out, rows = {}, []
    for model in v["models"]:
        rep = run_experiment(responses, q, _experiment_config(v, model, ratio, consistency=True))
        first = rep.trials[0].consistency
        header = ["question_id"] + [f"level_{b}" for b in range(first.s_ref.shape[1])]
        _write_matrix_csv(
            run.path(f"heatmap_{model}.csv"), header, responses.question_ids, [[_fmt(x) for x in r] for r in first.heatmap_matrix]
        )
        s_d, g_d = rep.mean_delta()
        out[model] = {"s_delta": None if np.isnan(s_d) else s_d, "g_delta": None if np.isnan(g_d) else g_d}
        out[model]["trials"] = [t.consistency.to_dict() for t in rep.trials]
        rows.append({"model": model, "s_delta": s_d, "g_delta": g_d})
    _dump_json(out, run.path("consistency.json"))
    text = format_table(rows)
    with open(run.path("consistency.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    sys.stdout.write(text)


def cmd_synth(v, run):
    spec = GenerativeSpec(
        v["students"], v["questions"], v["skills"], v["q_density"], v["profile_density"], v["s"], v["g"], v["mask_rate"], v["seed"]
    )
    data = generate(spec)
    save_responses(data.responses, run.path("responses.csv"), v["format"])
    save_qmatrix(data.q, run.path("q.csv"))
    _dump_json(data.truth_dict(), run.path("truth.json"))


def cmd_sweep(v, run):
    responses = _load_data(run, v)
    lo, hi = v["dims"]
    base = _experiment_config(v, v["model"], _float_list(v["test_ratio"])[0], "hbca")
    rows = run_sweep(responses, range(lo, hi + 1), base)
    _dump_json({"rows": rows}, run.path("sweep.json"))
    with open(run.path("sweep.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    text = format_table(rows)
    with open(run.path("sweep.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    sys.stdout.write(text)


HANDLERS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "label-q": cmd_label_q,
    "eval": cmd_eval,
    "consistency": cmd_consistency,
    "synth": cmd_synth,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.pop("verbose"), 2), format="%(levelname)s %(name)s: %(message)s"
    )
    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        values, sources = resolve(command, args, config_path)
        if values["workers"] < 1:
            raise UsageError("--workers must be >= 1")
        run = Run(command, values, sources)
        HANDLERS[command](values, run)
        run.finish()
    except (UsageError, ConfigError) as exc:
        print(f"cogdiag {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, OSError, ValueError) as exc:
        print(f"cogdiag {command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"cogdiag {command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
