"""CSV readers and writers for responses and Q-matrices.

Formats
-------
csv-long
    ``student_id,question_id,score`` with score in {0,1}.
csv-wide
    first column ``student_id``, then one column per question id; cells ``0``, ``1`` or ``NA``.
Q-matrix
    ``question_id,<skill ids...>`` with binary cells.
"""
from __future__ import annotations

import csv
import io
import os

import numpy as np

from .._validation import DataValidationError
from .types import QMatrix, ResponseMatrix

__all__ = [
    "ParseError",
    "load_responses",
    "save_responses",
    "load_qmatrix",
    "save_qmatrix",
    "read_text_rows",
]

_MISSING = {"NA", "", "nan", "NaN"}


class ParseError(DataValidationError):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


def read_text_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        yield from enumerate(csv.reader(fh), start=1)


def _parse_score(token, path, line):
    token = token.strip()
    if token == "1":
        return 1.0
    if token == "0":
        return 0.0
    raise DataValidationError(f"{path}:{line}: score {token!r} is not 0 or 1")


def load_responses(path, format: str = "csv-long", *, strict: bool = True) -> ResponseMatrix:
    """Read a response file.

    In ``strict`` mode a repeated ``(student, question)`` pair raises; otherwise the
    first occurrence wins. Students and questions keep their first-appearance order.
    """
    if format not in ("csv-long", "csv-wide"):
        raise ValueError(f"unknown response format {format!r}")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if format == "csv-long":
        return _load_long(path, strict)
    return _load_wide(path)


def _load_long(path, strict):
    rows = read_text_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise ParseError(path, 1, "empty file") from None
    if [h.strip() for h in header] != ["student_id", "question_id", "score"]:
        raise ParseError(path, 1, f"expected header student_id,question_id,score, got {','.join(header)}")
    students, questions, records = {}, {}, {}
    for line, row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ParseError(path, line, f"expected 3 fields, got {len(row)}")
        sid, qid, score = (c.strip() for c in row)
        if not sid or not qid:
            raise DataValidationError(f"{path}:{line}: empty student or question id")
        value = _parse_score(score, path, line)
        i = students.setdefault(sid, len(students))
        j = questions.setdefault(qid, len(questions))
        if (i, j) in records:
            if strict:
                raise DataValidationError(f"{path}:{line}: duplicate response for ({sid}, {qid})")
            continue
        records[(i, j)] = value
    if not records:
        raise DataValidationError(f"{path}: no responses")
    values = np.full((len(students), len(questions)), np.nan)
    for (i, j), v in records.items():
        values[i, j] = v
    return ResponseMatrix(values, tuple(students), tuple(questions))


def _load_wide(path):
    rows = read_text_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise ParseError(path, 1, "empty file") from None
    header = [h.strip() for h in header]
    if len(header) < 2 or header[0] != "student_id":
        raise ParseError(path, 1, "expected header student_id,<question ids...>")
    qids = header[1:]
    if any(not q for q in qids):
        raise DataValidationError(f"{path}:1: empty question id")
    sids, grid = [], []
    for line, row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(path, line, f"expected {len(header)} fields, got {len(row)}")
        sid = row[0].strip()
        if not sid:
            raise DataValidationError(f"{path}:{line}: empty student id")
        sids.append(sid)
        grid.append([np.nan if c.strip() in _MISSING else _parse_score(c, path, line) for c in row[1:]])
    if not grid:
        raise DataValidationError(f"{path}: no students")
    return ResponseMatrix(np.array(grid, dtype=np.float64), tuple(sids), tuple(qids))


def _fmt(v):
    return "NA" if np.isnan(v) else str(int(v))


def save_responses(responses: ResponseMatrix, path, format: str = "csv-long") -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if format == "csv-long":
        writer.writerow(["student_id", "question_id", "score"])
        for i, j in np.argwhere(responses.observed):
            writer.writerow([responses.student_ids[i], responses.question_ids[j], _fmt(responses.values[i, j])])
    elif format == "csv-wide":
        writer.writerow(["student_id", *responses.question_ids])
        for sid, row in zip(responses.student_ids, responses.values):
            writer.writerow([sid, *(_fmt(v) for v in row)])
    else:
        raise ValueError(f"unknown response format {format!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def load_qmatrix(path) -> QMatrix:
    rows = read_text_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise ParseError(path, 1, "empty file") from None
    header = [h.strip() for h in header]
    if len(header) < 2 or header[0] != "question_id":
        raise ParseError(path, 1, "expected header question_id,<skill ids...>")
    qids, grid = [], []
    for line, row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(path, line, f"expected {len(header)} fields, got {len(row)}")
        qid = row[0].strip()
        if qid in qids:
            raise DataValidationError(f"{path}:{line}: duplicate question id {qid!r}")
        cells = [c.strip() for c in row[1:]]
        if any(c not in ("0", "1") for c in cells):
            raise DataValidationError(f"{path}:{line}: Q-matrix cells must be 0 or 1")
        if all(c == "0" for c in cells):
            raise DataValidationError(f"{path}:{line}: question {qid!r} tests no skill")
        qids.append(qid)
        grid.append([int(c) for c in cells])
    if not grid:
        raise DataValidationError(f"{path}: no questions")
    return QMatrix(np.array(grid, dtype=np.int8), tuple(qids), tuple(header[1:]))


def save_qmatrix(q: QMatrix, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["question_id", *q.skill_ids])
    for qid, row in zip(q.question_ids, q.entries):
        writer.writerow([qid, *(int(v) for v in row)])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
