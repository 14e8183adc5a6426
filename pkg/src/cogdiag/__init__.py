"""Cognitive diagnosis with explicit student-vector estimation.

Main entry points:

* :class:`EsveDina` and :class:`DinaEM` estimate skill profiles and predict
  held-out responses,
* :class:`HbcaLabeler` labels a Q-matrix without supervision,
* :func:`run_experiment` evaluates a model on resampled train/test splits.
"""
from ._validation import ConfigError, DataValidationError
from .core import QMatrix, ResponseMatrix, SkillProfile, load_qmatrix, load_responses
from .estimators import DinaEM, EsveDina, HbcaLabeler
from .experiment import ExperimentConfig, run_experiment
from .hbca import HbcaConfig

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataValidationError",
    "QMatrix",
    "ResponseMatrix",
    "SkillProfile",
    "load_qmatrix",
    "load_responses",
    "EsveDina",
    "DinaEM",
    "HbcaLabeler",
    "ExperimentConfig",
    "HbcaConfig",
    "run_experiment",
    "__version__",
]
