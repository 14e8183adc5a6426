from .datasets import FRACTION_ENV, filter_assist_subset, load_fraction
from .io import ParseError, load_qmatrix, load_responses, save_qmatrix, save_responses
from .rng import RandomSource, as_generator, derive_rng
from .split import SplitWarning, split, split_mask
from .types import DataSplit, QMatrix, ResponseMatrix, SkillProfile, cells_to_mask, mask_to_cells

__all__ = [
    "FRACTION_ENV",
    "DataSplit",
    "ParseError",
    "QMatrix",
    "RandomSource",
    "ResponseMatrix",
    "SkillProfile",
    "SplitWarning",
    "as_generator",
    "cells_to_mask",
    "derive_rng",
    "filter_assist_subset",
    "load_fraction",
    "load_qmatrix",
    "load_responses",
    "mask_to_cells",
    "save_qmatrix",
    "save_responses",
    "split",
    "split_mask",
]
