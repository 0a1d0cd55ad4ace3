"""Sparsity and spatial decay analysis for linear systems on lattices."""

__version__ = "0.1.0"

from .errors import (BoundVacuousError, DecaylabError, NumericalError,  # noqa: E402
                     SystemFormatError, ValidationError)
from .measures import QMeasureSpec, sqw_measure, sqw_measure_pow, s01_measure  # noqa: E402
from .systems import LatticeSystem, build_named_system, load_system, save_system  # noqa: E402
from .weights import WeightFunction  # noqa: E402

__all__ = [
    "BoundVacuousError",
    "DecaylabError",
    "LatticeSystem",
    "NumericalError",
    "QMeasureSpec",
    "SystemFormatError",
    "ValidationError",
    "WeightFunction",
    "build_named_system",
    "load_system",
    "s01_measure",
    "save_system",
    "sqw_measure",
    "sqw_measure_pow",
]
