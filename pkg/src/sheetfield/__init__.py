"""Numerical laboratory for two-parameter SDEs driven by a Brownian sheet."""
from .drift import BOUNDED_IDS, MonotonePair, SmoothedDrift, catalog, make_drift, mollify, register, validate
from .errors import (ConfigError, DivergenceError, NonConvergenceError, ParameterError, RegimeError, SheetfieldError,
                     WeightOverflowError)
from .sheet import GridSpec, Rect, SheetPath, dalang_walsh, generate_sheet, rect_increment, rescale
from .solver import (Axes, Constant, SolutionField, WaveField, residual, rotate_to_wave, solve_goursat_euler,
                     solve_perturbation, solve_picard, unrotate)

__version__ = "0.1.0"

__all__ = [
    "BOUNDED_IDS", "Axes", "ConfigError", "Constant", "DivergenceError", "GridSpec", "MonotonePair",
    "NonConvergenceError", "ParameterError", "Rect", "RegimeError", "SheetPath", "SheetfieldError", "SmoothedDrift",
    "SolutionField", "WaveField", "WeightOverflowError", "catalog", "dalang_walsh", "generate_sheet", "make_drift",
    "mollify", "register", "rect_increment", "rescale", "residual", "rotate_to_wave", "solve_goursat_euler",
    "solve_perturbation", "solve_picard", "unrotate", "validate",
]
