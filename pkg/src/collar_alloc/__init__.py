"""Optimal asset allocation for a fund manager facing a fund-flow collar while learning the drift.

The wealth-to-benchmark ratio is priced by Fourier inversion against the
affine moment generating function of the benchmarked state price density,
and the optimal risky weight follows from its partial derivatives.
"""
__version__ = "0.1.0"

from .concavify import ConcavifiedPayoff, calibrate_y, condition_a, terminal_wealth, thresholds
from .filtering import VarianceCurve, variance_closed_form, variance_path
from .kernels import BACKEND
from .model import Config, ConfigError, load_config, validate_config
from .riccati import eval_H, solve_riccati
from .strategy import Economy, merton_level, strategy_curve

__all__ = [
    "BACKEND", "Config", "ConfigError", "ConcavifiedPayoff", "Economy", "VarianceCurve",
    "calibrate_y", "condition_a", "eval_H", "load_config", "merton_level", "solve_riccati",
    "strategy_curve", "terminal_wealth", "thresholds", "validate_config",
    "variance_closed_form", "variance_path",
]
