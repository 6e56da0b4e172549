"""
Central finite-difference gradient checking for small heads.

Author: EgoLeak Team
Version: 1.0.0
"""

from typing import Callable, Dict

import numpy as np

Params = Dict[str, np.ndarray]

# Denominator floor so vanishing gradients are compared absolutely
RELATIVE_ERROR_FLOOR = 1e-4


def numerical_gradient(func: Callable[[], float], value: np.ndarray, delta: float = 1e-5) -> np.ndarray:
    """
    Central differences of ``func`` w.r.t. every entry of ``value``.

    ``value`` is perturbed in place and restored; ``func`` must read it.
    """
    grad = np.zeros_like(value, dtype=np.float64)
    for i in range(value.size):
        original = value.flat[i]
        value.flat[i] = original + delta
        f_plus = func()
        value.flat[i] = original - delta
        f_minus = func()
        value.flat[i] = original
        grad.flat[i] = (f_plus - f_minus) / (2.0 * delta)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = RELATIVE_ERROR_FLOOR) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradients(func: Callable[[], float], params: Params, analytic: Params,
                    delta: float = 1e-5) -> Dict[str, float]:
    """
    Maximum relative error per parameter between analytic and numeric gradients.

    Args:
        func: loss as a function of the current contents of ``params``
        params: parameter arrays, perturbed in place one entry at a time
        analytic: gradients to verify, keyed like ``params``

    Returns:
        Dict[str, float]: parameter name -> max elementwise relative error
    """
    errors = {}
    for name, value in params.items():
        numeric = numerical_gradient(func, value, delta)
        errors[name] = float(np.max(relative_error(analytic[name], numeric))) if value.size else 0.0
    return errors
