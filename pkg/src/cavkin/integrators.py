"""Adaptive Dormand-Prince 4(5) integration for complex state arrays.

The propagators in this package integrate between uniform output points
and restart the controller at each one, so a trajectory is a pure
function of (initial state, interval, tolerances).  That makes output
grids reproducible and lets checkpoint resumes match an uninterrupted
run bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalError

# Dormand-Prince coefficients, first-same-as-last pair
_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
_B5 = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0)
_B4 = (
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_ORDER_EXPONENT = -0.2  # 1/(4+1)


@dataclass
class IntegrationInfo:
    """Bookkeeping from one integration interval."""

    steps: int = 0
    rejected: int = 0
    rhs_evaluations: int = 0
    final_step: float = 0.0


def integrate_adaptive(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    y0: np.ndarray,
    t1: float,
    *,
    rtol: float = 1e-8,
    atol: float = 1e-12,
    first_step: float | None = None,
    max_steps: int = 10_000_000,
) -> tuple[np.ndarray, IntegrationInfo]:
    """Integrate dy/dt = rhs(t, y) from t0 to t1 and return y(t1).

    Parameters
    ----------
    rhs : callable
        Right-hand side; must return an array of y's shape and dtype.
    t0, t1 : float
        Interval endpoints, t1 > t0.
    rtol, atol : float
        Standard mixed error control; the step error is measured as an
        rms of components scaled by atol + rtol * |y|.
    first_step : float, optional
        Initial trial step; by default estimated from |y| / |rhs|.
    max_steps : int
        Hard cap on accepted steps.

    Raises
    ------
    NumericalError
        On step-size underflow, non-finite state, or step-count
        exhaustion.
    """
    span = t1 - t0
    if not span > 0.0:
        raise NumericalError(f"integration span must be positive, got [{t0}, {t1}]")
    y = np.array(y0, dtype=np.complex128)
    info = IntegrationInfo()

    k1 = rhs(t0, y)
    info.rhs_evaluations += 1
    if first_step is None:
        scale = atol + rtol * (float(np.max(np.abs(y))) if y.size else 0.0)
        d1 = float(np.max(np.abs(k1))) if y.size else 0.0
        h = span * 1e-3 if d1 == 0.0 else 0.01 * scale / d1
        h = min(max(h, span * 1e-10), span)
    else:
        h = min(first_step, span)

    t = t0
    ks = [None] * 7
    ks[0] = k1
    underflow = 16.0 * np.finfo(np.float64).eps * max(abs(t0), abs(t1), span)

    while t < t1:
        if info.steps >= max_steps:
            raise NumericalError(
                f"integration exceeded {max_steps} steps at t = {t:.6g} (span [{t0:.6g}, {t1:.6g}])"
            )
        h = min(h, t1 - t)
        if h < underflow:
            raise NumericalError(
                f"step size underflow (h = {h:.3e}) at t = {t:.6g} after "
                f"{info.steps} steps; the dynamics look singular at this tolerance"
            )

        for i in range(1, 7):
            yi = y
            for j, aij in enumerate(_A[i]):
                if aij != 0.0:
                    yi = yi + (h * aij) * ks[j]
            ks[i] = rhs(t + _C[i] * h, yi)
        info.rhs_evaluations += 6

        y5 = y
        err = np.zeros_like(y)
        for i in range(7):
            if _B5[i] != 0.0:
                y5 = y5 + (h * _B5[i]) * ks[i]
            diff = _B5[i] - _B4[i]
            if diff != 0.0:
                err = err + (h * diff) * ks[i]

        if not np.all(np.isfinite(y5.view(np.float64))):
            raise NumericalError(
                f"non-finite state during integration at t = {t:.6g}; "
                "reduce the step or check the generator"
            )

        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        err_norm = float(np.sqrt(np.mean(np.abs(err / scale) ** 2))) if y.size else 0.0

        if err_norm <= 1.0:
            t = t + h
            y = y5
            ks[0] = ks[6]  # first-same-as-last
            info.steps += 1
            info.final_step = h
        else:
            info.rejected += 1

        factor = _MAX_FACTOR if err_norm == 0.0 else _SAFETY * err_norm**_ORDER_EXPONENT
        h = h * min(_MAX_FACTOR, max(_MIN_FACTOR, factor))

    return y, info
