"""Rate extraction from population dynamics.

Reactant/product populations are defined through a dividing surface on a
position-like coordinate.  The side operator measures the reactant weight of
a state; the flux-side style rate is the plateau value of

    kappa(t) = dP_P/dt / (1 - P_P(t) / <P_P>),

which for first-order interconversion P_R <-> P_P is exactly the forward rate
constant once the transient has decayed.  Rates are reported in 1/fs, the
plateau window in fs; all internal time arithmetic stays in atomic units.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigError, ConvergenceError, KineticRegimeError, NumericalError
from .quantum import DensityOperator, HilbertSpace, Operator
from .timeseries import TimeSeries
from .units import AU_TO_FS

SIDE_KINDS = ("below", "above")

# Eigenvalue slack tolerated for side operators projected into truncated bases
SIDE_EIGENVALUE_SLACK = 0.02

# Rate plateau acceptance: relative drift over the window and minimum length
PLATEAU_DRIFT_TOL = 0.05
PLATEAU_MIN_POINTS = 5

# Search range and relative tolerance for the scalar decay-rate fit
KAPPA_MAX_PER_FS = 1.0
KAPPA_REL_TOL = 1e-6

# Thermal reactant weight below this fraction of Z means the initial
# condition is unpreparable at this temperature
MIN_REACTANT_WEIGHT = 1e-12

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SideOperator:
    """Reactant-side weight operator for a dividing surface.

    Parameters
    ----------
    dividing_point : float
        Position of the dividing surface in bohr.
    reactant_side : str
        ``"below"`` if reactants sit at coordinates smaller than the
        dividing point, ``"above"`` otherwise.
    operator : Operator
        Hermitian reactant projector (or its truncation).  ``Tr[op rho]``
        is the reactant population P_R.
    """

    dividing_point: float
    reactant_side: str
    operator: Operator

    def __post_init__(self) -> None:
        if self.reactant_side not in SIDE_KINDS:
            raise ConfigError(
                f"reactant_side must be one of {SIDE_KINDS}, got {self.reactant_side!r}"
            )
        if not np.isfinite(self.dividing_point):
            raise ConfigError("dividing_point must be finite")
        evals = np.linalg.eigvalsh(self.operator.matrix)
        lo, hi = -SIDE_EIGENVALUE_SLACK, 1.0 + SIDE_EIGENVALUE_SLACK
        if evals[0] < lo or evals[-1] > hi:
            raise ConfigError(
                "side operator eigenvalues must lie in "
                f"[{lo:g}, {hi:g}], got range [{evals[0]:.6g}, {evals[-1]:.6g}]"
            )

    @property
    def complement(self) -> Operator:
        """Product-side operator, exactly identity minus the reactant one."""
        return Operator(
            self.operator.space,
            np.eye(self.operator.matrix.shape[0]) - self.operator.matrix,
            hermitian=True,
        )


def grid_side_operator(
    space: HilbertSpace, dividing_point: float, reactant_side: str = "below"
) -> SideOperator:
    """Diagonal reactant projector on a DVR grid space.

    Grid points on the reactant side of the dividing point get weight one,
    the rest weight zero.  Exact projector: idempotent and commuting with
    any function of the position operator.
    """
    if space.basis_kind != "dvr_grid":
        raise ConfigError("grid_side_operator requires a dvr_grid space")
    if reactant_side == "below":
        mask = space.grid < dividing_point
    elif reactant_side == "above":
        mask = space.grid > dividing_point
    else:
        raise ConfigError(f"reactant_side must be one of {SIDE_KINDS}, got {reactant_side!r}")
    matrix = np.diag(mask.astype(float))
    return SideOperator(dividing_point, reactant_side, Operator(space, matrix, hermitian=True))


def side_operator_from_levels(
    levels, dividing_point: float, reactant_side: str = "below"
) -> SideOperator:
    """Wrap the reactant-side indicator of a truncated molecule.

    ``levels`` is a reduced molecular model exposing ``side`` (the grid
    projector transformed into the retained eigenbasis) and ``space()``.
    The indicator is no longer idempotent after truncation but its
    eigenvalues stay within the tolerated slack.
    """
    op = Operator(levels.space(), levels.side, hermitian=True)
    return SideOperator(dividing_point, reactant_side, op)


def population_traces(run, side: SideOperator) -> TimeSeries:
    """Reactant/product populations along a propagated trajectory.

    Parameters
    ----------
    run
        Either an object with a ``snapshots`` attribute holding
        ``(time_au, density_matrix)`` pairs (a propagation result), or any
        iterable of such pairs.
    side : SideOperator
        Must act on the same space as the stored density matrices.

    Returns
    -------
    TimeSeries
        Channels ``P_R`` and ``P_P`` with ``P_P = 1 - P_R`` by construction.
    """
    pairs = getattr(run, "snapshots", run)
    pairs = list(pairs)
    if not pairs:
        raise ConfigError(
            "no density snapshots available; propagate with snapshot_every set"
        )
    dim = side.operator.matrix.shape[0]
    times = np.empty(len(pairs))
    p_r = np.empty(len(pairs))
    h_r = side.operator.matrix
    for k, (t, rho) in enumerate(pairs):
        rho = np.asarray(rho)
        if rho.shape != (dim, dim):
            raise ConfigError(
                f"snapshot {k} has shape {rho.shape}, side operator expects {(dim, dim)}"
            )
        times[k] = t
        p_r[k] = np.einsum("ij,ji->", h_r, rho).real
    return TimeSeries(
        times,
        {"P_R": p_r, "P_P": 1.0 - p_r},
        meta={"dividing_point": f"{side.dividing_point:.12g}", "reactant_side": side.reactant_side},
    )


def _thermal_half(h_s: Operator, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (e^{-beta H / 2}, e^{-beta H}) with the ground energy shifted out."""
    evals, vecs = np.linalg.eigh(h_s.matrix)
    w = np.exp(-0.5 * beta * (evals - evals[0]))
    half = (vecs * w) @ vecs.conj().T
    full = (vecs * w**2) @ vecs.conj().T
    return half, full


def reactant_initial_density(h_s: Operator, side: SideOperator, beta: float) -> DensityOperator:
    """Thermal density confined to the reactant side.

    Builds rho_R proportional to e^{-beta H/2} h_R e^{-beta H/2}, the
    symmetrized side-projected Boltzmann operator.  At beta -> inf this
    collapses onto the lowest eigenstate with reactant character.
    """
    if not np.isfinite(beta) or beta <= 0.0:
        raise ConfigError(f"beta must be positive and finite, got {beta}")
    half, full = _thermal_half(h_s, beta)
    m = half @ side.operator.matrix @ half
    z_r = np.trace(m).real
    z = np.trace(full).real
    if z_r < MIN_REACTANT_WEIGHT * z:
        raise ConfigError(
            f"thermal reactant weight Z_R/Z = {z_r / z:.3e} is below "
            f"{MIN_REACTANT_WEIGHT:g}; no preparable population on the "
            f"{side.reactant_side!r} side of {side.dividing_point:g} bohr"
        )
    rho = m / z_r
    rho = 0.5 * (rho + rho.conj().T)
    # Truncated side operators can leak tiny negative weight; clip it and
    # renormalize so the result is a valid state
    evals, vecs = np.linalg.eigh(rho)
    if evals[0] < -1e-8:
        if evals[0] < -SIDE_EIGENVALUE_SLACK:
            raise NumericalError(
                f"reactant density has eigenvalue {evals[0]:.3e}; side operator "
                "truncation is too aggressive for this temperature"
            )
        evals = np.clip(evals, 0.0, None)
        rho = (vecs * evals) @ vecs.conj().T
        rho /= np.trace(rho).real
    return DensityOperator(h_s.space, rho)


def equilibrium_populations(h_s: Operator, side: SideOperator, beta: float) -> tuple[float, float]:
    """Thermal (<P_R>, <P_P>) of the bare system Hamiltonian.

    This ignores bath reorganization; engines that reach a steady state can
    measure the equilibrium product population directly instead.
    """
    if not np.isfinite(beta) or beta <= 0.0:
        raise ConfigError(f"beta must be positive and finite, got {beta}")
    _, full = _thermal_half(h_s, beta)
    p_r = np.einsum("ij,ji->", side.operator.matrix, full).real / np.trace(full).real
    return float(p_r), float(1.0 - p_r)


def _longest_plateau(kappa: np.ndarray, valid: np.ndarray) -> tuple[int, int] | None:
    """Longest index window where kappa is valid, positive on average, and
    drifts at most PLATEAU_DRIFT_TOL relative to the window mean.

    Two-pointer sweep with monotone max/min deques, O(n).  Ties go to the
    later window.  Returns (start, stop) inclusive, or None.
    """
    n = len(kappa)
    best: tuple[int, int] | None = None
    best_len = PLATEAU_MIN_POINTS - 1
    lo = 0
    max_q: deque[int] = deque()
    min_q: deque[int] = deque()
    csum = np.concatenate(([0.0], np.cumsum(np.where(valid, kappa, 0.0))))

    def window_ok(i: int, j: int) -> bool:
        mean = (csum[j + 1] - csum[i]) / (j - i + 1)
        if mean <= 0.0:
            return False
        spread = kappa[max_q[0]] - kappa[min_q[0]]
        return spread <= PLATEAU_DRIFT_TOL * mean

    for hi in range(n):
        if not valid[hi]:
            lo = hi + 1
            max_q.clear()
            min_q.clear()
            continue
        while max_q and kappa[max_q[-1]] <= kappa[hi]:
            max_q.pop()
        max_q.append(hi)
        while min_q and kappa[min_q[-1]] >= kappa[hi]:
            min_q.pop()
        min_q.append(hi)
        while lo < hi and not window_ok(lo, hi):
            if max_q[0] == lo:
                max_q.popleft()
            if min_q[0] == lo:
                min_q.popleft()
            lo += 1
        if window_ok(lo, hi) and hi - lo >= best_len:
            best = (lo, hi)
            best_len = hi - lo
    return best


@dataclass(frozen=True)
class RateResult:
    """Forward rate extracted from a population trace.

    Attributes
    ----------
    kappa : float
        Plateau rate in 1/fs.
    plateau_window : tuple of float
        Start and end of the accepted plateau, in fs.
    plateau_flatness : float
        Relative drift (max - min) / mean of kappa(t) over the window.
    equilibrium_p_p : float
        The long-time product population used in the denominator.
    """

    kappa: float
    plateau_window: tuple[float, float]
    plateau_flatness: float
    equilibrium_p_p: float

    def __post_init__(self) -> None:
        if self.kappa < 0.0:
            raise NumericalError(f"forward rate must be nonnegative, got {self.kappa}")
        if self.plateau_flatness > PLATEAU_DRIFT_TOL * (1.0 + 1e-12):
            raise NumericalError(
                f"plateau flatness {self.plateau_flatness:.4f} exceeds {PLATEAU_DRIFT_TOL}"
            )


def instantaneous_rate(traces: TimeSeries, p_p_eq: float) -> TimeSeries:
    """kappa(t) = dP_P/dt / (1 - P_P/<P_P>) on the interior grid points.

    Centered three-point differences; endpoints are dropped.  Points where
    the denominator vanishes carry NaN.
    """
    if not 0.0 < p_p_eq < 1.0:
        raise ConfigError(f"equilibrium product population must be in (0, 1), got {p_p_eq}")
    if "P_P" in traces.channels:
        p_p = traces.channels["P_P"]
    elif "P_R" in traces.channels:
        p_p = 1.0 - traces.channels["P_R"]
    else:
        raise ConfigError("traces must carry a P_P or P_R channel")
    if len(p_p) < PLATEAU_MIN_POINTS + 2:
        raise ConfigError(
            f"need at least {PLATEAU_MIN_POINTS + 2} points to extract a rate, got {len(p_p)}"
        )
    dt = traces.dt
    pdot = (p_p[2:] - p_p[:-2]) / (2.0 * dt)
    denom = 1.0 - p_p[1:-1] / p_p_eq
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(np.abs(denom) > 1e-12, pdot / denom, np.nan)
    # per-au rate to per-fs
    return TimeSeries(
        traces.times[1:-1],
        {"kappa": kappa / AU_TO_FS},
        meta={"equilibrium_P_P": f"{p_p_eq:.12g}"},
    )


def forward_rate(traces: TimeSeries, p_p_eq: float) -> RateResult:
    """Plateau forward rate from reactant/product population traces.

    Parameters
    ----------
    traces : TimeSeries
        Population trace with a ``P_P`` (or ``P_R``) channel, times in
        atomic units.
    p_p_eq : float
        Long-time product population <P_P>.

    Returns
    -------
    RateResult
        Rate in 1/fs plus the plateau diagnostics.

    Raises
    ------
    KineticRegimeError
        If no window of at least 5 interior points keeps kappa(t) within
        5% relative drift.  The instantaneous rate trace is attached to
        the exception for inspection.
    """
    rate_series = instantaneous_rate(traces, p_p_eq)
    kappa_t = rate_series.channels["kappa"]
    valid = np.isfinite(kappa_t)
    window = _longest_plateau(kappa_t, valid)
    if window is None:
        raise KineticRegimeError(
            "no kinetic regime detected: kappa(t) never settles within "
            f"{PLATEAU_DRIFT_TOL:.0%} over {PLATEAU_MIN_POINTS} or more points",
            times_fs=rate_series.times_fs(),
            kappa_trace=kappa_t,
        )
    lo, hi = window
    segment = kappa_t[lo : hi + 1]
    mean = float(np.mean(segment))
    flatness = float((np.max(segment) - np.min(segment)) / mean)
    t_fs = rate_series.times_fs()
    return RateResult(
        kappa=mean,
        plateau_window=(float(t_fs[lo]), float(t_fs[hi])),
        plateau_flatness=flatness,
        equilibrium_p_p=float(p_p_eq),
    )


def _single_channel(series: TimeSeries, name: str | None) -> np.ndarray:
    if name is not None:
        if name not in series.channels:
            raise ConfigError(f"channel {name!r} not found in series")
        return series.channels[name]
    if len(series.channels) != 1:
        raise ConfigError(
            f"series has channels {sorted(series.channels)}; pass channel= to pick one"
        )
    return next(iter(series.channels.values()))


def fit_decay_rate(
    reference: TimeSeries,
    perturbed: TimeSeries,
    *,
    channel: str | None = None,
) -> tuple[float, float, float]:
    """Fit perturbed(t) = e^{-kappa t} (reference(t) - a) + b.

    Least-squares over the common grid with trapezoid weights; for each
    trial kappa the offsets (a, b) are solved in closed form, and kappa is
    minimized by a coarse scan plus golden-section refinement on
    [0, KAPPA_MAX_PER_FS].

    Returns
    -------
    (a, b, kappa)
        Offsets in the observable's units and the decay rate in 1/fs.
    """
    if len(reference.times) != len(perturbed.times) or not np.allclose(
        reference.times, perturbed.times, rtol=1e-9, atol=0.0
    ):
        raise ConfigError("decay-rate fit requires both series on the same time grid")
    y0 = _single_channel(reference, channel)
    y1 = _single_channel(perturbed, channel)
    scale = max(np.max(np.abs(y0)), np.max(np.abs(y1)), 1e-300)
    if np.std(y0) <= 1e-12 * scale or np.std(y1) <= 1e-12 * scale:
        raise ConfigError("decay-rate fit rejected: flat input series (zero variance)")
    t_fs = reference.times_fs()
    w = np.full(len(t_fs), reference.dt * AU_TO_FS)
    w[0] *= 0.5
    w[-1] *= 0.5
    sqw = np.sqrt(w)

    def solve(kappa: float) -> tuple[float, np.ndarray]:
        e = np.exp(-kappa * t_fs)
        # residual e*(y0 - a) - (y1 - b); linear part: target = a*e - b
        design = np.stack([e * sqw, -sqw], axis=1)
        target = (e * y0 - y1) * sqw
        sol, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
        resid = target - design @ sol
        return float(resid @ resid), sol

    grid = np.linspace(0.0, KAPPA_MAX_PER_FS, 65)
    costs = [solve(k)[0] for k in grid]
    i = int(np.argmin(costs))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]

    # golden-section on [lo, hi]
    a_pt = hi - _GOLDEN * (hi - lo)
    b_pt = lo + _GOLDEN * (hi - lo)
    f_a, _ = solve(a_pt)
    f_b, _ = solve(b_pt)
    while hi - lo > KAPPA_REL_TOL * max(abs(lo + hi) / 2.0, KAPPA_REL_TOL):
        if f_a <= f_b:
            hi, b_pt, f_b = b_pt, a_pt, f_a
            a_pt = hi - _GOLDEN * (hi - lo)
            f_a, _ = solve(a_pt)
        else:
            lo, a_pt, f_a = a_pt, b_pt, f_b
            b_pt = lo + _GOLDEN * (hi - lo)
            f_b, _ = solve(b_pt)
    kappa = 0.5 * (lo + hi)
    _, sol = solve(kappa)
    return float(sol[0]), float(sol[1]), float(kappa)


@dataclass(frozen=True)
class SweepPoint:
    """One row of a parameter sweep.

    ``data`` holds the scalar observables produced at this point; on
    failure it is empty, ``converged`` is False, and ``error`` carries the
    message.
    """

    value: float
    data: dict[str, float]
    converged: bool
    error: str | None = None


def parameter_sweep(
    run_point: Callable[[float], dict[str, float]],
    values: Iterable[float],
) -> list[SweepPoint]:
    """Run a 1D parameter sweep, recording per-point failures.

    ``run_point`` maps the swept value to a dict of scalar observables.
    Package errors (configuration, numerics, convergence, missing plateau)
    are caught and recorded so one bad point does not abort the sweep;
    anything else propagates.
    """
    rows: list[SweepPoint] = []
    for v in values:
        v = float(v)
        try:
            data = dict(run_point(v))
        except (ConfigError, NumericalError, ConvergenceError) as err:
            rows.append(SweepPoint(v, {}, converged=False, error=str(err)))
            continue
        rows.append(SweepPoint(v, data, converged=True))
    return rows
