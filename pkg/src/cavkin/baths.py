"""Debye-bath exponential decompositions.

Open-system layers consume a harmonic environment through its time
correlation function C(t).  For a Debye spectral density

    J(w) = 2 * lam * gamma * w / (w**2 + gamma**2)

at inverse temperature beta, C(t) expands into a sum of decaying
exponentials C(t) = sum_k c_k exp(-g_k t).  This module produces the
coefficients (classic Matsubara series, or the faster converging
[N-1/N] Pade variant), selects the term count against a reconstruction
tolerance, and folds the neglected high-frequency tail into a Markovian
terminator strength.

C(0+) carries a logarithmic ultraviolet divergence, so reconstruction
quality is judged on resolved lags t >= 1/(20 gamma); everything below
that is sub-bath-memory transient, which is exactly the content the
terminator stands in for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError

RECONSTRUCTION_TOL = 1e-4
RECONSTRUCTION_POINTS = 150
RECONSTRUCTION_T_MAX = 5.0  # in units of the bath memory time 1/gamma
RECONSTRUCTION_T_MIN = 0.05
AUTO_MAX_TERMS = 40
REFERENCE_TERMS = 20000

_POLE_RTOL = 1e-8


@dataclass(frozen=True)
class BathSpec:
    """Parameters of one Debye bath attached to a system operator.

    Parameters
    ----------
    coupling_op_index : int
        Index of the system coupling operator this bath acts through.
        The open-system layer owns the operator list; the bath only
        records which slot it belongs to.
    lam : float
        Reorganization energy (a.u.), >= 0.
    gamma : float
        Debye cutoff frequency (a.u.), > 0.  Its inverse is the bath
        memory time.
    beta : float
        Inverse temperature (a.u.), > 0.
    n_matsubara : int or None
        Number of finite-frequency terms K to keep beyond the leading
        cutoff pole.  None selects the smallest K that meets the
        reconstruction tolerance.
    decomposition : str
        "matsubara" for the standard series, "pade" for the [N-1/N]
        variant with the same interface.
    """

    coupling_op_index: int
    lam: float
    gamma: float
    beta: float
    n_matsubara: int | None = None
    decomposition: str = "pade"

    def __post_init__(self) -> None:
        if not self.lam >= 0.0:
            raise ConfigError(f"reorganization energy must be >= 0, got {self.lam}")
        if not self.gamma > 0.0:
            raise ConfigError(f"bath cutoff must be > 0, got {self.gamma}")
        if not self.beta > 0.0:
            raise ConfigError(f"inverse temperature must be > 0, got {self.beta}")
        if self.decomposition not in ("matsubara", "pade"):
            raise ConfigError(
                f"unknown decomposition {self.decomposition!r}; "
                "expected 'matsubara' or 'pade'"
            )
        if self.n_matsubara is not None and self.n_matsubara < 0:
            raise ConfigError(f"term count must be >= 0, got {self.n_matsubara}")
        if self.coupling_op_index < 0:
            raise ConfigError(f"coupling operator index must be >= 0, got {self.coupling_op_index}")


@dataclass(frozen=True)
class ExponentialBath:
    """Exponential decomposition of one bath correlation function.

    C(t) is approximated by ``sum_k coefficients[k] * exp(-rates[k] t)``
    plus a residual delta-correlated tail of strength
    ``terminator_strength`` (the real part of the neglected integral,
    applied by hierarchy propagators as a Markovian double commutator).

    Attributes
    ----------
    spec : BathSpec
        The parameters this decomposition was built from.
    coefficients : numpy.ndarray
        Complex amplitudes c_k.  Only the leading k = 0 term carries an
        imaginary part.
    rates : numpy.ndarray
        Real positive decay rates g_k; rates[0] is the Debye cutoff.
    terminator_strength : float
        Real integral of the neglected tail, 2*lam/(beta*gamma) minus
        the kept terms' Re sum(c_k / g_k).
    reconstruction_error : float
        Max deviation from the reference C(t) on the standard lag grid,
        relative to max |C| there.
    """

    spec: BathSpec
    coefficients: np.ndarray
    rates: np.ndarray
    terminator_strength: float
    reconstruction_error: float

    def __post_init__(self) -> None:
        ck = np.array(self.coefficients, dtype=np.complex128)
        gk = np.array(self.rates, dtype=np.float64)
        if ck.shape != gk.shape or ck.ndim != 1 or ck.size == 0:
            raise ConfigError("coefficients and rates must be matching 1-d arrays")
        if not np.all(np.isfinite(ck)) or not np.all(np.isfinite(gk)):
            raise ConfigError("bath decomposition contains non-finite terms")
        if not np.all(gk > 0.0):
            raise ConfigError("bath decay rates must be positive")
        ck.setflags(write=False)
        gk.setflags(write=False)
        object.__setattr__(self, "coefficients", ck)
        object.__setattr__(self, "rates", gk)

    @property
    def n_modes(self) -> int:
        return self.coefficients.size

    @property
    def coupling_op_index(self) -> int:
        return self.spec.coupling_op_index

    def correlation(self, t) -> np.ndarray:
        """Evaluate the decomposed C(t) on an array of lags t >= 0."""
        tt = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = np.exp(-np.outer(tt, self.rates)) @ self.coefficients
        return out if np.ndim(t) else out[0]


def debye_spectral_density(omega, lam: float, gamma: float) -> np.ndarray:
    """J(w) = 2*lam*gamma*w / (w**2 + gamma**2), vectorized over w."""
    w = np.asarray(omega, dtype=np.float64)
    return 2.0 * lam * gamma * w / (w * w + gamma * gamma)


def reconstruction_grid(gamma: float) -> np.ndarray:
    """Standard lag grid for judging a decomposition of cutoff gamma."""
    return np.linspace(
        RECONSTRUCTION_T_MIN / gamma,
        RECONSTRUCTION_T_MAX / gamma,
        RECONSTRUCTION_POINTS,
    )


def debye_correlation_reference(
    t, lam: float, gamma: float, beta: float, n_terms: int = REFERENCE_TERMS
) -> np.ndarray:
    """Near-exact Debye C(t) from a long Matsubara sum.

    Serves as the internal reference for term-count selection.  The sum
    converges exponentially for t > 0; n_terms is sized so the
    truncation is far below the reconstruction tolerance on the
    standard grid.
    """
    _reject_cot_pole(gamma, beta)
    tt = np.atleast_1d(np.asarray(t, dtype=np.float64))
    c0, g0 = _leading_term(lam, gamma, beta)
    out = c0 * np.exp(-g0 * tt)
    chunk = 2000
    for start in range(1, n_terms + 1, chunk):
        k = np.arange(start, min(start + chunk, n_terms + 1), dtype=np.float64)
        nu = 2.0 * np.pi * k / beta
        ck = 4.0 * lam * gamma / beta * nu / (nu * nu - gamma * gamma)
        out = out + np.exp(-np.outer(tt, nu)) @ ck
    return out if np.ndim(t) else out[0]


def reconstruction_error(
    coefficients,
    rates,
    lam: float,
    gamma: float,
    beta: float,
    n_reference: int = REFERENCE_TERMS,
) -> float:
    """Max |C_K(t) - C_ref(t)| / max |C_ref| on the standard lag grid."""
    grid = reconstruction_grid(gamma)
    ref = debye_correlation_reference(grid, lam, gamma, beta, n_terms=n_reference)
    return _error_against_reference(np.asarray(coefficients), np.asarray(rates), grid, ref)


def decompose_debye(
    spec: BathSpec,
    *,
    tol: float = RECONSTRUCTION_TOL,
    max_terms: int = AUTO_MAX_TERMS,
) -> ExponentialBath:
    """Expand a Debye bath correlation function into exponentials.

    The leading term is always c_0 = lam*gamma*(cot(beta*gamma/2) - i)
    with rate gamma.  Finite-frequency terms follow the requested
    decomposition.  With ``spec.n_matsubara`` set, exactly that count is
    used; otherwise the smallest count whose reconstruction error meets
    ``tol`` is chosen, scanning up to ``max_terms``.

    Returns
    -------
    ExponentialBath

    Raises
    ------
    ConfigError
        If beta*gamma/2 sits on a pole of cot (gamma equal to a thermal
        frequency 2*pi*k/beta); shift gamma or the temperature slightly.
    ConvergenceError
        If auto selection exhausts ``max_terms`` without reaching
        ``tol``.
    """
    _reject_cot_pole(spec.gamma, spec.beta)
    if spec.lam == 0.0:
        return ExponentialBath(
            spec=spec,
            coefficients=np.zeros(1, dtype=np.complex128),
            rates=np.array([spec.gamma]),
            terminator_strength=0.0,
            reconstruction_error=0.0,
        )

    grid = reconstruction_grid(spec.gamma)
    ref = debye_correlation_reference(grid, spec.lam, spec.gamma, spec.beta)

    if spec.n_matsubara is not None:
        ck, gk = _terms(spec, spec.n_matsubara)
        err = _error_against_reference(ck, gk, grid, ref)
        return _assemble(spec, ck, gk, err)

    best_err = math.inf
    for count in range(max_terms + 1):
        ck, gk = _terms(spec, count)
        err = _error_against_reference(ck, gk, grid, ref)
        best_err = min(best_err, err)
        if err <= tol:
            return _assemble(spec, ck, gk, err)
    raise ConvergenceError(
        f"bath reconstruction stuck at {best_err:.2e} relative after "
        f"{max_terms} {spec.decomposition} terms (target {tol:.1e}); "
        "set n_matsubara explicitly and rely on the terminator, or use "
        "the pade decomposition if not already"
    )


def lifetime_to_bath(
    tau_c: float,
    omega_c: float,
    beta: float,
    *,
    gamma: float | None = None,
    coupling_op_index: int = 0,
    n_matsubara: int | None = None,
    decomposition: str = "pade",
) -> BathSpec:
    """Debye bath parameters realizing a target 1/e amplitude lifetime.

    A mode of frequency omega_c bilinearly damped by a Debye bath loses
    amplitude at the rate J(omega_c) / (2 omega_c) in the golden-rule
    regime.  Matching that to 1/tau_c fixes the reorganization energy

        lam = (omega_c**2 + gamma**2) / (gamma * tau_c)

    which reduces to 2*omega_c/tau_c at the default cutoff
    gamma = omega_c.  tau_c = inf yields a closed (lossless) mode.

    Parameters
    ----------
    tau_c : float
        Target amplitude 1/e time (a.u.), > 0; may be ``math.inf``.
    omega_c : float
        Mode frequency (a.u.), > 0.
    beta : float
        Inverse temperature (a.u.).
    gamma : float, optional
        Bath cutoff; defaults to omega_c.

    Returns
    -------
    BathSpec
    """
    if not tau_c > 0.0:
        raise ConfigError(f"lifetime must be > 0, got {tau_c}")
    if not omega_c > 0.0:
        raise ConfigError(f"mode frequency must be > 0, got {omega_c}")
    cut = omega_c if gamma is None else gamma
    lam = (omega_c * omega_c + cut * cut) / (cut * tau_c)
    return BathSpec(
        coupling_op_index=coupling_op_index,
        lam=lam,
        gamma=cut,
        beta=beta,
        n_matsubara=n_matsubara,
        decomposition=decomposition,
    )


def _leading_term(lam: float, gamma: float, beta: float) -> tuple[complex, float]:
    cot = 1.0 / math.tan(beta * gamma / 2.0)
    return lam * gamma * (cot - 1.0j), gamma


def _matsubara_terms(lam: float, gamma: float, beta: float, count: int):
    if count == 0:
        return np.zeros(0, dtype=np.complex128), np.zeros(0)
    k = np.arange(1, count + 1, dtype=np.float64)
    nu = 2.0 * np.pi * k / beta
    ck = 4.0 * lam * gamma / beta * nu / (nu * nu - gamma * gamma)
    return ck.astype(np.complex128), nu


def _pade_terms(lam: float, gamma: float, beta: float, count: int):
    # [N-1/N] approximant to coth(beta w / 2): shifted pole positions
    # eps_l and weights kappa_l from small symmetric eigenproblems.
    if count == 0:
        return np.zeros(0, dtype=np.complex128), np.zeros(0)
    eps = _pade_poles(count)
    chi = _pade_zeros(count)
    pref = 0.5 * count * (2 * (count + 1) + 1)
    kappa = np.empty(count)
    for j in range(count):
        term = pref
        for k in range(count - 1):
            term *= (chi[k] ** 2 - eps[j] ** 2) / (
                eps[k] ** 2 - eps[j] ** 2 + (1.0 if j == k else 0.0)
            )
        k = count - 1
        term /= eps[k] ** 2 - eps[j] ** 2 + (1.0 if j == k else 0.0)
        kappa[j] = term
    nu = eps / beta
    ck = (kappa / beta) * 4.0 * lam * gamma * nu / (nu * nu - gamma * gamma)
    return ck.astype(np.complex128), nu


def _pade_poles(count: int) -> np.ndarray:
    off = np.array([1.0 / math.sqrt((2 * k + 5) * (2 * k + 3)) for k in range(2 * count - 1)])
    mat = np.diag(off, k=1)
    vals = np.linalg.eigvalsh(mat + mat.T)
    return -2.0 / vals[:count]


def _pade_zeros(count: int) -> np.ndarray:
    if count < 2:
        return np.zeros(0)
    off = np.array([1.0 / math.sqrt((2 * k + 7) * (2 * k + 5)) for k in range(2 * count - 2)])
    mat = np.diag(off, k=1)
    vals = np.linalg.eigvalsh(mat + mat.T)
    return -2.0 / vals[: count - 1]


def _terms(spec: BathSpec, count: int):
    c0, g0 = _leading_term(spec.lam, spec.gamma, spec.beta)
    maker = _matsubara_terms if spec.decomposition == "matsubara" else _pade_terms
    ck, gk = maker(spec.lam, spec.gamma, spec.beta, count)
    if np.any(np.abs(gk * gk - spec.gamma * spec.gamma) < 1e-10 * spec.gamma * spec.gamma):
        raise ConfigError(
            "a decomposition frequency coincides with the bath cutoff; "
            "shift gamma or the temperature slightly"
        )
    return (
        np.concatenate(([c0], ck)),
        np.concatenate(([g0], gk)),
    )


def _assemble(spec: BathSpec, ck: np.ndarray, gk: np.ndarray, err: float) -> ExponentialBath:
    integral = np.sum(ck / gk)
    delta = 2.0 * spec.lam / (spec.beta * spec.gamma) - integral.real
    # only the leading term is complex, so the imaginary integral -lam is
    # carried exactly and the terminator stays real
    assert abs(integral.imag + spec.lam) <= 1e-10 * max(spec.lam, 1.0)
    return ExponentialBath(
        spec=spec,
        coefficients=ck,
        rates=gk,
        terminator_strength=float(delta),
        reconstruction_error=float(err),
    )


def _error_against_reference(ck, gk, grid: np.ndarray, ref: np.ndarray) -> float:
    scale = float(np.max(np.abs(ref)))
    if scale == 0.0:
        return 0.0
    approx = np.exp(-np.outer(grid, gk)) @ ck
    return float(np.max(np.abs(approx - ref)) / scale)


def _reject_cot_pole(gamma: float, beta: float) -> None:
    x = beta * gamma / (2.0 * math.pi)
    nearest = round(x)
    if nearest >= 1 and abs(x - nearest) <= _POLE_RTOL * max(1.0, x):
        raise ConfigError(
            f"beta*gamma/2 falls on a cot pole (beta*gamma/(2*pi) = {x:.9g}); "
            "shift gamma or the temperature slightly"
        )
