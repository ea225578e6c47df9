"""Closed N-molecule + cavity wavefunction dynamics in truncated bases.

Ensembles of identical truncated molecules sharing one cavity mode,
evolved as pure states: matrix-free Hamiltonian application over the
tensor-product structure, uncorrelated and correlated ground-state
preparation, side-side correlation functions and cavity occupation
traces.  A permutation-symmetric bosonic engine covers molecule counts
whose raw product space no longer fits in memory; it requires equal
orientation cosines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericalError
from .models import (
    CavitySpec,
    MoleculeLevels,
    _coupling_prefactors,
    cavity_mode_operators,
    orientation_cosines,
    sample_orientation_cosines,
)
from .quantum import (
    CompositeSpace,
    HilbertSpace,
    StateVector,
    apply_embedded,
    krylov_propagate,
    lowest_eigenpair_iterative,
)
from .timeseries import TimeSeries
from .units import au_to_fs

__all__ = [
    "DEFAULT_LEVELS",
    "DEFAULT_N_FOCK",
    "STATE_DIM_BUDGET",
    "TruncatedEnsemble",
    "PreparedState",
    "build_ensemble",
    "prepare_uncorrelated",
    "prepare_correlated_ground",
    "side_side_correlation",
    "cavity_number_trace",
    "truncation_drift",
    "sample_orientation_cosines",
]

DEFAULT_LEVELS = 6
DEFAULT_N_FOCK = 20
# cap on the flattened state size so the Krylov basis buffers stay in RAM
STATE_DIM_BUDGET = 2_000_000
PREPARED_KINDS = ("uncorrelated", "correlated_ground")
GROUND_RESIDUAL_TOL = 1e-8
NORM_DRIFT_TOL = 1e-8
ENERGY_DRIFT_TOL = 1e-6
PROJECTED_NORM_FLOOR = 1e-12
TRUNCATION_DRIFT_TOL = 0.01
PROPAGATOR_TOL = 1e-10
PROPAGATOR_DIM = 28


def _compositions(total: int, parts: int) -> list[tuple[int, ...]]:
    """Occupation tuples of `parts` levels holding `total` quanta.

    Ordered with the first level filled greedily, so (total, 0, ..., 0)
    is always entry 0.
    """
    if parts == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            out.append((first,) + rest)
    return out


def _one_body_collective(matrix: np.ndarray, occupations: list[tuple[int, ...]]) -> np.ndarray:
    """Sum over molecules of a one-molecule operator, in the bosonic basis.

    For identical molecules the permutation-symmetric sector is spanned by
    level-occupation states; sum_i A_i acts on it as the second-quantized
    one-body operator sum_kl A_kl a_k^dag a_l.
    """
    index_of = {occ: i for i, occ in enumerate(occupations)}
    n_levels = matrix.shape[0]
    out = np.zeros((len(occupations), len(occupations)))
    for col, occ in enumerate(occupations):
        for l in range(n_levels):
            n_l = occ[l]
            if n_l == 0:
                continue
            out[col, col] += matrix[l, l].real * n_l
            for k in range(n_levels):
                if k == l or matrix[k, l] == 0.0:
                    continue
                moved = list(occ)
                moved[l] -= 1
                moved[k] += 1
                row = index_of[tuple(moved)]
                out[row, col] += matrix[k, l].real * math.sqrt((occ[k] + 1) * n_l)
    return out


def _reactant_projector(side: np.ndarray) -> tuple[np.ndarray, float]:
    """Nearest true projector to a truncated side indicator.

    Level truncation denatures the grid Heaviside into an operator with
    eigenvalues inside [0, 1]; correlators need an idempotent projection,
    so eigenvalues are rounded to {0, 1}.  The largest rounding distance
    is returned as a truncation-quality diagnostic.
    """
    evals, vecs = np.linalg.eigh(side)
    keep = evals > 0.5
    deviation = float(np.max(np.abs(evals - keep)))
    sub = vecs[:, keep]
    return sub @ sub.conj().T, deviation


def _symmetric_product_amplitudes(occupations: list[tuple[int, ...]], coeffs: np.ndarray) -> np.ndarray:
    """Amplitudes of the N-fold product state phi^(x)N in the bosonic basis.

    For |phi> = sum_k c_k |k>, the symmetric-sector amplitude on occupation
    n is sqrt(N!/prod n_k!) prod c_k^(n_k).
    """
    n_total = sum(occupations[0])
    amps = np.empty(len(occupations), dtype=complex)
    for i, occ in enumerate(occupations):
        w = float(math.factorial(n_total))
        term = 1.0 + 0.0j
        for k, n_k in enumerate(occ):
            if n_k:
                w /= math.factorial(n_k)
                term *= coeffs[k] ** n_k
        amps[i] = math.sqrt(w) * term
    return amps


@dataclass(frozen=True)
class TruncatedEnsemble:
    """N identical truncated molecules plus one cavity mode, closed.

    The product engine stores the state on the factor ordering
    (molecules..., cavity); the symmetric engine on (collective
    occupation, cavity).  static_diag is the coupling-free Hamiltonian
    diagonal in the chosen basis; the light-matter terms are applied
    matrix-free through the collective dipole.
    """

    molecule: MoleculeLevels
    cavity: CavitySpec
    n_molecules: int
    engine: str
    cosines: np.ndarray
    coupling_prefactor: float
    dse_prefactor: float
    space: CompositeSpace
    shape: tuple[int, ...]
    static_diag: np.ndarray
    cavity_x: np.ndarray
    side_projector: np.ndarray
    side_rounding: float
    collective_dipole: np.ndarray | None = None
    collective_side: np.ndarray | None = None
    occupations: tuple[tuple[int, ...], ...] | None = None

    @property
    def dim(self) -> int:
        return self.static_diag.size

    @property
    def n_levels(self) -> int:
        return self.molecule.dim

    @property
    def n_fock(self) -> int:
        return self.cavity.n_fock

    @property
    def _cavity_factor(self) -> int:
        return len(self.shape) - 1

    def apply_collective_dipole(self, psi: np.ndarray) -> np.ndarray:
        """sum_i cos_i mu_i applied matrix-free."""
        if self.engine == "symmetric":
            return apply_embedded(self.collective_dipole, 0, self.shape, psi)
        mu = self.molecule.dipole
        out = self.cosines[0] * apply_embedded(mu, 0, self.shape, psi)
        for i in range(1, self.n_molecules):
            out += self.cosines[i] * apply_embedded(mu, i, self.shape, psi)
        return out

    def apply_hamiltonian(self, psi: np.ndarray) -> np.ndarray:
        """H applied matrix-free: static diagonal + coupling + self-energy."""
        out = self.static_diag * psi
        if self.coupling_prefactor == 0.0 and self.dse_prefactor == 0.0:
            return out
        coll = self.apply_collective_dipole(psi)
        if self.coupling_prefactor != 0.0:
            out += self.coupling_prefactor * apply_embedded(
                self.cavity_x, self._cavity_factor, self.shape, coll
            )
        if self.dse_prefactor != 0.0:
            out += self.dse_prefactor * self.apply_collective_dipole(coll)
        return out

    def apply_side(self, index: int | None, psi: np.ndarray) -> np.ndarray:
        """Reactant projector of one molecule, or the ensemble mean for None.

        In the symmetric engine single-molecule operators only make sense
        averaged over the ensemble; permutation symmetry of the evolved
        states makes that average equal every single-molecule expectation,
        so any index returns the mean there.
        """
        if index is not None and not 0 <= index < self.n_molecules:
            raise ConfigError(
                f"molecule index {index} out of range for {self.n_molecules} molecules"
            )
        if self.engine == "symmetric":
            return apply_embedded(self.collective_side, 0, self.shape, psi)
        if index is not None:
            return apply_embedded(self.side_projector, index, self.shape, psi)
        out = apply_embedded(self.side_projector, 0, self.shape, psi)
        for i in range(1, self.n_molecules):
            out += apply_embedded(self.side_projector, i, self.shape, psi)
        return out / self.n_molecules

    def apply_side_all(self, psi: np.ndarray) -> np.ndarray:
        """Product of every molecule's reactant indicator (product engine)."""
        if self.engine == "symmetric":
            raise ConfigError(
                "the collective engine carries the all-reactant projection "
                "only for product initial states; use the product engine"
            )
        out = psi
        for j in range(self.n_molecules):
            out = apply_embedded(self.side_projector, j, self.shape, out)
        return out

    def photon_number_diag(self) -> np.ndarray:
        """Cavity occupation numbers along the flattened state."""
        n = np.arange(self.n_fock, dtype=float)
        return np.broadcast_to(n, self.shape).reshape(-1).copy()

    def energy_expectation(self, psi: np.ndarray) -> float:
        return float(np.real(np.vdot(psi, self.apply_hamiltonian(psi))))


def build_ensemble(
    molecule: MoleculeLevels,
    cavity: CavitySpec,
    n_molecules: int,
    *,
    engine: str = "auto",
    dim_budget: int = STATE_DIM_BUDGET,
) -> TruncatedEnsemble:
    """Set up the closed-dynamics engine for N copies of one molecule.

    Parameters
    ----------
    molecule : MoleculeLevels
        The truncated single-molecule model (m >= 2 retained levels).
    cavity : CavitySpec
        Mode parameters, coupling convention and orientations.
    n_molecules : int
        Ensemble size N.
    engine : str
        "product" for the raw m^N * n_fock space, "symmetric" for the
        permutation-symmetric bosonic sector (needs equal cosines), or
        "auto" to take the product space while it fits dim_budget.
    dim_budget : int
        Largest flattened state size the engines may allocate.

    Raises
    ------
    ConfigError
        If the requested engine cannot represent the ensemble or the
        state would exceed the budget.
    """
    if molecule.dim < 2:
        raise ConfigError(f"need at least 2 molecular levels, got {molecule.dim}")
    if not isinstance(n_molecules, int) or n_molecules < 1:
        raise ConfigError(f"n_molecules must be a positive integer, got {n_molecules!r}")
    if engine not in ("auto", "product", "symmetric"):
        raise ConfigError(f"unknown engine {engine!r}")

    m = molecule.dim
    nf = cavity.n_fock
    cos = orientation_cosines(cavity, n_molecules)
    lam, dse_coef = _coupling_prefactors(cavity, n_molecules)
    dse_pref = dse_coef if cavity.dse else 0.0
    product_dim = m**n_molecules * nf
    aligned = bool(np.ptp(cos) == 0.0)

    if engine == "auto":
        engine = "product" if product_dim <= dim_budget else "symmetric"
    if engine == "symmetric" and not aligned:
        raise ConfigError(
            "the symmetric engine needs identical orientation cosines; "
            f"got spread {np.ptp(cos):g} (product space would need "
            f"{product_dim} amplitudes)"
        )

    _, x_local, _ = cavity_mode_operators(cavity.omega_c, nf)
    photon = cavity.omega_c * np.arange(nf, dtype=float)
    side_proj, side_dev = _reactant_projector(molecule.side)

    if engine == "product":
        if product_dim > dim_budget:
            raise ConfigError(
                f"product space of {n_molecules} x {m}-level molecules and "
                f"{nf} photon states has {product_dim} amplitudes "
                f"(> budget {dim_budget}); retain fewer levels or use the "
                "symmetric engine"
            )
        shape = (m,) * n_molecules + (nf,)
        diag = np.zeros(shape)
        for i in range(n_molecules):
            diag += molecule.energies.reshape(
                (1,) * i + (m,) + (1,) * (n_molecules - i)
            )
        diag += photon.reshape((1,) * n_molecules + (nf,))
        factors = tuple(
            HilbertSpace(f"{molecule.label}[{i}]", m, "eigenstate")
            for i in range(n_molecules)
        )
        space = CompositeSpace(factors + (HilbertSpace("cavity", nf, "fock"),))
        return TruncatedEnsemble(
            molecule=molecule, cavity=cavity, n_molecules=n_molecules,
            engine="product", cosines=cos, coupling_prefactor=lam,
            dse_prefactor=dse_pref, space=space, shape=shape,
            static_diag=diag.reshape(-1), cavity_x=x_local,
            side_projector=side_proj, side_rounding=side_dev,
        )

    occupations = _compositions(n_molecules, m)
    d_sym = len(occupations)
    if d_sym * nf > dim_budget:
        raise ConfigError(
            f"symmetric sector of {n_molecules} x {m}-level molecules and "
            f"{nf} photon states has {d_sym * nf} amplitudes (> budget {dim_budget})"
        )
    coll_mu = cos[0] * _one_body_collective(molecule.dipole, occupations)
    coll_side = _one_body_collective(side_proj, occupations) / n_molecules
    energy_diag = np.array([
        float(np.dot(occ, molecule.energies)) for occ in occupations
    ])
    diag = energy_diag[:, None] + photon[None, :]
    space = CompositeSpace((
        HilbertSpace("collective", d_sym, "occupation"),
        HilbertSpace("cavity", nf, "fock"),
    ))
    return TruncatedEnsemble(
        molecule=molecule, cavity=cavity, n_molecules=n_molecules,
        engine="symmetric", cosines=cos, coupling_prefactor=lam,
        dse_prefactor=dse_pref, space=space, shape=(d_sym, nf),
        static_diag=diag.reshape(-1), cavity_x=x_local,
        side_projector=side_proj, side_rounding=side_dev,
        collective_dipole=coll_mu, collective_side=coll_side,
        occupations=tuple(occupations),
    )


@dataclass(frozen=True)
class PreparedState:
    """Normalized initial wavefunction with its preparation provenance."""

    psi: StateVector
    kind: str
    energy: float

    def __post_init__(self) -> None:
        if self.kind not in PREPARED_KINDS:
            raise ConfigError(f"kind must be one of {PREPARED_KINDS}, got {self.kind!r}")
        if abs(self.psi.norm - 1.0) > 1e-9:
            raise ConfigError(f"prepared state must be normalized, norm = {self.psi.norm}")


def prepare_uncorrelated(ensemble: TruncatedEnsemble) -> PreparedState:
    """Product of bare molecular ground states with the cavity vacuum.

    The coupling is switched on at t = 0; the quoted energy is the full
    Hamiltonian expectation, so it includes the dipole self-energy of
    the bare product state when that term is active.
    """
    amps = np.zeros(ensemble.dim, dtype=complex)
    # ground occupation is entry 0 in both engines, as is the Fock vacuum
    amps[0] = 1.0
    energy = ensemble.energy_expectation(amps)
    return PreparedState(StateVector(ensemble.space, amps), "uncorrelated", energy)


def prepare_correlated_ground(
    ensemble: TruncatedEnsemble,
    *,
    tol: float = 1e-10,
    max_restarts: int = 200,
) -> PreparedState:
    """Joint ground state of molecules + cavity by restarted Lanczos.

    Matrix-free; the uncorrelated product state seeds the iteration.
    Raises NumericalError with the residual when the eigensolver stalls
    or the final residual exceeds GROUND_RESIDUAL_TOL.
    """
    guess = np.zeros(ensemble.dim, dtype=complex)
    guess[0] = 1.0
    energy, vec, _ = lowest_eigenpair_iterative(
        ensemble.apply_hamiltonian, guess, tol=tol, max_restarts=max_restarts
    )
    residual = float(np.linalg.norm(ensemble.apply_hamiltonian(vec) - energy * vec))
    if residual > GROUND_RESIDUAL_TOL * max(1.0, abs(energy)):
        raise NumericalError(
            f"correlated ground state residual {residual:.2e} exceeds "
            f"{GROUND_RESIDUAL_TOL:g} (energy {energy:.10g})"
        )
    return PreparedState(StateVector(ensemble.space, vec), "correlated_ground", float(energy))


def _output_times(t_max: float, dt_out: float, t0: float = 0.0) -> np.ndarray:
    if dt_out <= 0.0 or t_max <= t0:
        raise ConfigError("need dt_out > 0 and t_max > 0")
    n_out = int(round((t_max - t0) / dt_out))
    if n_out == 0 or abs(n_out * dt_out - (t_max - t0)) > 1e-6 * dt_out:
        raise ConfigError(f"t_max = {t_max:g} is not a multiple of dt_out = {dt_out:g}")
    return t0 + dt_out * np.arange(n_out + 1)


class _DriftGuard:
    """Norm check per output point, energy check at the end of a run."""

    def __init__(self, ensemble: TruncatedEnsemble, psi: np.ndarray, label: str):
        self.ensemble = ensemble
        self.label = label
        self.energy0 = ensemble.energy_expectation(psi)

    def check_norm(self, psi: np.ndarray, t: float) -> None:
        drift = abs(float(np.linalg.norm(psi)) - 1.0)
        if drift > NORM_DRIFT_TOL:
            raise NumericalError(
                f"{self.label} norm drifted by {drift:.2e} at t = {au_to_fs(t):.6g} fs"
            )

    def check_energy(self, psi: np.ndarray) -> None:
        energy = self.ensemble.energy_expectation(psi)
        scale = max(abs(self.energy0), 1e-12)
        drift = abs(energy - self.energy0) / scale
        if drift > ENERGY_DRIFT_TOL:
            raise NumericalError(
                f"{self.label} energy drifted by {drift:.2e} relative "
                f"({self.energy0:.10g} -> {energy:.10g})"
            )


def _projected_initial(ensemble: TruncatedEnsemble, psi: PreparedState) -> tuple[np.ndarray, float]:
    """All-reactant projection of the prepared state, renormalized.

    Returns (normalized amplitudes, norm of the projection).  The
    symmetric engine projects the uncorrelated product state in closed
    form; other kinds need the product engine.
    """
    amps = np.asarray(psi.psi.amplitudes, dtype=complex)
    if ensemble.engine == "product":
        projected = ensemble.apply_side_all(amps)
    else:
        if psi.kind != "uncorrelated":
            raise ConfigError(
                "the symmetric engine projects only the uncorrelated start "
                "onto the reactant side; use the product engine for "
                f"kind = {psi.kind!r}"
            )
        grid = amps.reshape(ensemble.shape)
        cavity_part = grid[0, :]
        rest = float(np.linalg.norm(grid[1:, :]))
        if rest > 1e-9:
            raise ConfigError(
                "uncorrelated state has weight outside the ground occupation"
            )
        phi = ensemble.side_projector[:, 0]  # reactant part of the ground level
        mol_amps = _symmetric_product_amplitudes(list(ensemble.occupations), phi)
        projected = np.outer(mol_amps, cavity_part).reshape(-1)
    norm = float(np.linalg.norm(projected))
    if norm < PROJECTED_NORM_FLOOR:
        raise ConfigError(
            f"initial state carries no reactant amplitude (projection norm {norm:.2e})"
        )
    return projected / norm, norm


def side_side_correlation(
    ensemble: TruncatedEnsemble,
    psi: PreparedState,
    molecule_index: int | None,
    t_max: float,
    dt_out: float,
    *,
    propagator_tol: float = PROPAGATOR_TOL,
    krylov_dim: int = PROPAGATOR_DIM,
) -> TimeSeries:
    """Reactant persistence correlator of one molecule.

    Evolves |psi_1> = |psi> and the renormalized all-reactant projection
    |psi_2> independently and records the overlap through molecule
    ``molecule_index``'s reactant projector, scaled back by the carried
    projection norm.  ``molecule_index=None`` records the ensemble mean
    over molecules in the same single pass (the disorder observable).
    Channels: corr_re / corr_im (raw correlator) and corr_norm (divided
    by the t = 0 value, the plotted form).

    Raises
    ------
    ConfigError
        If the index is out of range or the state has no reactant weight.
    NumericalError
        On norm or energy conservation failures during the evolution.
    """
    if molecule_index is not None and not 0 <= molecule_index < ensemble.n_molecules:
        raise ConfigError(
            f"molecule index {molecule_index} out of range for "
            f"{ensemble.n_molecules} molecules"
        )
    times = _output_times(t_max, dt_out)
    psi1 = np.asarray(psi.psi.amplitudes, dtype=complex)
    psi2, carried_norm = _projected_initial(ensemble, psi)

    guard1 = _DriftGuard(ensemble, psi1, "reference wavefunction")
    guard2 = _DriftGuard(ensemble, psi2, "projected wavefunction")

    raw = np.empty(times.size, dtype=complex)

    def record(k: int) -> None:
        raw[k] = carried_norm * np.vdot(psi1, ensemble.apply_side(molecule_index, psi2))

    record(0)
    for k in range(1, times.size):
        psi1 = krylov_propagate(
            ensemble.apply_hamiltonian, psi1, dt_out, tol=propagator_tol, max_dim=krylov_dim
        )
        psi2 = krylov_propagate(
            ensemble.apply_hamiltonian, psi2, dt_out, tol=propagator_tol, max_dim=krylov_dim
        )
        guard1.check_norm(psi1, times[k])
        guard2.check_norm(psi2, times[k])
        record(k)
    guard1.check_energy(psi1)
    guard2.check_energy(psi2)

    c0 = raw[0].real
    channels = {
        "corr_re": raw.real,
        "corr_im": raw.imag,
        "corr_norm": raw.real / c0,
    }
    meta = {
        "time_unit": "fs",
        "source": "closed",
        "engine": ensemble.engine,
        "n_molecules": str(ensemble.n_molecules),
        "molecule_index": "mean" if molecule_index is None else str(molecule_index),
        "initial_kind": psi.kind,
    }
    return TimeSeries(times, channels, meta)


def cavity_number_trace(
    ensemble: TruncatedEnsemble,
    psi: PreparedState,
    t_max: float,
    dt_out: float,
    *,
    propagator_tol: float = PROPAGATOR_TOL,
    krylov_dim: int = PROPAGATOR_DIM,
) -> TimeSeries:
    """Cavity occupation ⟨n_c⟩ along the closed evolution of one state.

    The dipole-gauge number operator, not a photodetector count.
    """
    times = _output_times(t_max, dt_out)
    state = np.asarray(psi.psi.amplitudes, dtype=complex)
    number = ensemble.photon_number_diag()
    guard = _DriftGuard(ensemble, state, "wavefunction")

    values = np.empty(times.size)
    values[0] = float(np.real(np.vdot(state, number * state)))
    for k in range(1, times.size):
        state = krylov_propagate(
            ensemble.apply_hamiltonian, state, dt_out, tol=propagator_tol, max_dim=krylov_dim
        )
        guard.check_norm(state, times[k])
        values[k] = float(np.real(np.vdot(state, number * state)))
    guard.check_energy(state)

    meta = {
        "time_unit": "fs",
        "source": "closed",
        "engine": ensemble.engine,
        "n_molecules": str(ensemble.n_molecules),
        "initial_kind": psi.kind,
    }
    return TimeSeries(times, {"n_c": values}, meta)


def _prepare(ensemble: TruncatedEnsemble, kind: str) -> PreparedState:
    if kind == "uncorrelated":
        return prepare_uncorrelated(ensemble)
    if kind == "correlated_ground":
        return prepare_correlated_ground(ensemble)
    raise ConfigError(f"kind must be one of {PREPARED_KINDS}, got {kind!r}")


def truncation_drift(
    molecule_factory,
    cavity: CavitySpec,
    n_molecules: int,
    t_max: float,
    dt_out: float,
    *,
    kind: str = "uncorrelated",
    molecule_index: int = 0,
    n_levels: int = DEFAULT_LEVELS,
    n_fock: int = DEFAULT_N_FOCK,
    engine: str = "auto",
    dim_budget: int = STATE_DIM_BUDGET,
) -> dict[str, float]:
    """Basis-truncation sensitivity of the side-side correlator.

    Reruns the correlator with two more molecular levels and with a 50%
    larger Fock ladder and reports the relative change of the normalized
    correlator for each refinement (max deviation over the window divided
    by the max magnitude).  ``molecule_factory(n_levels)`` must return the
    truncated molecule.  Results below TRUNCATION_DRIFT_TOL count as
    converged; callers gate reported results on that.
    """
    def run(m: int, nf: int) -> np.ndarray:
        ens = build_ensemble(
            molecule_factory(m), replace(cavity, n_fock=nf), n_molecules,
            engine=engine, dim_budget=dim_budget,
        )
        series = side_side_correlation(
            ens, _prepare(ens, kind), molecule_index, t_max, dt_out
        )
        return series.channels["corr_norm"]

    base = run(n_levels, n_fock)
    scale = float(np.max(np.abs(base)))
    more_levels = run(n_levels + 2, n_fock)
    more_fock = run(n_levels, int(math.ceil(1.5 * n_fock)))
    return {
        "levels_drift": float(np.max(np.abs(more_levels - base))) / scale,
        "fock_drift": float(np.max(np.abs(more_fock - base))) / scale,
    }
