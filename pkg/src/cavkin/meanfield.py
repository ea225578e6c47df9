"""Mean-field factorization of many identical molecules in a lossy cavity.

In the large-N limit the coupled molecules-plus-cavity hierarchy reduces to
two self-consistently coupled single-subsystem hierarchies: one molecule
driven by the cavity displacement field and one cavity mode driven by the
collective molecular dipole.  The only communication channels are the two
scalar mean fields

    mu_M(t) = Tr[mu rho_M(t)],    f_c(t) = Tr[(b^+ + b) rho_c(t)].

The cavity sees the drive g w_c sqrt(N) mu_M (b^+ + b); the molecule sees
(g w_c / sqrt(N)) f_c mu plus, with the self-energy on, the cross-molecule
term 2 g^2 w_c (N-1)/N mu_M mu.  Molecule count enters only through those
prefactors, so N = 10000 serves as the documented infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .baths import BathSpec, decompose_debye
from .errors import ConfigError, ConvergenceError, NumericalError
from .heom import (
    HERMITICITY_TOL,
    TRACE_TOL,
    CHECKPOINT_FORMAT_VERSION,
    HierarchyState,
    _build_plan,
    build_hierarchy,
    hierarchy_from_payload,
    hierarchy_payload,
)
from .models import CavitySpec, MoleculeLevels, cavity_mode_operators
from .timeseries import TimeSeries

DEFAULT_N_MOLECULES = 10000.0

# Mean fields are expectations of Hermitian operators; larger imaginary
# parts mean the hierarchy state is corrupted
FIELD_IMAG_TOL = 1e-8

# Predictor/corrector field mismatch accepted per step, relative to the
# field magnitude, and how often a step may be halved before giving up
CORRECTOR_REL_TOL = 1e-8
MAX_STEP_HALVINGS = 10

# Combined population allowed in the top two Fock levels
FOCK_TAIL_TOL = 1e-6
MAX_FOCK = 600


@dataclass
class MeanFieldState:
    """Two coupled hierarchies plus the static operators that drive them.

    molecule / cavity are the HEOM hierarchies of the representative
    molecule (solvent bath) and the cavity mode (loss bath).  h_molecule
    already contains the self-interaction part of the dipole self-energy
    when that was requested at build time.
    """

    molecule: HierarchyState
    cavity: HierarchyState
    h_molecule: np.ndarray
    dipole: np.ndarray
    molecule_coupling_ops: tuple[np.ndarray, ...]
    omega_c: float
    g: float
    n_molecules: float
    dse: bool
    time: float = 0.0

    def __post_init__(self) -> None:
        dim = self.molecule.system_dim
        if self.h_molecule.shape != (dim, dim) or self.dipole.shape != (dim, dim):
            raise ConfigError(
                f"molecular operators must be ({dim}, {dim}) to match the hierarchy"
            )
        if not self.n_molecules >= 1.0:
            raise ConfigError(f"molecule count must be >= 1, got {self.n_molecules}")
        if not self.omega_c > 0.0:
            raise ConfigError(f"omega_c must be > 0, got {self.omega_c}")

    @property
    def n_fock(self) -> int:
        return self.cavity.system_dim

    @property
    def h_cavity(self) -> np.ndarray:
        h, _, _ = cavity_mode_operators(self.omega_c, self.n_fock)
        return h

    @property
    def x_cavity(self) -> np.ndarray:
        _, x, _ = cavity_mode_operators(self.omega_c, self.n_fock)
        return x

    @property
    def q_cavity(self) -> np.ndarray:
        _, _, q = cavity_mode_operators(self.omega_c, self.n_fock)
        return q

    def copy(self) -> "MeanFieldState":
        return replace(self, molecule=self.molecule.copy(), cavity=self.cavity.copy())


def _real_expectation(op: np.ndarray, rho: np.ndarray, what: str) -> float:
    value = np.einsum("ij,ji->", op, rho)
    if abs(value.imag) > FIELD_IMAG_TOL:
        raise NumericalError(
            f"{what} came out complex (imaginary part {value.imag:.3e}); "
            "the hierarchy state is corrupted"
        )
    return float(value.real)


def mean_fields(state: MeanFieldState) -> tuple[float, float]:
    """Self-consistent fields (mu_M, f_c) of the current state.

    mu_M is the molecular dipole expectation, f_c the cavity displacement
    expectation Tr[(b^+ + b) rho_c].  Both are expectations of Hermitian
    operators; an imaginary part above FIELD_IMAG_TOL raises.
    """
    mu_m = _real_expectation(state.dipole, state.molecule.root, "molecular dipole field")
    f_c = _real_expectation(state.x_cavity, state.cavity.root, "cavity displacement field")
    return mu_m, f_c


def cavity_occupation(state: MeanFieldState) -> float:
    """Photon number expectation of the cavity root ADO."""
    n_op = np.diag(np.arange(state.n_fock, dtype=float))
    return _real_expectation(n_op, state.cavity.root, "cavity occupation")


def _drive_coefficients(state: MeanFieldState, mu_m: float, f_c: float) -> tuple[float, float]:
    """Scalar prefactors of the molecular dipole and cavity displacement drives."""
    n = state.n_molecules
    root_n = math.sqrt(n)
    c_mol = state.g * state.omega_c / root_n * f_c
    if state.dse:
        c_mol += 2.0 * state.g**2 * state.omega_c * (n - 1.0) / n * mu_m
    c_cav = state.g * state.omega_c * root_n * mu_m
    return c_mol, c_cav


def _driven_rhs(plan, drive_op: np.ndarray, c0: float, c1: float):
    """HEOM right-hand side plus a linearly interpolated Hermitian drive."""

    def rhs(ados: np.ndarray, s: float) -> np.ndarray:
        out = plan(ados)
        c = c0 + (c1 - c0) * s
        if c != 0.0:
            out -= 1j * c * (drive_op @ ados - ados @ drive_op)
        return out

    return rhs


def _rk4(rhs, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = rhs(y, 0.0)
    k2 = rhs(y + (0.5 * dt) * k1, 0.5)
    k3 = rhs(y + (0.5 * dt) * k2, 0.5)
    k4 = rhs(y + dt * k3, 1.0)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _Plans:
    """Cached static HEOM plans for the two subsystems."""

    def __init__(self, state: MeanFieldState, deep_closure: bool = True):
        self.molecule = _build_plan(
            state.molecule, state.h_molecule, state.molecule_coupling_ops,
            deep_closure=deep_closure,
        )
        self.cavity = _build_plan(
            state.cavity, state.h_cavity, (state.q_cavity,),
            deep_closure=deep_closure,
        )
        self.x_cavity = state.x_cavity
        self.dipole = state.dipole


def _advance(state: MeanFieldState, plans: _Plans, dt: float,
             fields0: tuple[float, float], fields1: tuple[float, float]):
    c_m0, c_c0 = _drive_coefficients(state, *fields0)
    c_m1, c_c1 = _drive_coefficients(state, *fields1)
    mol = _rk4(_driven_rhs(plans.molecule, plans.dipole, c_m0, c_m1),
               state.molecule.ados, dt)
    cav = _rk4(_driven_rhs(plans.cavity, plans.x_cavity, c_c0, c_c1),
               state.cavity.ados, dt)
    return mol, cav


def _roots_fields(plans: _Plans, mol: np.ndarray, cav: np.ndarray) -> tuple[float, float]:
    mu_m = _real_expectation(plans.dipole, mol[0], "molecular dipole field")
    f_c = _real_expectation(plans.x_cavity, cav[0], "cavity displacement field")
    return mu_m, f_c


def _step(state: MeanFieldState, plans: _Plans, dt: float, halvings: int) -> MeanFieldState:
    fields0 = mean_fields(state)
    try:
        # predictor: hold the fields constant over the step
        mol_p, cav_p = _advance(state, plans, dt, fields0, fields0)
        fields_p = _roots_fields(plans, mol_p, cav_p)
        # corrector: interpolate fields linearly toward the predicted endpoint
        mol_c, cav_c = _advance(state, plans, dt, fields0, fields_p)
        fields_c = _roots_fields(plans, mol_c, cav_c)
        err = max(
            abs(fields_c[0] - fields_p[0]) / max(1.0, abs(fields0[0]), abs(fields_c[0])),
            abs(fields_c[1] - fields_p[1]) / max(1.0, abs(fields0[1]), abs(fields_c[1])),
        )
    except NumericalError:
        # the trial step blew up; not corruption, just too large a dt
        err = math.inf
    if err > CORRECTOR_REL_TOL:
        if halvings >= MAX_STEP_HALVINGS:
            raise ConvergenceError(
                f"mean-field corrector still off by {err:.2e} relative after "
                f"{MAX_STEP_HALVINGS} step halvings (dt down to {dt:.3e} a.u.)"
            )
        half = _step(state, plans, dt / 2.0, halvings + 1)
        return _step(half, plans, dt / 2.0, halvings + 1)

    new = state.copy()
    new.molecule.ados[...] = mol_c
    new.cavity.ados[...] = cav_c
    new.time = state.time + dt
    return new


def meanfield_step(state: MeanFieldState, dt: float, *, deep_closure: bool = True) -> MeanFieldState:
    """Advance both hierarchies by one predictor-corrector step.

    The mean fields are evaluated at the step start, the predictor holds
    them constant, and one corrector pass re-propagates with the fields
    interpolated linearly toward the predicted endpoint.  A corrector
    mismatch above CORRECTOR_REL_TOL recursively halves the step; running
    out of halvings raises ConvergenceError.
    """
    if not dt > 0.0:
        raise ConfigError(f"dt must be > 0, got {dt}")
    return _step(state, _Plans(state, deep_closure), dt, 0)


@dataclass
class MeanFieldResult:
    """Propagation output: observable series, final state, snapshots."""

    series: TimeSeries
    state: MeanFieldState
    snapshots: list[tuple[float, np.ndarray]]


def _check_roots(state: MeanFieldState, t: float) -> None:
    for name, root in (("molecular", state.molecule.root), ("cavity", state.cavity.root)):
        tr = np.trace(root)
        if abs(tr - 1.0) > TRACE_TOL:
            raise NumericalError(
                f"{name} root ADO trace drifted to {tr:.8f} at t = {t:.6g}; "
                "reduce dt or raise the hierarchy depth"
            )
        herm = float(np.max(np.abs(root - root.conj().T)))
        if herm > HERMITICITY_TOL:
            raise NumericalError(
                f"{name} root ADO Hermiticity deviation {herm:.2e} at t = {t:.6g}"
            )


def _check_fock_tail(state: MeanFieldState, t: float) -> None:
    pops = np.abs(np.diag(state.cavity.root).real)
    tail = float(pops[-2:].sum())
    if tail > FOCK_TAIL_TOL:
        raise ConvergenceError(
            f"cavity Fock ladder truncated: top-two level population "
            f"{tail:.2e} at t = {t:.6g} exceeds {FOCK_TAIL_TOL:g}; "
            f"raise n_fock above {state.n_fock}"
        )


def run_meanfield(
    state: MeanFieldState,
    t_max: float,
    dt: float,
    *,
    dt_out: float | None = None,
    side: np.ndarray | None = None,
    snapshot_every: int | None = None,
    checkpoint_path=None,
    checkpoint_every: int | None = None,
    deep_closure: bool = True,
    check_invariants: bool = True,
) -> MeanFieldResult:
    """Propagate the coupled mean-field equations on a uniform output grid.

    Records mu_M, f_c and the photon number on every output point; with a
    reactant-side matrix passed as ``side`` (molecular basis), P_R and P_P
    are recorded too.  ``dt`` is the mean-field synchronization step and
    must divide ``dt_out``.  Snapshots hold copies of the molecular root
    ADO for rate analysis.

    Raises
    ------
    ConvergenceError
        If the corrector cannot settle or the cavity Fock tail fills up.
    NumericalError
        If either root ADO leaves the trace/Hermiticity invariants.
    """
    t0 = state.time
    if dt_out is None:
        dt_out = dt
    if dt <= 0.0 or dt_out <= 0.0 or t_max <= t0:
        raise ConfigError("need dt > 0, dt_out > 0 and t_max > start time")
    n_sub = int(round(dt_out / dt))
    if n_sub == 0 or abs(n_sub * dt - dt_out) > 1e-9 * dt_out:
        raise ConfigError(f"dt_out = {dt_out:g} is not a multiple of dt = {dt:g}")
    n_out = int(round((t_max - t0) / dt_out))
    if n_out == 0 or abs(n_out * dt_out - (t_max - t0)) > 1e-6 * dt_out:
        raise ConfigError(
            f"t_max - t0 = {t_max - t0:g} is not a multiple of dt_out = {dt_out:g}"
        )

    side_mat = None
    if side is not None:
        side_mat = np.asarray(side, dtype=np.complex128)
        dim = state.molecule.system_dim
        if side_mat.shape != (dim, dim):
            raise ConfigError(f"side matrix must be ({dim}, {dim}), got {side_mat.shape}")

    plans = _Plans(state, deep_closure)
    work = state.copy()
    times = t0 + dt_out * np.arange(n_out + 1)
    names = ["mu_M", "f_c", "n_c"] + (["P_R", "P_P"] if side_mat is not None else [])
    records = {name: np.empty(n_out + 1) for name in names}
    snapshots: list[tuple[float, np.ndarray]] = []

    def record(k: int) -> None:
        mu_m, f_c = mean_fields(work)
        records["mu_M"][k] = mu_m
        records["f_c"][k] = f_c
        records["n_c"][k] = cavity_occupation(work)
        if side_mat is not None:
            p_r = _real_expectation(side_mat, work.molecule.root, "reactant population")
            records["P_R"][k] = p_r
            records["P_P"][k] = 1.0 - p_r
        if snapshot_every is not None and k % snapshot_every == 0:
            snapshots.append((float(times[k]), work.molecule.root.copy()))

    if check_invariants:
        _check_roots(work, t0)
        _check_fock_tail(work, t0)
    record(0)

    for k in range(1, n_out + 1):
        for _ in range(n_sub):
            work = _step(work, plans, dt, 0)
        work.time = times[k]  # pin against accumulation roundoff
        if check_invariants:
            _check_roots(work, times[k])
            _check_fock_tail(work, times[k])
        record(k)
        if checkpoint_path is not None and checkpoint_every is not None and k % checkpoint_every == 0:
            save_meanfield_checkpoint(checkpoint_path, work)

    series = TimeSeries(
        times=times,
        channels=records,
        meta={"time_unit": "fs", "source": "meanfield"},
    )
    return MeanFieldResult(series=series, state=work, snapshots=snapshots)


def thermal_cavity_density(
    omega_c: float, n_fock: int, beta: float, drive_coef: float = 0.0
) -> np.ndarray:
    """Boltzmann state of w_c b^+b + drive_coef (b^+ + b) in a Fock ladder.

    With a nonzero drive coefficient this is the displaced thermal state
    appropriate to a cavity equilibrated against a static collective
    dipole.
    """
    if not beta > 0.0:
        raise ConfigError(f"beta must be > 0, got {beta}")
    h, x, _ = cavity_mode_operators(omega_c, n_fock)
    h_eff = h + drive_coef * x
    evals, vecs = np.linalg.eigh(h_eff)
    w = np.exp(-beta * (evals - evals[0]))
    w /= w.sum()
    return (vecs * w) @ vecs.conj().T


def _fock_size_for(omega_c: float, beta: float, drive_coef: float, start: int) -> int:
    """Smallest ladder size whose initial thermal tail passes the gate."""
    n = max(start, 2)
    while n <= MAX_FOCK:
        rho = thermal_cavity_density(omega_c, n, beta, drive_coef)
        if float(np.abs(np.diag(rho).real)[-2:].sum()) < 0.1 * FOCK_TAIL_TOL:
            return n
        n = max(n + 2, int(n * 1.5))
    raise ConvergenceError(
        f"thermal cavity state needs more than {MAX_FOCK} Fock levels "
        f"(omega_c = {omega_c:g}, drive {drive_coef:g}); check the parameters"
    )


def build_meanfield_state(
    levels: MoleculeLevels,
    cavity: CavitySpec,
    rho_molecule: np.ndarray,
    *,
    beta: float,
    n_molecules: float = DEFAULT_N_MOLECULES,
    solvent: BathSpec | None = None,
    solvent_coupling: np.ndarray | None = None,
    depth: int = 3,
    cavity_depth: int = 3,
    correlated: bool = False,
    add_self_dse: bool = False,
) -> MeanFieldState:
    """Assemble the two hierarchies with thermal-consistent initial states.

    The molecular hierarchy starts factorized from ``rho_molecule`` with
    its solvent bath (coupled through ``solvent_coupling``, default the
    dipole operator, which coincides with the reaction coordinate for the
    double well).  The cavity starts in the thermal state of the bare mode
    (``correlated=False``: coupling switched on at t = 0) or of the mode
    displaced by the initial collective dipole (``correlated=True``),
    with the Fock ladder grown until the thermal tail is negligible.

    The mean-field reduction assumes identical aligned molecules at fixed
    collective coupling, so the cavity spec must use constant_rho scaling
    and carry no orientation list.  The dipole self-energy cross terms
    follow the ``cavity.dse`` flag; the single-molecule self term is off
    by default and enters the static Hamiltonian with ``add_self_dse``.
    """
    if cavity.coupling_scaling != "constant_rho":
        raise ConfigError(
            "mean-field reduction is defined for constant_rho scaling; "
            f"got {cavity.coupling_scaling!r}"
        )
    if cavity.orientations is not None:
        raise ConfigError(
            "mean-field reduction assumes identical aligned molecules; "
            "orientations cannot be specified"
        )
    if not beta > 0.0:
        raise ConfigError(f"beta must be > 0, got {beta}")

    dim = levels.dim
    rho0 = np.asarray(rho_molecule, dtype=np.complex128)
    if rho0.shape != (dim, dim):
        raise ConfigError(f"rho_molecule must be ({dim}, {dim}), got {rho0.shape}")

    g = cavity.g_or_eta
    h_mol = np.diag(levels.energies).astype(np.complex128)
    mu = levels.dipole.astype(np.complex128)
    if add_self_dse:
        h_mol = h_mol + (g**2 * cavity.omega_c / n_molecules) * (mu @ mu)

    mol_baths = []
    coupling = mu if solvent_coupling is None else np.asarray(solvent_coupling, dtype=np.complex128)
    if solvent is not None:
        if abs(solvent.beta - beta) > 1e-9 * beta:
            raise ConfigError(
                f"solvent bath temperature (beta = {solvent.beta:g}) disagrees "
                f"with the requested beta = {beta:g}"
            )
        mol_baths.append(decompose_debye(solvent))
    molecule = build_hierarchy(dim, mol_baths, depth if mol_baths else 0, rho0=rho0)

    mu0 = float(np.einsum("ij,ji->", mu, rho0).real)
    drive_eq = g * cavity.omega_c * math.sqrt(n_molecules) * mu0
    drive = drive_eq if correlated else 0.0
    # switched-on coupling rings the mode up to twice the equilibrium
    # displacement, so size the ladder for that excursion
    sizing_drive = drive_eq if correlated else 2.0 * drive_eq
    n_fock = _fock_size_for(cavity.omega_c, beta, sizing_drive, cavity.n_fock)
    rho_cav = thermal_cavity_density(cavity.omega_c, n_fock, beta, drive)

    cav_baths = []
    if cavity.loss is not None:
        if abs(cavity.loss.beta - beta) > 1e-9 * beta:
            raise ConfigError(
                f"cavity loss bath temperature (beta = {cavity.loss.beta:g}) "
                f"disagrees with the requested beta = {beta:g}"
            )
        cav_baths.append(decompose_debye(cavity.loss))
    cav = build_hierarchy(n_fock, cav_baths, cavity_depth if cav_baths else 0, rho0=rho_cav)

    return MeanFieldState(
        molecule=molecule,
        cavity=cav,
        h_molecule=h_mol,
        dipole=mu,
        molecule_coupling_ops=(coupling,),
        omega_c=cavity.omega_c,
        g=g,
        n_molecules=float(n_molecules),
        dse=cavity.dse,
    )


def save_meanfield_checkpoint(path, state: MeanFieldState) -> None:
    """Checkpoint both hierarchies and the scalar configuration."""
    payload = {
        "format_version": np.array(CHECKPOINT_FORMAT_VERSION),
        "t": np.array(state.time),
        "scalars": np.array(
            [state.omega_c, state.g, state.n_molecules, 1.0 if state.dse else 0.0]
        ),
        "h_molecule": state.h_molecule,
        "dipole": state.dipole,
        "n_mol_ops": np.array(len(state.molecule_coupling_ops)),
    }
    for i, op in enumerate(state.molecule_coupling_ops):
        payload[f"mol_op{i}"] = op
    payload.update(hierarchy_payload(state.molecule, "molecule_"))
    payload.update(hierarchy_payload(state.cavity, "cavity_"))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_meanfield_checkpoint(path) -> MeanFieldState:
    """Rebuild a MeanFieldState from save_meanfield_checkpoint output."""
    with np.load(path, allow_pickle=False) as blob:
        version = int(blob["format_version"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(
                f"checkpoint format version {version} is not supported "
                f"(expected {CHECKPOINT_FORMAT_VERSION})"
            )
        scalars = blob["scalars"]
        ops = tuple(blob[f"mol_op{i}"] for i in range(int(blob["n_mol_ops"])))
        return MeanFieldState(
            molecule=hierarchy_from_payload(blob, "molecule_"),
            cavity=hierarchy_from_payload(blob, "cavity_"),
            h_molecule=blob["h_molecule"],
            dipole=blob["dipole"],
            molecule_coupling_ops=ops,
            omega_c=float(scalars[0]),
            g=float(scalars[1]),
            n_molecules=float(scalars[2]),
            dse=bool(scalars[3]),
            time=float(blob["t"]),
        )
