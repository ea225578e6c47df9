"""Molecular models, the cavity mode, and the light-matter assembly.

Two molecule builders are provided. The first is a symmetric quartic double
well in a mass-weighted coordinate, whose tunneling doublet defines localized
left/right well states. The second is an asymmetric proton-transfer path: two
diabatic wells bridged by a Gaussian coupling, reduced to the lower adiabatic
root, with a spectator mode that rides along its displaced minimum and so
drops out of the path energetics entirely.

Both are discretized on Colbert-Miller grids and reduced to a small
vibrational eigenbasis (MoleculeLevels). assemble_light_matter combines any
number of such molecules with a single cavity mode in either of two collective
conventions: "constant_rho" keeps the molecule density fixed (per-molecule
coupling g/sqrt(N), N-independent polariton splitting) while "constant_V"
keeps the mode volume fixed (per-molecule coupling eta_c, splitting growing as
sqrt(N)). The dipole self-energy term is a toggle; when on it carries the full
double sum over molecules, so it stays exact at finite N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .baths import BathSpec
from .errors import ConfigError
from .quantum import (
    CompositeSpace,
    HilbertSpace,
    Operator,
    StateVector,
    colbert_miller_kinetic,
    diagonalize,
    embed,
)
from .units import HARTREE_TO_CM

COUPLING_SCALINGS = ("constant_rho", "constant_V")

# Mass-weighted reaction coordinate for the quartic well.
MODEL1_MASS = 1.0

# Placeholder barrier numbers, tuned so the well fundamental sits near
# 1185 1/cm. They are config inputs, not authoritative constants: treat any
# quantitative statement tied to them as conditional on these choices.
DEFAULT_OMEGA_B = 1000.0 / HARTREE_TO_CM
DEFAULT_E_B = 2250.0 / HARTREE_TO_CM

# Retained eigenfunctions must fall below this amplitude at the grid edges.
EDGE_DECAY_TOL = 1e-8
_GRID_POINTS_PER_SIGMA = 8.0
_GRID_WIDEN_FACTOR = 1.35
_GRID_MAX_ATTEMPTS = 6

# Dense product-space assembly refuses to allocate past this many bytes.
ASSEMBLY_MEMORY_BUDGET = 3_000_000_000


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _finite_positive(value: float, name: str) -> None:
    _require(math.isfinite(value) and value > 0.0, f"{name} must be positive and finite, got {value}")


@dataclass(frozen=True)
class Model1Params:
    """Symmetric quartic double well in a mass-weighted coordinate (a.u.).

    Parameters
    ----------
    omega_b : float
        Barrier frequency (a.u.). Sets the curvature at the barrier top.
    e_b : float
        Barrier height (a.u.). Wells sit at +-r_min = +-2*sqrt(e_b)/omega_b
        with depth -e_b.
    n_vib : int
        Number of vibrational eigenstates retained, at least the tunneling
        doublet.
    temperature : float
        Temperature in kelvin, used downstream for thermal preparations.
    solvent : BathSpec or None
        Dissipative environment of the reaction coordinate; the coordinate
        operator itself is the coupling operator.
    """

    omega_b: float = DEFAULT_OMEGA_B
    e_b: float = DEFAULT_E_B
    n_vib: int = 4
    temperature: float = 300.0
    solvent: BathSpec | None = None

    def __post_init__(self):
        _finite_positive(self.omega_b, "omega_b")
        _finite_positive(self.e_b, "e_b")
        _require(isinstance(self.n_vib, int) and self.n_vib >= 2,
                 f"n_vib must be an integer >= 2 (the tunneling doublet), got {self.n_vib}")
        _finite_positive(self.temperature, "temperature")
        if self.solvent is not None and not isinstance(self.solvent, BathSpec):
            raise ConfigError(f"solvent must be a BathSpec, got {type(self.solvent).__name__}")

    @property
    def r_min(self) -> float:
        """Position of the well minima (a.u.)."""
        return 2.0 * math.sqrt(self.e_b) / self.omega_b


@dataclass(frozen=True)
class Model2Params:
    """Proton-transfer reaction path with an eliminated spectator mode (a.u.).

    The path potential is the lower root of a 2x2 diabatic pair (labelled oh
    and sh for the donor and acceptor wells) bridged by a Gaussian coupling of
    strength k_c centered at q_0. The spectator mode of mass mass_spec sits at
    its displaced minimum a_q*q^2 + b_q*q^3 for every q, so it contributes
    nothing to the path energetics; its parameters are kept because they
    define the underlying two-dimensional surface.

    The dipole is linear, mu_0 + mu_1*(q - q_0). Defaults are the literal
    model constants and should not normally be overridden.
    """

    mass_q: float = 1914.028
    mass_spec: float = 8622.241
    omega_spec: float = 0.0009728
    a_q: float = 0.794
    b_q: float = -0.2688
    k_c: float = 0.15582
    q_0: float = 0.2872
    m_oh: float = 1728.46
    omega_oh: float = 0.01487
    q_oh: float = -0.7181
    delta_oh: float = 0.0
    m_sh: float = 1781.32
    omega_sh: float = 0.01247
    q_sh: float = 1.2094
    delta_sh: float = 0.003583
    mu_0: float = 1.68
    mu_1: float = -0.129
    n_grid: int = 120
    q_min: float = -1.5
    q_max: float = 2.1

    def __post_init__(self):
        for name in ("mass_q", "mass_spec", "omega_spec", "k_c", "m_oh", "omega_oh", "m_sh", "omega_sh"):
            _finite_positive(getattr(self, name), name)
        _require(isinstance(self.n_grid, int) and self.n_grid >= 8,
                 f"n_grid must be an integer >= 8, got {self.n_grid}")
        _require(self.q_min < self.q_oh < self.q_sh < self.q_max,
                 "grid must bracket both wells: require q_min < q_oh < q_sh < q_max, "
                 f"got {self.q_min}, {self.q_oh}, {self.q_sh}, {self.q_max}")


def model1_potential(p: Model1Params, r: np.ndarray | float) -> np.ndarray | float:
    """Quartic double well: V(r) = omega_b^4 r^4 / (16 e_b) - omega_b^2 r^2 / 2."""
    r2 = np.square(r)
    return p.omega_b**4 * r2 * r2 / (16.0 * p.e_b) - 0.5 * p.omega_b**2 * r2


def model2_diabatic_wells(p: Model2Params, q: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
    """Donor and acceptor diabatic well potentials at q."""
    v_oh = 0.5 * p.m_oh * p.omega_oh**2 * np.square(q - p.q_oh) + p.delta_oh
    v_sh = 0.5 * p.m_sh * p.omega_sh**2 * np.square(q - p.q_sh) + p.delta_sh
    return v_oh, v_sh


def model2_coupling(p: Model2Params, q: np.ndarray | float) -> np.ndarray | float:
    """Gaussian diabatic coupling K(q) = k_c exp(-(q - q_0)^2)."""
    return p.k_c * np.exp(-np.square(q - p.q_0))


def model2_potential(p: Model2Params, q: np.ndarray | float) -> np.ndarray | float:
    """Lower adiabatic root of the two diabatic wells."""
    v_oh, v_sh = model2_diabatic_wells(p, q)
    k = model2_coupling(p, q)
    return 0.5 * (v_oh + v_sh) - 0.5 * np.sqrt(np.square(v_oh - v_sh) + 4.0 * np.square(k))


def model2_dipole(p: Model2Params, q: np.ndarray | float) -> np.ndarray | float:
    """Linear dipole mu(q) = mu_0 + mu_1 (q - q_0)."""
    return p.mu_0 + p.mu_1 * (q - p.q_0)


def spectator_displacement(p: Model2Params, q: np.ndarray | float) -> np.ndarray | float:
    """Equilibrium spectator-mode displacement a_q q^2 + b_q q^3 along the path."""
    q2 = np.square(q)
    return p.a_q * q2 + p.b_q * q2 * q


def model2_dividing_point(p: Model2Params) -> float:
    """Barrier-top position of the path potential between the two wells (a.u.).

    The reactant region is the donor side, q below this point.
    """
    res = scipy.optimize.minimize_scalar(
        lambda q: -model2_potential(p, q),
        bounds=(p.q_oh, p.q_sh),
        method="bounded",
        options={"xatol": 1e-12},
    )
    q_star = float(res.x)
    span = p.q_sh - p.q_oh
    if not (p.q_oh + 1e-6 * span < q_star < p.q_sh - 1e-6 * span):
        raise ConfigError(
            f"no interior barrier top between the wells: maximum found at q = {q_star:.6f} "
            f"with wells at {p.q_oh} and {p.q_sh}"
        )
    return q_star


@dataclass(frozen=True)
class MoleculeLevels:
    """One molecule reduced to its lowest vibrational eigenstates.

    energies are the eigenvalues (a.u.), dipole and side the dipole operator
    and reactant-side indicator projected into that eigenbasis. The indicator
    is an exact projector only in the full grid basis; after truncation its
    eigenvalues lie within [0, 1] but it is no longer idempotent.
    """

    energies: np.ndarray
    dipole: np.ndarray
    side: np.ndarray
    label: str = "molecule"

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        if e.ndim != 1 or e.size < 1:
            raise ConfigError(f"energies must be a non-empty 1-d array, got shape {e.shape}")
        if np.any(np.diff(e) < 0.0):
            raise ConfigError("energies must be sorted ascending")
        m = e.size
        for name in ("dipole", "side"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (m, m):
                raise ConfigError(f"{name} must have shape ({m}, {m}), got {a.shape}")
            scale = np.abs(a).max() or 1.0
            if np.abs(a - a.T).max() > 1e-10 * scale:
                raise ConfigError(f"{name} must be symmetric in the real eigenbasis")
            a = np.array(a)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        side_evals = np.linalg.eigvalsh(self.side)
        if side_evals.min() < -1e-9 or side_evals.max() > 1.0 + 1e-9:
            raise ConfigError(
                f"side indicator eigenvalues must lie in [0, 1], got range "
                f"[{side_evals.min():.3e}, {side_evals.max():.3e}]"
            )
        e = np.array(e)
        e.flags.writeable = False
        object.__setattr__(self, "energies", e)

    @property
    def dim(self) -> int:
        return self.energies.size

    @property
    def hamiltonian(self) -> np.ndarray:
        return np.diag(self.energies)

    @property
    def transition_energy(self) -> float:
        """Fundamental gap E1 - E0 (a.u.)."""
        if self.dim < 2:
            raise ConfigError("need at least two levels for a transition energy")
        return float(self.energies[1] - self.energies[0])

    @property
    def transition_dipole(self) -> float:
        """Signed dipole matrix element between the two lowest levels."""
        if self.dim < 2:
            raise ConfigError("need at least two levels for a transition dipole")
        return float(self.dipole[0, 1])

    def space(self, label: str | None = None) -> HilbertSpace:
        return HilbertSpace(label or self.label, self.dim, "eigenstate")

    def truncated(self, n_levels: int) -> "MoleculeLevels":
        _require(1 <= n_levels <= self.dim,
                 f"n_levels must be in 1..{self.dim}, got {n_levels}")
        return MoleculeLevels(
            self.energies[:n_levels],
            self.dipole[:n_levels, :n_levels],
            self.side[:n_levels, :n_levels],
            self.label,
        )


def _real_eigenvectors(vectors: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(vectors)
    if np.abs(v.imag).max() > 1e-12:
        raise ConfigError(f"{what} eigenvectors should be real, got imaginary parts up to {np.abs(v.imag).max():.1e}")
    return np.array(v.real)


def _orient_by_superdiagonal(vectors: np.ndarray, weight: np.ndarray, negative_first: bool = False) -> np.ndarray:
    """Fix eigenvector signs through the dipole superdiagonal.

    Column i is flipped so that <i-1|diag(weight)|i> is nonnegative; with
    negative_first the 0-1 element is made nonpositive instead, which is the
    choice that localizes (v0+v1)/sqrt(2) on the negative-coordinate side.
    """
    out = np.array(vectors)
    for i in range(1, out.shape[1]):
        elem = float(out[:, i - 1] @ (weight * out[:, i]))
        want_negative = negative_first and i == 1
        if (elem > 0.0) == want_negative:
            out[:, i] = -out[:, i]
    return out


def _project_into(vectors: np.ndarray, diag_weight: np.ndarray) -> np.ndarray:
    return vectors.T @ (diag_weight[:, None] * vectors)


@dataclass(frozen=True)
class Model1Molecule:
    """Quartic-well molecule in its truncated vibrational eigenbasis.

    v_left and v_right are the localized combinations (v0 +- v1)/sqrt(2) of
    the tunneling doublet and delta their coupling (E1 - E0)/2. grid and
    edge_amplitude record the automatically sized grid and how far the
    retained eigenfunctions had decayed at its edges.
    """

    space: HilbertSpace
    hamiltonian: Operator
    dipole: Operator
    v_left: StateVector
    v_right: StateVector
    delta: float
    energies: np.ndarray
    levels: MoleculeLevels
    grid: np.ndarray
    edge_amplitude: float


def build_model1_molecule(p: Model1Params) -> Model1Molecule:
    """Construct the quartic-well molecule in its vibrational eigenbasis.

    The grid is sized automatically: the wells sit at +-r_min with ground
    width sigma = (sqrt(2) m omega_b)^(-1/2), the grid half-width starts at
    r_min + 10 sigma and widens until every retained eigenvector amplitude
    falls below 1e-8 at the edges. An even point count keeps the grid
    symmetric with no point at the barrier top, so the side indicator is
    unambiguous.

    Sign convention: v1 is oriented so (v0+v1)/sqrt(2) localizes in the left
    well (0-1 dipole element nonpositive); higher states have nonnegative
    dipole superdiagonal elements.
    """
    sigma = 1.0 / math.sqrt(MODEL1_MASS * math.sqrt(2.0) * p.omega_b)
    half = p.r_min + 10.0 * sigma
    dx_target = sigma / _GRID_POINTS_PER_SIGMA
    edge = math.inf
    for _ in range(_GRID_MAX_ATTEMPTS):
        n = max(64, int(math.ceil(2.0 * half / dx_target)))
        n += n % 2
        grid = np.linspace(-half, half, n)
        kin = colbert_miller_kinetic(grid, MODEL1_MASS)
        h_grid = Operator(kin.space, kin.matrix + np.diag(model1_potential(p, grid)), hermitian=True)
        energies, vectors = diagonalize(h_grid, n_lowest=p.n_vib)
        vectors = _real_eigenvectors(vectors, "double-well")
        edge = float(np.abs(vectors[[0, -1], :]).max())
        if edge < EDGE_DECAY_TOL:
            break
        half *= _GRID_WIDEN_FACTOR
    else:
        raise ConfigError(
            f"lowest {p.n_vib} eigenfunctions still reach amplitude {edge:.1e} at the grid "
            f"edges; extend the grid beyond +-{half:.1f} bohr (tolerance {EDGE_DECAY_TOL:.0e})"
        )
    vectors = _orient_by_superdiagonal(vectors, grid, negative_first=True)
    dipole = _project_into(vectors, grid)
    side = _project_into(vectors, (grid < 0.0).astype(float))
    delta = 0.5 * (energies[1] - energies[0])
    if delta <= 0.0:
        raise ConfigError(f"tunneling doublet is not split, E1 - E0 = {energies[1] - energies[0]:.3e}")
    levels = MoleculeLevels(energies, dipole, side, label="double_well")
    space = levels.space()
    amp = np.zeros(p.n_vib)
    amp[0] = amp[1] = 1.0 / math.sqrt(2.0)
    v_left = StateVector(space, amp.copy())
    amp[1] = -amp[1]
    v_right = StateVector(space, amp)
    return Model1Molecule(
        space=space,
        hamiltonian=Operator(space, np.diag(energies), hermitian=True),
        dipole=Operator(space, dipole, hermitian=True),
        v_left=v_left,
        v_right=v_right,
        delta=float(delta),
        energies=levels.energies,
        levels=levels,
        grid=grid,
        edge_amplitude=edge,
    )


@dataclass(frozen=True)
class Model2Molecule:
    """Proton-transfer molecule on its position grid.

    hamiltonian and dipole are grid-basis operators; potential holds the path
    potential evaluated on space.grid.
    """

    space: HilbertSpace
    hamiltonian: Operator
    dipole: Operator
    potential: np.ndarray
    params: Model2Params


def build_model2_molecule(p: Model2Params) -> Model2Molecule:
    """Construct the proton-transfer molecule on its literal grid."""
    grid = np.linspace(p.q_min, p.q_max, p.n_grid)
    kin = colbert_miller_kinetic(grid, p.mass_q)
    v = np.asarray(model2_potential(p, grid), dtype=float)
    h = Operator(kin.space, kin.matrix + np.diag(v), hermitian=True)
    mu = Operator(kin.space, np.diag(model2_dipole(p, grid)), hermitian=True)
    v = np.array(v)
    v.flags.writeable = False
    return Model2Molecule(space=kin.space, hamiltonian=h, dipole=mu, potential=v, params=p)


def truncate_model2(mol: Model2Molecule, n_levels: int) -> MoleculeLevels:
    """Reduce the grid molecule to its lowest eigenstates.

    Signs follow the nonnegative dipole superdiagonal convention, which makes
    the fundamental transition dipole positive. The reactant side indicator
    covers the donor side of the barrier top.
    """
    _require(2 <= n_levels <= mol.space.dim,
             f"n_levels must be in 2..{mol.space.dim}, got {n_levels}")
    energies, vectors = diagonalize(mol.hamiltonian, n_lowest=n_levels)
    vectors = _real_eigenvectors(vectors, "proton-transfer")
    mu_diag = np.real(np.diag(mol.dipole.matrix))
    vectors = _orient_by_superdiagonal(vectors, mu_diag)
    q_star = model2_dividing_point(mol.params)
    grid = mol.space.grid
    side = _project_into(vectors, (grid < q_star).astype(float))
    return MoleculeLevels(energies, _project_into(vectors, mu_diag), side, label="proton_transfer")


@dataclass(frozen=True)
class CavitySpec:
    """Single cavity mode and how it couples to the molecules.

    Parameters
    ----------
    omega_c : float
        Photon frequency (a.u.).
    n_fock : int
        Number basis size for the mode.
    loss : BathSpec or None
        Dissipative environment of the mode; the coupling operator is the
        mode displacement q_c.
    coupling_scaling : str
        "constant_rho" (fixed molecule density, per-molecule coupling
        g_or_eta/sqrt(N)) or "constant_V" (fixed mode volume, per-molecule
        coupling g_or_eta).
    g_or_eta : float
        Coupling constant in inverse-dipole atomic units. Under
        "constant_rho" this is the collective constant g; under "constant_V"
        the per-molecule constant eta_c.
    dse : bool
        Include the dipole self-energy double sum.
    orientations : sequence or None
        Per-molecule orientation, either cosines of the angle to the field
        polarization in [-1, 1] or unit 3-vectors (polarization along z).
        None means all molecules aligned. Stored in cosine form.
    """

    omega_c: float
    n_fock: int = 30
    loss: BathSpec | None = None
    coupling_scaling: str = "constant_rho"
    g_or_eta: float = 0.0
    dse: bool = True
    orientations: tuple[float, ...] | None = None

    def __post_init__(self):
        _finite_positive(self.omega_c, "omega_c")
        _require(isinstance(self.n_fock, int) and self.n_fock >= 2,
                 f"n_fock must be an integer >= 2, got {self.n_fock}")
        if self.loss is not None and not isinstance(self.loss, BathSpec):
            raise ConfigError(f"loss must be a BathSpec, got {type(self.loss).__name__}")
        _require(self.coupling_scaling in COUPLING_SCALINGS,
                 f"coupling_scaling must be one of {COUPLING_SCALINGS}, got {self.coupling_scaling!r}")
        _require(math.isfinite(self.g_or_eta), f"g_or_eta must be finite, got {self.g_or_eta}")
        if self.orientations is not None:
            object.__setattr__(self, "orientations", _canonical_cosines(self.orientations))


def _canonical_cosines(orientations: Sequence) -> tuple[float, ...]:
    out = []
    for item in orientations:
        arr = np.asarray(item, dtype=float)
        if arr.ndim == 0:
            c = float(arr)
            if abs(c) > 1.0 + 1e-12:
                raise ConfigError(f"orientation cosine {c} lies outside [-1, 1]")
            out.append(min(1.0, max(-1.0, c)))
        elif arr.shape == (3,):
            norm = float(np.linalg.norm(arr))
            if abs(norm - 1.0) > 1e-8:
                raise ConfigError(f"orientation vectors must be unit length, got |n| = {norm:.6f}")
            out.append(float(arr[2]))
        else:
            raise ConfigError(
                f"orientations must be scalars or length-3 vectors, got shape {arr.shape}"
            )
    return tuple(out)


def orientation_cosines(cavity: CavitySpec, n_molecules: int) -> np.ndarray:
    """Per-molecule cosines to the field polarization, defaulting to aligned."""
    if cavity.orientations is None:
        return np.ones(n_molecules)
    if len(cavity.orientations) != n_molecules:
        raise ConfigError(
            f"got {len(cavity.orientations)} orientations for {n_molecules} molecules"
        )
    return np.array(cavity.orientations, dtype=float)


def sample_orientation_cosines(n_molecules: int, seed: int) -> tuple[float, ...]:
    """Isotropically random orientations: cosines uniform on [-1, 1]."""
    rng = np.random.default_rng(seed)
    return tuple(float(c) for c in rng.uniform(-1.0, 1.0, size=n_molecules))


def fock_lowering(n_fock: int) -> np.ndarray:
    """Lowering operator of the mode in the number basis."""
    return np.diag(np.sqrt(np.arange(1.0, n_fock)), 1)


def cavity_mode_operators(omega_c: float, n_fock: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cavity Hamiltonian, quadrature b^dag + b, and displacement q_c.

    The Hamiltonian counts quanta (omega_c * n); the displacement is the
    quadrature over sqrt(2 omega_c), which is the operator loss baths and the
    field expectation refer to.
    """
    low = fock_lowering(n_fock)
    x = low + low.T
    h = omega_c * np.diag(np.arange(n_fock, dtype=float))
    return h, x, x / math.sqrt(2.0 * omega_c)


def _coupling_prefactors(cavity: CavitySpec, n_molecules: int) -> tuple[float, float]:
    """Linear coupling and self-energy prefactors for the chosen scaling."""
    g = cavity.g_or_eta
    if cavity.coupling_scaling == "constant_rho":
        return g * cavity.omega_c / math.sqrt(n_molecules), g * g * cavity.omega_c / n_molecules
    return g * cavity.omega_c, g * g * cavity.omega_c


@dataclass(frozen=True)
class AssembledModel:
    """Dense product-space light-matter Hamiltonian.

    The space orders molecule factors first and the cavity last. h_molecular,
    mu_ops and side_ops are the per-molecule operators lifted into the product
    space; with zero coupling and the self-energy off, h_total is exactly the
    accumulated sum of the lifted molecular terms and the cavity term.
    coupling_prefactor multiplies (b^dag + b) * sum_i cos_i mu_i and
    dse_prefactor multiplies (sum_i cos_i mu_i)^2.
    """

    space: CompositeSpace
    h_total: Operator
    h_molecular: tuple[Operator, ...]
    mu_ops: tuple[Operator, ...]
    h_cavity: Operator
    q_c: Operator
    side_ops: tuple[Operator, ...]
    molecules: tuple[MoleculeLevels, ...]
    cavity: CavitySpec
    cosines: np.ndarray
    coupling_prefactor: float
    dse_prefactor: float

    @property
    def n_molecules(self) -> int:
        return len(self.molecules)


def assemble_light_matter(
    molecules: Sequence[MoleculeLevels],
    cavity: CavitySpec,
    n_molecules: int | None = None,
) -> AssembledModel:
    """Combine molecules and the cavity mode into one dense Hamiltonian.

    Parameters
    ----------
    molecules : sequence of MoleculeLevels
        One entry per molecule, already reduced to the levels that should
        enter the product space.
    cavity : CavitySpec
        Mode parameters, coupling convention, and orientations.
    n_molecules : int, optional
        Cross-check against len(molecules); defaults to that length.

    Raises
    ------
    ConfigError
        On molecule/orientation count mismatches or when the dense product
        space would exceed the assembly memory budget.
    """
    mols = tuple(molecules)
    n = len(mols) if n_molecules is None else n_molecules
    _require(n >= 1, "need at least one molecule")
    _require(n == len(mols), f"n_molecules = {n} but {len(mols)} molecules were given")
    cos = orientation_cosines(cavity, n)

    dim = cavity.n_fock
    for m in mols:
        dim *= m.dim
    # lifted ops held at once: per-molecule h/mu/side plus h_total, cavity pair
    n_arrays = 3 * n + 4
    need = n_arrays * dim * dim * 16
    if need > ASSEMBLY_MEMORY_BUDGET:
        raise ConfigError(
            f"dense assembly of {n} molecules x {cavity.n_fock} photon states needs a "
            f"{dim}-dimensional product space ({need / 1e9:.1f} GB > "
            f"{ASSEMBLY_MEMORY_BUDGET / 1e9:.1f} GB); retain fewer levels or use the "
            f"collective engines"
        )

    factors = [HilbertSpace(f"{m.label}[{i}]", m.dim, "eigenstate") for i, m in enumerate(mols)]
    cav_space = HilbertSpace("cavity", cavity.n_fock, "fock")
    space = CompositeSpace(tuple(factors) + (cav_space,))
    cav_index = n

    h_cav_local, x_local, q_local = cavity_mode_operators(cavity.omega_c, cavity.n_fock)
    h_cavity = embed(Operator(cav_space, h_cav_local, hermitian=True), cav_index, space)
    x_c = embed(Operator(cav_space, x_local, hermitian=True), cav_index, space)
    q_c = embed(Operator(cav_space, q_local, hermitian=True), cav_index, space)

    h_mol, mu_ops, side_ops = [], [], []
    for i, m in enumerate(mols):
        h_mol.append(embed(Operator(factors[i], m.hamiltonian, hermitian=True), i, space))
        mu_ops.append(embed(Operator(factors[i], m.dipole, hermitian=True), i, space))
        side_ops.append(embed(Operator(factors[i], m.side, hermitian=True), i, space))

    lam, dse_coef = _coupling_prefactors(cavity, n)

    total = h_mol[0].matrix.copy()
    for op in h_mol[1:]:
        total += op.matrix
    total += h_cavity.matrix
    if lam != 0.0 or (cavity.dse and dse_coef != 0.0):
        collective = cos[0] * mu_ops[0].matrix
        for c, op in zip(cos[1:], mu_ops[1:]):
            collective += c * op.matrix
        if lam != 0.0:
            total += lam * (x_c.matrix @ collective)
        if cavity.dse and dse_coef != 0.0:
            total += dse_coef * (collective @ collective)

    return AssembledModel(
        space=space,
        h_total=Operator(space, total, hermitian=True),
        h_molecular=tuple(h_mol),
        mu_ops=tuple(mu_ops),
        h_cavity=h_cavity,
        q_c=q_c,
        side_ops=tuple(side_ops),
        molecules=mols,
        cavity=cavity,
        cosines=cos,
        coupling_prefactor=lam,
        dse_prefactor=dse_coef if cavity.dse else 0.0,
    )


def rabi_splitting(model: AssembledModel) -> float:
    """Polariton splitting of the assembled model in 1/cm.

    Every molecule is restricted to its lowest two levels and the Hamiltonian
    rebuilt. The single-excitation manifold is spanned by the raising
    operators (one photon, or one molecule promoted to its first excited
    level) applied to the true ground state rather than to the bare vacuum:
    permanent dipoles displace the mode into a polaron state, and measuring
    excitation character in that displaced frame keeps the identification
    stable. The returned gap separates the two eigenstates with the largest
    weight on the photon-raised ground state; each of the pair must carry at
    least half of its weight on the single-excitation manifold, otherwise the
    identification is ambiguous and the candidate table is reported.
    """
    sub = assemble_light_matter(tuple(m.truncated(2) for m in model.molecules), model.cavity)
    evals, evecs = scipy.linalg.eigh(sub.h_total.matrix)
    ground = evecs[:, 0]

    space = sub.space
    n = sub.n_molecules
    raise_local = np.array([[0.0, 0.0], [1.0, 0.0]])
    targets = [embed(Operator(space.factors[n], fock_lowering(sub.cavity.n_fock).T), n, space).matrix @ ground]
    for k in range(n):
        targets.append(embed(Operator(space.factors[k], raise_local), k, space).matrix @ ground)
    t = np.stack(targets, axis=1)
    t -= np.outer(ground, ground @ t)
    basis, _ = np.linalg.qr(t)
    photon_target = t[:, 0]
    photon_target = photon_target / np.linalg.norm(photon_target)

    photon_weight = np.abs(photon_target @ evecs) ** 2
    single_weight = np.sum(np.abs(basis.T @ evecs) ** 2, axis=0)
    order = np.argsort(photon_weight)[::-1]
    pair = order[:2]
    if np.any(single_weight[pair] < 0.5):
        rows = [
            f"  E = {evals[k] * HARTREE_TO_CM:12.3f} /cm   photon {photon_weight[k]:6.3f}   "
            f"single-excitation {single_weight[k]:6.3f}"
            for k in order[:5]
        ]
        raise ConfigError(
            "polariton identification ambiguous: the largest-photon-weight states carry "
            "less than half their weight on the single-excitation manifold\n" + "\n".join(rows)
        )
    return float(abs(evals[pair[0]] - evals[pair[1]]) * HARTREE_TO_CM)


def eta_from_dimensionless(eta: float, mu_10: float) -> float:
    """Convert a dimensionless coupling to the inverse-dipole constant g.

    The dimensionless strength is defined relative to the fundamental
    transition dipole, so g = eta / mu_10.
    """
    _require(math.isfinite(eta), f"eta must be finite, got {eta}")
    _require(math.isfinite(mu_10), f"mu_10 must be finite, got {mu_10}")
    if mu_10 == 0.0:
        raise ConfigError("mu_10 must be nonzero to convert a dimensionless coupling")
    return eta / mu_10
