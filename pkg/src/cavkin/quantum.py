"""Finite-dimensional quantum mechanics on grids, eigenbases and Fock spaces.

Spaces are labelled and typed so that operators cannot silently cross between
incompatible bases. Operators store plain dense matrices; the dynamics modules
work on raw arrays internally and wrap results back into these types at the
interfaces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
import scipy.linalg

from .errors import NumericalError

BASIS_KINDS = ("dvr_grid", "eigenstate", "fock", "occupation")

HERMITICITY_RTOL = 1e-12
DENSITY_HERM_TOL = 1e-10
DENSITY_TRACE_TOL = 1e-8
DENSITY_EIGVAL_FLOOR = -1e-8


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class HilbertSpace:
    """A single factor space with a labelled basis.

    grid is required for basis_kind "dvr_grid" and must be uniformly spaced.
    """

    label: str
    dim: int
    basis_kind: str
    grid: np.ndarray | None = None

    def __post_init__(self):
        if self.basis_kind not in BASIS_KINDS:
            raise ValueError(f"unknown basis_kind {self.basis_kind!r}, expected one of {BASIS_KINDS}")
        if self.dim < 1:
            raise ValueError(f"space dimension must be positive, got {self.dim}")
        if self.basis_kind == "dvr_grid":
            if self.grid is None:
                raise ValueError("dvr_grid space requires a grid")
            grid = np.asarray(self.grid, dtype=float)
            if grid.ndim != 1 or grid.size != self.dim:
                raise ValueError(f"grid shape {grid.shape} does not match dim {self.dim}")
            object.__setattr__(self, "grid", _readonly(grid))
        elif self.grid is not None:
            raise ValueError(f"grid is only meaningful for dvr_grid spaces, not {self.basis_kind!r}")

    @property
    def spacing(self) -> float:
        if self.grid is None:
            raise ValueError("space has no grid")
        deltas = np.diff(self.grid)
        if not np.allclose(deltas, deltas[0], rtol=1e-10, atol=0.0):
            raise ValueError(f"grid is not uniform, spacings range {deltas.min()}..{deltas.max()}")
        return float(deltas[0])

    def __eq__(self, other):
        if not isinstance(other, HilbertSpace):
            return NotImplemented
        if (self.label, self.dim, self.basis_kind) != (other.label, other.dim, other.basis_kind):
            return False
        if self.grid is None:
            return other.grid is None
        return other.grid is not None and np.array_equal(self.grid, other.grid)

    def __hash__(self):
        return hash((self.label, self.dim, self.basis_kind))


@dataclass(frozen=True)
class CompositeSpace:
    """Ordered tensor product of factor spaces."""

    factors: tuple[HilbertSpace, ...]

    def __post_init__(self):
        if not self.factors:
            raise ValueError("composite space needs at least one factor")
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def dim(self) -> int:
        out = 1
        for f in self.factors:
            out *= f.dim
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.dim for f in self.factors)


Space = Union[HilbertSpace, CompositeSpace]


def _check_square(matrix: np.ndarray, space: Space) -> np.ndarray:
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"operator matrix must be square, got shape {m.shape}")
    if m.shape[0] != space.dim:
        raise ValueError(f"matrix dim {m.shape[0]} does not match space dim {space.dim}")
    return m


@dataclass(frozen=True)
class Operator:
    """A dense operator tied to a space.

    With hermitian=True the constructor enforces max|A - A^dag| <= 1e-12
    relative to max|A|.
    """

    space: Space
    matrix: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        m = _check_square(self.matrix, self.space).astype(complex)
        if self.hermitian:
            scale = np.abs(m).max() or 1.0
            dev = np.abs(m - m.conj().T).max()
            if dev > HERMITICITY_RTOL * scale:
                raise ValueError(
                    f"operator declared hermitian but max|A - A^dag| = {dev:.3e} "
                    f"exceeds {HERMITICITY_RTOL:.0e} * max|A| = {HERMITICITY_RTOL * scale:.3e}"
                )
        object.__setattr__(self, "matrix", _readonly(m))

    def expectation(self, state: "StateVector | DensityOperator") -> complex:
        if isinstance(state, StateVector):
            return complex(state.amplitudes.conj() @ (self.matrix @ state.amplitudes))
        return complex(np.trace(self.matrix @ state.matrix))

    def __matmul__(self, other: "Operator") -> "Operator":
        if self.space.dim != other.space.dim:
            raise ValueError("operator dimensions do not match")
        return Operator(self.space, self.matrix @ other.matrix)


@dataclass(frozen=True)
class StateVector:
    """A pure state. Amplitudes are stored as written, norm is not enforced."""

    space: Space
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex)
        if a.ndim != 1 or a.size != self.space.dim:
            raise ValueError(f"amplitude shape {a.shape} does not match space dim {self.space.dim}")
        object.__setattr__(self, "amplitudes", _readonly(a))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        n = self.norm
        if n == 0.0:
            raise NumericalError("cannot normalize a zero state vector")
        return StateVector(self.space, self.amplitudes / n)

    def density(self) -> "DensityOperator":
        psi = self.normalized().amplitudes
        return DensityOperator(self.space, np.outer(psi, psi.conj()))


@dataclass(frozen=True)
class DensityOperator:
    """A physical density matrix: hermitian, unit trace, positive within tolerance."""

    space: Space
    matrix: np.ndarray

    def __post_init__(self):
        m = _check_square(self.matrix, self.space).astype(complex)
        scale = np.abs(m).max() or 1.0
        herm_dev = np.abs(m - m.conj().T).max()
        if herm_dev > DENSITY_HERM_TOL * scale:
            raise ValueError(f"density matrix not hermitian, max deviation {herm_dev:.3e}")
        tr = np.trace(m)
        if abs(tr - 1.0) > DENSITY_TRACE_TOL:
            raise ValueError(f"density matrix trace {tr} deviates from 1 by more than {DENSITY_TRACE_TOL:.0e}")
        evals = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
        if evals.min() < DENSITY_EIGVAL_FLOOR:
            raise ValueError(f"density matrix has negative eigenvalue {evals.min():.3e}")
        object.__setattr__(self, "matrix", _readonly(m))

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix))


MatVec = Callable[[np.ndarray], np.ndarray]


def _as_matvec(h: "Operator | np.ndarray | MatVec") -> MatVec:
    if isinstance(h, Operator):
        mat = h.matrix
        return lambda v: mat @ v
    if isinstance(h, np.ndarray):
        return lambda v: h @ v
    if callable(h):
        return h
    raise TypeError(f"cannot interpret {type(h)} as a Hamiltonian")


def colbert_miller_kinetic(grid: np.ndarray, mass: float) -> Operator:
    """Kinetic energy operator on a uniform grid in the sinc DVR.

    Diagonal elements are pi^2 / (6 m dx^2), off-diagonal elements
    (-1)^(i-j) / (m dx^2 (i-j)^2).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be one-dimensional with at least two points")
    deltas = np.diff(grid)
    if not np.allclose(deltas, deltas[0], rtol=1e-10, atol=0.0):
        raise ValueError(
            f"Colbert-Miller DVR needs a uniform grid, spacings range "
            f"{deltas.min():.6e}..{deltas.max():.6e}"
        )
    if mass <= 0.0:
        raise ValueError(f"mass must be positive, got {mass}")
    n = grid.size
    dx = float(deltas[0])
    idx = np.arange(n)
    diff = idx[:, None] - idx[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(diff == 0, np.pi**2 / 3.0, 2.0 * (-1.0) ** diff / diff.astype(float) ** 2)
    t /= 2.0 * mass * dx * dx
    space = HilbertSpace(label="q", dim=n, basis_kind="dvr_grid", grid=grid)
    return Operator(space, t, hermitian=True)


def fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude component is real positive.

    Magnitude ties are broken by the lowest index, which keeps the convention
    deterministic.
    """
    out = np.array(vectors, dtype=complex)
    for j in range(out.shape[1]):
        col = out[:, j]
        k = int(np.argmax(np.abs(col)))
        pivot = col[k]
        if pivot == 0.0:
            continue
        out[:, j] = col * (np.conj(pivot) / abs(pivot))
    return out


def diagonalize(op: Operator, n_lowest: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a hermitian operator, ascending eigenvalues.

    Returns (energies, vectors) with vectors in columns, phases fixed so the
    largest-magnitude component of each vector is real and positive.
    """
    m = op.matrix
    scale = np.abs(m).max() or 1.0
    if np.abs(m - m.conj().T).max() > HERMITICITY_RTOL * scale:
        raise ValueError("diagonalize requires a hermitian operator")
    energies, vectors = scipy.linalg.eigh(m)
    if n_lowest is not None:
        if not 1 <= n_lowest <= energies.size:
            raise ValueError(f"n_lowest must be in 1..{energies.size}, got {n_lowest}")
        energies = energies[:n_lowest]
        vectors = vectors[:, :n_lowest]
    return energies, fix_phases(vectors)


def _lanczos(matvec: MatVec, v0: np.ndarray, m_max: int, tol_break: float = 1e-13):
    """Lanczos tridiagonalization with full reorthogonalization.

    Returns (alphas, betas, basis) with basis rows spanning the Krylov space.
    Stops early on an invariant subspace.
    """
    n = v0.size
    basis = np.empty((m_max, n), dtype=complex)
    alphas = np.empty(m_max)
    betas = np.empty(m_max)
    basis[0] = v0 / np.linalg.norm(v0)
    k = 0
    for k in range(m_max):
        w = matvec(basis[k])
        if not np.all(np.isfinite(w)):
            raise NumericalError("non-finite values in Lanczos iteration")
        a = float(np.real(np.vdot(basis[k], w)))
        alphas[k] = a
        w = w - a * basis[k]
        if k > 0:
            w = w - betas[k - 1] * basis[k - 1]
        proj = basis[: k + 1].conj() @ w
        w = w - basis[: k + 1].T @ proj
        b = float(np.linalg.norm(w))
        betas[k] = b
        if b < tol_break * max(1.0, abs(a)):
            return alphas[: k + 1], betas[: k + 1], basis[: k + 1]
        if k + 1 < m_max:
            basis[k + 1] = w / b
    return alphas[: k + 1], betas[: k + 1], basis[: k + 1]


def _expm_tridiag_column(alphas: np.ndarray, betas_off: np.ndarray, dt: float) -> np.ndarray:
    """First column of exp(-i dt T) for a real symmetric tridiagonal T."""
    if alphas.size == 1:
        return np.array([np.exp(-1j * dt * alphas[0])])
    evals, evecs = scipy.linalg.eigh_tridiagonal(alphas, betas_off)
    return evecs @ (np.exp(-1j * dt * evals) * evecs[0])


def krylov_propagate(
    hamiltonian: "Operator | np.ndarray | MatVec",
    psi: "StateVector | np.ndarray",
    dt: float,
    tol: float = 1e-10,
    max_dim: int = 64,
) -> "StateVector | np.ndarray":
    """Propagate psi by exp(-i H dt) in an adaptively grown Krylov space.

    The Krylov dimension grows until the update of the propagated coefficient
    vector drops below tol; if the cap max_dim is reached the step is halved
    recursively. Accepts an Operator, a dense matrix or a matvec callable for
    matrix-free use.
    """
    matvec = _as_matvec(hamiltonian)
    wrap = isinstance(psi, StateVector)
    v = np.asarray(psi.amplitudes if wrap else psi, dtype=complex)
    if not np.all(np.isfinite(v)):
        raise NumericalError("non-finite amplitudes passed to krylov_propagate")
    if np.linalg.norm(v) == 0.0:
        raise NumericalError("cannot propagate a zero state")

    def step(v: np.ndarray, dt: float, depth: int) -> np.ndarray:
        if depth > 40:
            raise NumericalError("krylov_propagate step subdivision did not converge")
        nv = np.linalg.norm(v)
        basis = np.empty((max_dim, v.size), dtype=complex)
        basis[0] = v / nv
        alphas = np.empty(max_dim)
        betas = np.empty(max_dim)
        prev = None
        for k in range(max_dim):
            w = matvec(basis[k])
            if not np.all(np.isfinite(w)):
                raise NumericalError("non-finite amplitudes during Krylov propagation")
            a = float(np.real(np.vdot(basis[k], w)))
            alphas[k] = a
            w = w - a * basis[k]
            if k > 0:
                w = w - betas[k - 1] * basis[k - 1]
            proj = basis[: k + 1].conj() @ w
            w = w - basis[: k + 1].T @ proj
            b = float(np.linalg.norm(w))
            betas[k] = b
            coef = _expm_tridiag_column(alphas[: k + 1], betas[:k], dt)
            if b < 1e-14 * max(1.0, abs(a)):
                return nv * (basis[: k + 1].T @ coef)
            if prev is not None:
                err = float(np.linalg.norm(coef[:-1] - prev))
                tail = abs(coef[-1]) * abs(b * dt)
                if err < tol and tail < tol:
                    return nv * (basis[: k + 1].T @ coef)
            prev = coef
            if k + 1 < max_dim:
                basis[k + 1] = w / b
        half = step(v, dt / 2.0, depth + 1)
        return step(half, dt / 2.0, depth + 1)

    out = step(v, dt, 0)
    return StateVector(psi.space, out) if wrap else out


def arnoldi_propagate(
    generator: "Operator | np.ndarray | MatVec",
    y: np.ndarray,
    dt: float,
    tol: float = 1e-10,
    max_dim: int = 40,
) -> np.ndarray:
    """Apply exp(dt G) to y for a general (non-Hermitian) linear generator.

    Krylov counterpart of krylov_propagate for generators that are not
    of the -i H form, e.g. dissipative superoperators acting on flattened
    density matrices. The Arnoldi dimension grows until the propagated
    coefficient vector stabilizes below tol; at the cap max_dim the step
    is halved recursively. Memory is max_dim basis vectors of y's size.
    """
    matvec = _as_matvec(generator)
    v = np.asarray(y, dtype=complex)
    if not np.all(np.isfinite(v)):
        raise NumericalError("non-finite amplitudes passed to arnoldi_propagate")
    nv0 = np.linalg.norm(v)
    if nv0 == 0.0:
        return v.copy()

    def step(v: np.ndarray, dt: float, depth: int) -> np.ndarray:
        if depth > 40:
            raise NumericalError("arnoldi_propagate step subdivision did not converge")
        nv = np.linalg.norm(v)
        basis = np.empty((max_dim, v.size), dtype=complex)
        basis[0] = v / nv
        hess = np.zeros((max_dim + 1, max_dim), dtype=complex)
        prev = None
        for k in range(max_dim):
            w = matvec(basis[k])
            if not np.all(np.isfinite(w)):
                raise NumericalError("non-finite amplitudes during Arnoldi propagation")
            proj = basis[: k + 1].conj() @ w
            w = w - basis[: k + 1].T @ proj
            extra = basis[: k + 1].conj() @ w
            w = w - basis[: k + 1].T @ extra
            hess[: k + 1, k] = proj + extra
            b = float(np.linalg.norm(w))
            hess[k + 1, k] = b
            coef = scipy.linalg.expm(dt * hess[: k + 1, : k + 1])[:, 0]
            scale = max(1.0, float(np.max(np.abs(hess[: k + 1, : k + 1]))))
            if b < 1e-14 * scale:
                return nv * (basis[: k + 1].T @ coef)
            if prev is not None:
                err = float(np.linalg.norm(coef[:-1] - prev))
                tail = abs(coef[-1]) * abs(b * dt)
                if err < tol and tail < tol:
                    return nv * (basis[: k + 1].T @ coef)
            prev = coef
            if k + 1 < max_dim:
                basis[k + 1] = w / b
        half = step(v, dt / 2.0, depth + 1)
        return step(half, dt / 2.0, depth + 1)

    return step(v, dt, 0)


def lowest_eigenpair_iterative(
    hamiltonian: "Operator | np.ndarray | MatVec",
    guess: "StateVector | np.ndarray",
    tol: float = 1e-10,
    max_restarts: int = 200,
    subspace: int = 25,
) -> tuple[float, "StateVector | np.ndarray", int]:
    """Lowest eigenpair by restarted Lanczos iteration.

    Returns (eigenvalue, eigenvector, iterations). The Lanczos residual
    |beta_k v_k[-1]| is driven below tol * max(1, |E|). A guess that already
    is an eigenvector converges in a single iteration.
    """
    matvec = _as_matvec(hamiltonian)
    wrap = isinstance(guess, StateVector)
    v = np.asarray(guess.amplitudes if wrap else guess, dtype=complex)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise NumericalError("zero guess vector")
    v = v / nv
    history: list[float] = []
    for it in range(1, max_restarts + 1):
        alphas, betas, basis = _lanczos(matvec, v, subspace)
        k = alphas.size
        if k == 1:
            energy = float(alphas[0])
            resid = float(betas[0])
            vec = basis[0]
        else:
            evals, evecs = scipy.linalg.eigh_tridiagonal(alphas, betas[: k - 1])
            energy = float(evals[0])
            vec = basis.T @ evecs[:, 0]
            resid = float(abs(betas[k - 1] * evecs[-1, 0]))
        history.append(resid)
        if resid <= tol * max(1.0, abs(energy)):
            vec = fix_phases(vec[:, None])[:, 0]
            out = vec / np.linalg.norm(vec)
            return energy, (StateVector(guess.space, out) if wrap else out), it
        v = vec / np.linalg.norm(vec)
    raise NumericalError(
        f"lowest_eigenpair_iterative did not reach tol {tol:.1e} after {max_restarts} restarts, "
        f"residual history tail {history[-3:]}"
    )


def embed(op_local: Operator, factor_index: int, space: CompositeSpace) -> Operator:
    """Lift a single-factor operator into a composite space by kron with identities."""
    if not isinstance(space, CompositeSpace):
        raise TypeError("embed target must be a CompositeSpace")
    if not 0 <= factor_index < len(space.factors):
        raise ValueError(f"factor_index {factor_index} out of range for {len(space.factors)} factors")
    target = space.factors[factor_index]
    if op_local.space.dim != target.dim:
        raise ValueError(
            f"operator dim {op_local.space.dim} does not match factor {factor_index} dim {target.dim}"
        )
    left = 1
    for f in space.factors[:factor_index]:
        left *= f.dim
    right = 1
    for f in space.factors[factor_index + 1 :]:
        right *= f.dim
    mat = np.kron(np.kron(np.eye(left), op_local.matrix), np.eye(right))
    return Operator(space, mat, hermitian=op_local.hermitian)


def apply_embedded(op_matrix: np.ndarray, factor_index: int, shape: Sequence[int], psi: np.ndarray) -> np.ndarray:
    """Apply a single-factor operator to a flattened product-space vector.

    Costs O(dim * d_f) via a batched matmul instead of building the kron
    product. Used by the matrix-free engines.
    """
    shape = tuple(shape)
    df = shape[factor_index]
    left = 1
    for s in shape[:factor_index]:
        left *= s
    right = psi.size // (left * df)
    v = psi.reshape(left, df, right)
    return np.matmul(op_matrix, v).reshape(psi.shape)
