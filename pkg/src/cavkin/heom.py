"""Hierarchical equations of motion for systems in Debye baths.

Scaled (normalized) auxiliary density operators indexed by occupation
multi-indices over the baths' exponential modes.  The hierarchy is
closed in two ways at once: the truncated Matsubara tail of every bath
enters as a Markovian double-commutator on all ADOs, and the deepest
tier feeds back through an adiabatic elimination of its missing
neighbors instead of a hard zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations_with_replacement

import numpy as np

from .baths import BathSpec, ExponentialBath
from .errors import ConfigError, NumericalError
from .integrators import integrate_adaptive
from .quantum import Operator, arnoldi_propagate
from .timeseries import TimeSeries

DEFAULT_MEMORY_BUDGET = 3_000_000_000  # bytes of ADO storage
TRACE_TOL = 1e-6
HERMITICITY_TOL = 1e-8
CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class HierarchyState:
    """Indexed collection of auxiliary density operators.

    Mode order is bath order, then exponent order within each bath;
    ``indices[i]`` is the occupation multi-index of ADO i and the root
    (all zeros) sits at position 0.  ``ados`` is the dense stack of
    scaled ADOs, shape (n_ados, dim, dim).
    """

    depth: int
    baths: tuple[ExponentialBath, ...]
    indices: np.ndarray
    index_map: dict[tuple[int, ...], int]
    ados: np.ndarray
    mode_bath: np.ndarray
    mode_op: np.ndarray
    mode_coeff: np.ndarray
    mode_rate: np.ndarray

    @property
    def n_ados(self) -> int:
        return self.ados.shape[0]

    @property
    def n_modes(self) -> int:
        return self.mode_rate.size

    @property
    def system_dim(self) -> int:
        return self.ados.shape[1]

    @property
    def root(self) -> np.ndarray:
        return self.ados[0]

    def copy(self) -> "HierarchyState":
        return replace(self, ados=self.ados.copy())


def _multi_indices(n_modes: int, depth: int) -> np.ndarray:
    if n_modes == 0:
        return np.zeros((1, 0), dtype=np.int32)
    rows = [np.zeros(n_modes, dtype=np.int32)]
    for order in range(1, depth + 1):
        for combo in combinations_with_replacement(range(n_modes), order):
            row = np.zeros(n_modes, dtype=np.int32)
            for mode in combo:
                row[mode] += 1
            rows.append(row)
    return np.array(rows, dtype=np.int32)


def build_hierarchy(
    system_dim: int,
    baths: list[ExponentialBath] | tuple[ExponentialBath, ...],
    depth: int,
    rho0: np.ndarray | None = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> HierarchyState:
    """Allocate all ADOs of total order <= depth over the baths' modes.

    Modes with zero coefficient (a bath with lam = 0) carry no hierarchy
    direction and are dropped from the index.  The root ADO is set to
    rho0 if given (the factorized initial condition); every other ADO
    starts at zero.

    Raises
    ------
    ConfigError
        If depth < 0, dimensions are inconsistent, or the ADO stack
        would exceed ``memory_budget`` bytes.
    """
    if depth < 0:
        raise ConfigError(f"hierarchy depth must be >= 0, got {depth}")
    if system_dim < 1:
        raise ConfigError(f"system dimension must be >= 1, got {system_dim}")

    mode_bath, mode_op, mode_coeff, mode_rate = [], [], [], []
    for b, bath in enumerate(baths):
        for k in range(bath.n_modes):
            if abs(bath.coefficients[k]) == 0.0:
                continue
            mode_bath.append(b)
            mode_op.append(bath.coupling_op_index)
            mode_coeff.append(bath.coefficients[k])
            mode_rate.append(bath.rates[k])
    n_modes = len(mode_rate)

    n_ados = math.comb(depth + n_modes, n_modes)
    needed = n_ados * system_dim * system_dim * 16
    if needed > memory_budget:
        raise ConfigError(
            f"hierarchy of {n_ados} ADOs needs {needed / 1e9:.2f} GB "
            f"which exceeds the {memory_budget / 1e9:.2f} GB budget; "
            "lower the depth or the bath term count"
        )

    indices = _multi_indices(n_modes, depth)
    assert indices.shape[0] == n_ados
    index_map = {tuple(row): i for i, row in enumerate(indices)}

    ados = np.zeros((n_ados, system_dim, system_dim), dtype=np.complex128)
    if rho0 is not None:
        mat = np.asarray(rho0, dtype=np.complex128)
        if mat.shape != (system_dim, system_dim):
            raise ConfigError(
                f"initial density matrix is {mat.shape}, expected "
                f"({system_dim}, {system_dim})"
            )
        if not np.all(np.isfinite(mat)):
            raise ConfigError("initial density matrix has non-finite entries")
        ados[0] = mat

    return HierarchyState(
        depth=depth,
        baths=tuple(baths),
        indices=indices,
        index_map=index_map,
        ados=ados,
        mode_bath=np.array(mode_bath, dtype=np.int64),
        mode_op=np.array(mode_op, dtype=np.int64),
        mode_coeff=np.array(mode_coeff, dtype=np.complex128),
        mode_rate=np.array(mode_rate, dtype=np.float64),
    )


def _as_hermitian_matrix(op, dim: int, what: str) -> np.ndarray:
    mat = np.asarray(op.matrix if isinstance(op, Operator) else op, dtype=np.complex128)
    if mat.shape != (dim, dim):
        raise ConfigError(f"{what} is {mat.shape}, expected ({dim}, {dim})")
    scale = float(np.max(np.abs(mat))) or 1.0
    if float(np.max(np.abs(mat - mat.conj().T))) > 1e-10 * scale:
        raise ConfigError(f"{what} must be Hermitian")
    return mat


def _build_plan(
    state: HierarchyState,
    h_sys,
    coupling_ops,
    deep_closure: bool = True,
):
    """Precompute neighbor tables and return rhs(ados) -> d(ados)/dt."""
    d = state.system_dim
    h = _as_hermitian_matrix(h_sys, d, "system Hamiltonian")
    n_ops_needed = int(state.mode_op.max()) + 1 if state.n_modes else 0
    qs = []
    for i, op in enumerate(coupling_ops):
        qs.append(_as_hermitian_matrix(op, d, f"coupling operator {i}"))
    if len(qs) < n_ops_needed:
        raise ConfigError(
            f"baths reference coupling operator index {n_ops_needed - 1} "
            f"but only {len(qs)} operators were supplied"
        )

    indices = state.indices
    damp = indices.astype(np.float64) @ state.mode_rate
    total = indices.sum(axis=1)
    deep = np.nonzero(total == state.depth)[0]

    terminator_ops = []
    for b, bath in enumerate(state.baths):
        delta = bath.terminator_strength
        if delta != 0.0 and bath.spec.lam != 0.0:
            q = qs[bath.coupling_op_index]
            terminator_ops.append((delta, q, q @ q))

    per_mode = []
    for j in range(state.n_modes):
        c = state.mode_coeff[j]
        g = state.mode_rate[j]
        q = qs[state.mode_op[j]]
        occ = indices[:, j].astype(np.float64)

        up_src = np.nonzero(total < state.depth)[0]
        up_dst = np.array(
            [state.index_map[tuple(row)] for row in _bumped(indices[up_src], j, +1)],
            dtype=np.int64,
        )
        f_up = np.sqrt((occ[up_src] + 1.0) * abs(c))

        dn_src = np.nonzero(occ > 0)[0]
        dn_dst = np.array(
            [state.index_map[tuple(row)] for row in _bumped(indices[dn_src], j, -1)],
            dtype=np.int64,
        )
        f_dn = np.sqrt(occ[dn_src] / abs(c))

        closure_coef = None
        if deep_closure and deep.size:
            closure_coef = (occ[deep] + 1.0) / (damp[deep] + g)
        per_mode.append((q, c, up_src, up_dst, f_up, dn_src, dn_dst, f_dn, closure_coef))

    def rhs(ados: np.ndarray) -> np.ndarray:
        out = -1j * (h @ ados - ados @ h)
        out -= damp[:, None, None] * ados
        for delta, q, qq in terminator_ops:
            out -= delta * (qq @ ados - 2.0 * (q @ ados @ q) + ados @ qq)
        for q, c, up_src, up_dst, f_up, dn_src, dn_dst, f_dn, closure_coef in per_mode:
            if up_src.size:
                sub = ados[up_dst]
                out[up_src] += (-1j * f_up)[:, None, None] * (q @ sub - sub @ q)
            if dn_src.size:
                sub = ados[dn_dst]
                out[dn_src] += (-1j * f_dn)[:, None, None] * (
                    c * (q @ sub) - np.conj(c) * (sub @ q)
                )
            if closure_coef is not None:
                sub = ados[deep]
                inner = c * (q @ sub) - np.conj(c) * (sub @ q)
                out[deep] -= closure_coef[:, None, None] * (q @ inner - inner @ q)
        return out

    return rhs


def _bumped(rows: np.ndarray, mode: int, step: int) -> np.ndarray:
    out = rows.copy()
    out[:, mode] += step
    return out


def heom_rhs(
    state: HierarchyState,
    h_sys,
    coupling_ops,
    deep_closure: bool = True,
) -> HierarchyState:
    """Time derivative of the hierarchy as a new HierarchyState.

    Pure function of the inputs: unitary motion on every ADO, mode
    damping, couplings to the (n_k +/- 1) neighbors through the baths'
    coupling operators, the Matsubara-tail double commutator, and (by
    default) the adiabatic deepest-tier closure.
    """
    rhs = _build_plan(state, h_sys, coupling_ops, deep_closure=deep_closure)
    return replace(state, ados=rhs(state.ados))


@dataclass
class HeomResult:
    """Propagation output: observable series, final state, snapshots."""

    series: TimeSeries
    state: HierarchyState
    snapshots: list[tuple[float, np.ndarray]]


def propagate_heom(
    state: HierarchyState,
    h_sys,
    coupling_ops,
    t_max: float,
    dt_out: float,
    *,
    observables: dict | None = None,
    method: str = "rk45",
    rtol: float = 1e-8,
    atol: float = 1e-12,
    deep_closure: bool = True,
    t0: float = 0.0,
    snapshot_every: int | None = None,
    krylov_dim: int = 30,
    check_invariants: bool = True,
) -> HeomResult:
    """Propagate the hierarchy on a uniform output grid.

    The integrator restarts at every output point, so refining the grid
    or resuming from a checkpoint reproduces the same output values.
    ``method`` is "rk45" (adaptive embedded Runge-Kutta, default) or
    "krylov" (Arnoldi exponential of the time-independent generator;
    faster for long runs, memory krylov_dim ADO stacks).

    Parameters
    ----------
    observables : dict, optional
        name -> Hermitian Operator or matrix; expectation values against
        the root ADO are recorded as real channels.
    snapshot_every : int, optional
        Keep a copy of the root ADO every that many output points.

    Returns
    -------
    HeomResult

    Raises
    ------
    NumericalError
        On integrator failure or when the root ADO leaves the trace /
        Hermiticity invariants.
    """
    if dt_out <= 0.0 or t_max <= t0:
        raise ConfigError("need dt_out > 0 and t_max > t0")
    n_out = int(round((t_max - t0) / dt_out))
    if abs(n_out * dt_out - (t_max - t0)) > 1e-6 * dt_out or n_out == 0:
        raise ConfigError(
            f"t_max - t0 = {t_max - t0:g} is not a multiple of dt_out = {dt_out:g}"
        )
    if method not in ("rk45", "krylov"):
        raise ConfigError(f"unknown method {method!r}; expected 'rk45' or 'krylov'")

    rhs = _build_plan(state, h_sys, coupling_ops, deep_closure=deep_closure)
    obs_mats = {}
    for name, op in (observables or {}).items():
        obs_mats[name] = _as_hermitian_matrix(op, state.system_dim, f"observable {name!r}")

    work = state.copy()
    times = t0 + dt_out * np.arange(n_out + 1)
    records = {name: np.empty(n_out + 1) for name in obs_mats}
    snapshots: list[tuple[float, np.ndarray]] = []

    def check(t: float) -> None:
        root = work.ados[0]
        tr = np.trace(root)
        if abs(tr - 1.0) > TRACE_TOL:
            raise NumericalError(
                f"root ADO trace drifted to {tr:.8f} at t = {t:.6g} "
                f"(tolerance {TRACE_TOL:g}); tighten rtol or raise the depth"
            )
        herm = float(np.max(np.abs(root - root.conj().T)))
        if herm > HERMITICITY_TOL:
            raise NumericalError(
                f"root ADO Hermiticity deviation {herm:.2e} at t = {t:.6g} "
                f"(tolerance {HERMITICITY_TOL:g})"
            )

    def record(k: int) -> None:
        root = work.ados[0]
        for name, mat in obs_mats.items():
            records[name][k] = float(np.trace(mat @ root).real)
        if snapshot_every is not None and k % snapshot_every == 0:
            snapshots.append((float(times[k]), root.copy()))

    if check_invariants:
        check(t0)
    record(0)

    shape = work.ados.shape
    flat_rhs = lambda t, y: rhs(y)

    for k in range(1, n_out + 1):
        if method == "rk45":
            work.ados, _ = integrate_adaptive(
                flat_rhs, times[k - 1], work.ados, times[k], rtol=rtol, atol=atol
            )
        else:
            out = arnoldi_propagate(
                lambda y: rhs(y.reshape(shape)).ravel(),
                work.ados.ravel(),
                dt_out,
                tol=min(1e-10, rtol),
                max_dim=krylov_dim,
            )
            work.ados = out.reshape(shape)
        if check_invariants:
            check(times[k])
        record(k)

    series = TimeSeries(
        times=times,
        channels=records,
        meta={"time_unit": "fs", "source": "heom"},
    )
    return HeomResult(series=series, state=work, snapshots=snapshots)


def hierarchy_payload(state: HierarchyState, prefix: str = "") -> dict:
    """Flatten a hierarchy into checkpoint arrays, keys starting with prefix."""
    payload = {
        f"{prefix}depth": np.array(state.depth),
        f"{prefix}ados": state.ados,
        f"{prefix}n_baths": np.array(len(state.baths)),
    }
    for b, bath in enumerate(state.baths):
        s = bath.spec
        payload[f"{prefix}bath{b}_params"] = np.array(
            [s.coupling_op_index, s.lam, s.gamma, s.beta, -1 if s.n_matsubara is None else s.n_matsubara]
        )
        payload[f"{prefix}bath{b}_decomposition"] = np.array(s.decomposition)
        payload[f"{prefix}bath{b}_coefficients"] = bath.coefficients
        payload[f"{prefix}bath{b}_rates"] = bath.rates
        payload[f"{prefix}bath{b}_extra"] = np.array(
            [bath.terminator_strength, bath.reconstruction_error]
        )
    return payload


def hierarchy_from_payload(blob, prefix: str = "") -> HierarchyState:
    """Rebuild a HierarchyState from hierarchy_payload arrays."""
    depth = int(blob[f"{prefix}depth"])
    ados = blob[f"{prefix}ados"]
    baths = []
    for b in range(int(blob[f"{prefix}n_baths"])):
        params = blob[f"{prefix}bath{b}_params"]
        n_mats = int(params[4])
        spec = BathSpec(
            coupling_op_index=int(params[0]),
            lam=float(params[1]),
            gamma=float(params[2]),
            beta=float(params[3]),
            n_matsubara=None if n_mats < 0 else n_mats,
            decomposition=str(blob[f"{prefix}bath{b}_decomposition"]),
        )
        extra = blob[f"{prefix}bath{b}_extra"]
        baths.append(
            ExponentialBath(
                spec=spec,
                coefficients=blob[f"{prefix}bath{b}_coefficients"],
                rates=blob[f"{prefix}bath{b}_rates"],
                terminator_strength=float(extra[0]),
                reconstruction_error=float(extra[1]),
            )
        )
    state = build_hierarchy(ados.shape[1], baths, depth)
    if ados.shape != state.ados.shape:
        raise ConfigError(
            f"checkpoint ADO stack {ados.shape} does not match the "
            f"rebuilt hierarchy {state.ados.shape}"
        )
    state.ados[...] = ados
    return state


def save_checkpoint(path, state: HierarchyState, t: float) -> None:
    """Write a versioned checkpoint of the hierarchy and current time."""
    payload = {
        "format_version": np.array(CHECKPOINT_FORMAT_VERSION),
        "t": np.array(float(t)),
    }
    payload.update(hierarchy_payload(state))
    # write through a handle so the exact path is honored (np.savez
    # appends .npz to bare string paths)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple[HierarchyState, float]:
    """Rebuild a HierarchyState and time from save_checkpoint output."""
    with np.load(path, allow_pickle=False) as blob:
        version = int(blob["format_version"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(
                f"checkpoint format version {version} is not supported "
                f"(expected {CHECKPOINT_FORMAT_VERSION})"
            )
        t = float(blob["t"])
        state = hierarchy_from_payload(blob)
    return state, t
