"""Experiment orchestration: configs to engines to on-disk artifacts.

A run directory holds the resolved config echo (config.toml), the
observable series (series.csv, t_fs leading column, 12 significant
digits), the analysis summary (analysis.json), and optionally a
checkpoint (checkpoint.npz). A sweep directory holds per-point run
directories under points/ plus the assembled summary.csv.

Everything an engine produces is deterministic given the config: the
disorder seed is the single entropy source, checkpoint cadence only
decides when state is flushed, never what is computed.
"""

from __future__ import annotations

import json
import math
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from pathlib import Path

import numpy as np

from .baths import BathSpec, decompose_debye, lifetime_to_bath
from .closed_dynamics import (
    TRUNCATION_DRIFT_TOL,
    build_ensemble,
    cavity_number_trace,
    prepare_correlated_ground,
    prepare_uncorrelated,
    side_side_correlation,
    truncation_drift,
)
from .config import (
    ExperimentConfig,
    config_hash,
    emit_config,
    with_axis_value,
)
from .errors import CavkinError, ConfigError, KineticRegimeError
from .heom import build_hierarchy, hierarchy_from_payload, hierarchy_payload, propagate_heom
from .kinetics import (
    SideOperator,
    equilibrium_populations,
    fit_decay_rate,
    forward_rate,
    reactant_initial_density,
    side_operator_from_levels,
)
from .meanfield import (
    MeanFieldState,
    build_meanfield_state,
    run_meanfield,
    thermal_cavity_density,
)
from .models import (
    CavitySpec,
    Model1Params,
    Model2Params,
    assemble_light_matter,
    build_model1_molecule,
    build_model2_molecule,
    eta_from_dimensionless,
    model2_dividing_point,
    sample_orientation_cosines,
    truncate_model2,
)
from .quantum import Operator
from .timeseries import TimeSeries
from .units import FS_TO_AU, HARTREE_TO_CM, beta_from_temperature

CONFIG_BASENAME = "config.toml"
SERIES_BASENAME = "series.csv"
ANALYSIS_BASENAME = "analysis.json"
CHECKPOINT_BASENAME = "checkpoint.npz"
SUMMARY_BASENAME = "summary.csv"
REFERENCE_DIRNAME = "reference"
POINTS_DIRNAME = "points"

CHECKPOINT_CHUNK = 20  # output points between checkpoint opportunities
RUNNER_CHECKPOINT_VERSION = 1
DEPTH_DRIFT_TOL = 0.01

DEFAULT_LEVELS = {"model1": 4, "model2": 6}


# ---------------------------------------------------------------------------
# config resolution


@dataclass(frozen=True)
class ResolvedRun:
    """A config with every model-dependent default filled in."""

    cfg: ExperimentConfig         # omega_c resolved to a number
    levels: object                # MoleculeLevels
    factory: object               # n_levels -> MoleculeLevels, for the gate
    beta: float
    fundamental: float            # molecular IR transition (a.u.)
    dividing_point: float
    g_eff: float                  # coupling in inverse-dipole a.u.
    solvent: BathSpec | None
    cosines: tuple[float, ...] | None  # explicit per-molecule cosines, None = aligned


def _molecular_fundamental(levels, kind: str) -> float:
    e = levels.energies
    if kind == "model2":
        return float(e[1] - e[0])
    # double well: the doublet-to-doublet spacing, averaged over both members
    if levels.dim >= 4:
        return float(0.5 * ((e[2] - e[0]) + (e[3] - e[1])))
    if levels.dim == 3:
        return float(e[2] - e[0])
    raise ConfigError("cavity.omega_c: 'auto' needs at least 3 molecular levels")


def _build_molecule(cfg: ExperimentConfig):
    kind = cfg.model.kind
    n_levels = cfg.numerics.levels or DEFAULT_LEVELS[kind]
    if kind == "model1":
        params = Model1Params(
            n_vib=n_levels,
            temperature=cfg.model.temperature,
            **cfg.model.overrides,
        )
        factory = lambda n: build_model1_molecule(replace(params, n_vib=n)).levels
        return build_model1_molecule(params).levels, factory, 0.0
    overrides = dict(cfg.model.overrides)
    if "n_grid" in overrides:
        overrides["n_grid"] = int(round(overrides["n_grid"]))
    params = Model2Params(**overrides)
    mol = build_model2_molecule(params)
    return truncate_model2(mol, n_levels), partial(truncate_model2, mol), \
        model2_dividing_point(params)


def resolve(cfg: ExperimentConfig) -> ResolvedRun:
    """Build the molecule and pin every derived quantity of a run."""
    levels, factory, dividing = _build_molecule(cfg)
    beta = beta_from_temperature(cfg.model.temperature)
    fundamental = _molecular_fundamental(levels, cfg.model.kind)

    omega_c = cfg.cavity.omega_c
    if omega_c == "auto":
        omega_c = fundamental
    if cfg.cavity.g is not None:
        g_eff = cfg.cavity.g
    elif cfg.cavity.eta is not None:
        # coupling sign is a gauge choice (cavity parity); keep g >= 0
        g_eff = eta_from_dimensionless(cfg.cavity.eta, abs(levels.transition_dipole))
    else:
        g_eff = 0.0

    orientations = cfg.cavity.orientations
    if orientations == "aligned":
        cosines = None
    elif orientations == "disordered":
        cosines = sample_orientation_cosines(cfg.n_molecules, cfg.seed)
    else:
        cosines = tuple(orientations)

    solvent = None
    if cfg.model.solvent is not None:
        solvent = BathSpec(
            coupling_op_index=0,
            lam=cfg.model.solvent.reorganization,
            gamma=cfg.model.solvent.cutoff,
            beta=beta,
            n_matsubara=cfg.numerics.pade_terms,
        )

    resolved_cfg = replace(cfg, cavity=replace(cfg.cavity, omega_c=float(omega_c)))
    return ResolvedRun(
        cfg=resolved_cfg,
        levels=levels,
        factory=factory,
        beta=beta,
        fundamental=fundamental,
        dividing_point=dividing,
        g_eff=g_eff,
        solvent=solvent,
        cosines=cosines,
    )


def _cavity_spec(res: ResolvedRun, *, with_loss: bool, loss_index: int = 0,
                 orientations=None) -> CavitySpec:
    cfg = res.cfg
    loss = None
    if with_loss and math.isfinite(cfg.cavity.tau_c_fs):
        loss = lifetime_to_bath(
            cfg.cavity.tau_c_fs * FS_TO_AU,
            cfg.cavity.omega_c,
            res.beta,
            coupling_op_index=loss_index,
            n_matsubara=cfg.numerics.pade_terms,
        )
    return CavitySpec(
        omega_c=cfg.cavity.omega_c,
        n_fock=cfg.numerics.n_fock,
        loss=loss,
        coupling_scaling=cfg.cavity.scaling,
        g_or_eta=res.g_eff,
        dse=cfg.cavity.dse,
        orientations=orientations,
    )


def _time_grid(cfg: ExperimentConfig) -> tuple[float, float, int]:
    t_max = cfg.time.t_max_fs * FS_TO_AU
    dt_out = cfg.time.dt_out_fs * FS_TO_AU
    return t_max, dt_out, int(round(cfg.time.t_max_fs / cfg.time.dt_out_fs))


# ---------------------------------------------------------------------------
# engine: closed wavefunction dynamics


@dataclass
class EngineOutput:
    series: TimeSeries
    analysis: dict
    gates: dict


def _run_closed(res: ResolvedRun) -> EngineOutput:
    cfg = res.cfg
    spec = _cavity_spec(res, with_loss=False, orientations=res.cosines)
    t_max, dt_out, _ = _time_grid(cfg)

    variant = cfg.numerics.variant
    if variant == "auto" and cfg.initial_condition == "correlated":
        # the projected correlator needs per-molecule operators
        variant = "product"
    ens = build_ensemble(
        res.levels, spec, cfg.n_molecules,
        engine=variant, dim_budget=cfg.numerics.dim_budget,
    )
    if cfg.initial_condition == "correlated":
        state = prepare_correlated_ground(ens)
    else:
        state = prepare_uncorrelated(ens)

    skip_correlator = ens.engine == "symmetric" and cfg.initial_condition == "correlated"
    channels = {}
    meta = {}
    analysis: dict = {
        "engine_variant": ens.engine,
        "coupling": res.g_eff,
        "prepared_energy": state.energy,
        "side_rounding": ens.side_rounding,
    }
    if res.cosines is not None:
        analysis["cosines"] = list(res.cosines)

    if skip_correlator:
        analysis["correlator"] = (
            "unavailable: the symmetric engine cannot project a correlated start; "
            "photon-number channels only"
        )
    else:
        corr = side_side_correlation(
            ens, state, None, t_max, dt_out,
            propagator_tol=cfg.numerics.propagator_tol,
        )
        channels.update(corr.channels)
        meta.update(corr.meta)
        t_fs = corr.times_fs()
        analysis["corr_integral_fs"] = float(np.trapezoid(corr.channels["corr_norm"], t_fs))
        analysis["corr_final"] = float(corr.channels["corr_norm"][-1])

    ncs = cavity_number_trace(
        ens, state, t_max, dt_out, propagator_tol=cfg.numerics.propagator_tol
    )
    channels["n_c"] = ncs.channels["n_c"]
    meta.setdefault("time_unit", ncs.meta.get("time_unit", "au"))
    meta.setdefault("source", "closed")
    analysis["n_c_final"] = float(ncs.channels["n_c"][-1])
    analysis["n_c_max"] = float(np.max(ncs.channels["n_c"]))

    gates: dict = {}
    if skip_correlator or not cfg.numerics.truncation_check:
        gates["truncation"] = "skipped"
    else:
        kind = ("correlated_ground" if cfg.initial_condition == "correlated"
                else "uncorrelated")
        drift = truncation_drift(
            res.factory, spec, cfg.n_molecules, t_max, dt_out,
            kind=kind,
            molecule_index=None,
            n_levels=res.levels.dim,
            n_fock=cfg.numerics.n_fock,
            engine=variant,
            dim_budget=cfg.numerics.dim_budget,
        )
        gates["truncation"] = {
            "levels_drift": float(drift["levels_drift"]),
            "fock_drift": float(drift["fock_drift"]),
            "tolerance": TRUNCATION_DRIFT_TOL,
            "converged": bool(max(drift.values()) < TRUNCATION_DRIFT_TOL),
        }

    series = TimeSeries(times=ncs.times, channels=channels, meta=meta)
    return EngineOutput(series=series, analysis=analysis, gates=gates)


def _closed_reference(res: ResolvedRun) -> TimeSeries:
    """Cavity-free correlator on the same grid, for decay-rate fits."""
    cfg = res.cfg
    free = CavitySpec(omega_c=cfg.cavity.omega_c, n_fock=2, g_or_eta=0.0, dse=False)
    ens = build_ensemble(res.levels, free, 1)
    t_max, dt_out, _ = _time_grid(cfg)
    return side_side_correlation(
        ens, prepare_uncorrelated(ens), None, t_max, dt_out,
        propagator_tol=cfg.numerics.propagator_tol,
    )


# ---------------------------------------------------------------------------
# open-system engines, driven in checkpointable chunks


class _MeanFieldAdapter:
    def __init__(self, res: ResolvedRun):
        cfg = res.cfg
        self.res = res
        spec = _cavity_spec(res, with_loss=True)
        h_s = Operator(res.levels.space(), np.diag(res.levels.energies), hermitian=True)
        side = side_operator_from_levels(res.levels, res.dividing_point)
        rho0 = reactant_initial_density(h_s, side, res.beta)
        self.side_matrix = res.levels.side
        self.p_p_eq = equilibrium_populations(h_s, side, res.beta)[1]
        if cfg.time.dt_fs is not None:
            self.dt = cfg.time.dt_fs * FS_TO_AU
        else:
            # target a ~2 a.u. substep; must divide dt_out exactly
            dt_out_au = cfg.time.dt_out_fs * FS_TO_AU
            self.dt = dt_out_au / max(1, math.ceil(dt_out_au / 2.0))
        self._build = partial(
            build_meanfield_state,
            res.levels, spec, rho0.matrix,
            beta=res.beta,
            n_molecules=float(cfg.n_molecules),
            solvent=res.solvent,
            depth=cfg.numerics.depth,
            cavity_depth=cfg.numerics.depth,
            correlated=cfg.initial_condition == "reactant_thermal",
        )
        self.channel_names = ("mu_M", "f_c", "n_c", "P_R", "P_P")
        self.meta = {"time_unit": "fs", "source": "meanfield"}

    def build_initial(self):
        return self._build()

    def advance(self, state, t_to: float, dt_out: float):
        result = run_meanfield(state, t_to, self.dt, dt_out=dt_out, side=self.side_matrix)
        return result.state, result.series.channels

    def payload(self, state) -> dict:
        blob = {
            "mf_scalars": np.array([state.omega_c, state.g, state.n_molecules,
                                    1.0 if state.dse else 0.0, state.time]),
            "mf_h_molecule": state.h_molecule,
            "mf_dipole": state.dipole,
            "mf_n_ops": np.array(len(state.molecule_coupling_ops)),
        }
        for i, op in enumerate(state.molecule_coupling_ops):
            blob[f"mf_op{i}"] = op
        blob.update(hierarchy_payload(state.molecule, "mf_mol_"))
        blob.update(hierarchy_payload(state.cavity, "mf_cav_"))
        return blob

    def restore(self, blob):
        scalars = blob["mf_scalars"]
        return MeanFieldState(
            molecule=hierarchy_from_payload(blob, "mf_mol_"),
            cavity=hierarchy_from_payload(blob, "mf_cav_"),
            h_molecule=blob["mf_h_molecule"],
            dipole=blob["mf_dipole"],
            molecule_coupling_ops=tuple(
                blob[f"mf_op{i}"] for i in range(int(blob["mf_n_ops"]))
            ),
            omega_c=float(scalars[0]),
            g=float(scalars[1]),
            n_molecules=float(scalars[2]),
            dse=bool(scalars[3] > 0.5),
            time=float(scalars[4]),
        )

    def extra_analysis(self, series: TimeSeries) -> dict:
        return {}


class _HeomAdapter:
    def __init__(self, res: ResolvedRun):
        cfg = res.cfg
        self.res = res
        self.method = cfg.numerics.heom_method
        self.rtol = cfg.numerics.rtol
        self.atol = cfg.numerics.atol
        self.depth = cfg.numerics.depth

        self.with_cavity = res.g_eff != 0.0
        if self.with_cavity:
            spec = _cavity_spec(res, with_loss=True, loss_index=1 if res.solvent else 0,
                                orientations=res.cosines)
            assembled = assemble_light_matter([res.levels], spec)
            self.h_sys = assembled.h_total
            side_op = assembled.side_ops[0]
            self.coupling_ops = []
            self.bath_specs = []
            if res.solvent is not None:
                self.coupling_ops.append(assembled.mu_ops[0].matrix)
                self.bath_specs.append(res.solvent)
            if spec.loss is not None:
                self.coupling_ops.append(assembled.q_c.matrix)
                self.bath_specs.append(spec.loss)
            nf = cfg.numerics.n_fock
            self.observables = {
                "P_R": side_op.matrix,
                "P_P": np.eye(self.h_sys.matrix.shape[0]) - side_op.matrix,
                "n_c": np.kron(np.eye(res.levels.dim), np.diag(np.arange(nf, dtype=float))),
            }
            self.channel_names = ("P_R", "P_P", "n_c")
            rho_start = self._initial_density(assembled, side_op, spec)
        else:
            # zero coupling: the mode never talks to the molecule, drop it
            self.h_sys = Operator(res.levels.space(), np.diag(res.levels.energies),
                                  hermitian=True)
            side_op = Operator(res.levels.space(), res.levels.side, hermitian=True)
            self.coupling_ops = [res.levels.dipole]
            self.bath_specs = [res.solvent] if res.solvent is not None else []
            if not self.bath_specs:
                self.coupling_ops = []
            self.observables = {
                "P_R": side_op.matrix,
                "P_P": np.eye(res.levels.dim) - side_op.matrix,
            }
            self.channel_names = ("P_R", "P_P")
            side = side_operator_from_levels(res.levels, res.dividing_point)
            if cfg.initial_condition == "reactant_thermal":
                rho_start = reactant_initial_density(self.h_sys, side, res.beta).matrix
            else:
                rho_start = self._factorized_molecule(side)

        side_full = SideOperator(res.dividing_point, "below", side_op)
        self.p_p_eq = equilibrium_populations(self.h_sys, side_full, res.beta)[1]
        baths = [decompose_debye(bs) for bs in self.bath_specs]
        dim = self.h_sys.matrix.shape[0]
        depth = self.depth if baths else 0
        self._hierarchy = build_hierarchy(dim, baths, depth, rho0=rho_start)
        self._rho_start = rho_start
        self.meta = {"time_unit": "fs", "source": "heom"}

    def _factorized_molecule(self, side: SideOperator):
        h_mol = Operator(self.res.levels.space(),
                         np.diag(self.res.levels.energies), hermitian=True)
        return reactant_initial_density(h_mol, side, self.res.beta).matrix

    def _initial_density(self, assembled, side_op, spec):
        cfg = self.res.cfg
        side = SideOperator(self.res.dividing_point, "below", side_op)
        if cfg.initial_condition == "reactant_thermal":
            return reactant_initial_density(assembled.h_total, side, self.res.beta).matrix
        mol_side = side_operator_from_levels(self.res.levels, self.res.dividing_point)
        rho_mol = self._factorized_molecule(mol_side)
        rho_cav = thermal_cavity_density(spec.omega_c, spec.n_fock, self.res.beta, 0.0)
        return np.kron(rho_mol, rho_cav)

    def build_initial(self):
        return (self._hierarchy.copy(), 0.0)

    def advance(self, state, t_to: float, dt_out: float):
        hierarchy, t0 = state
        result = propagate_heom(
            hierarchy, self.h_sys, self.coupling_ops, t_to, dt_out,
            observables=self.observables, method=self.method,
            rtol=self.rtol, atol=self.atol, t0=t0,
        )
        return (result.state, t_to), result.series.channels

    def payload(self, state) -> dict:
        hierarchy, t0 = state
        blob = {"heom_t": np.array(t0)}
        blob.update(hierarchy_payload(hierarchy, "heom_"))
        return blob

    def restore(self, blob):
        return (hierarchy_from_payload(blob, "heom_"), float(blob["heom_t"]))

    def depth_gate(self, series: TimeSeries) -> dict:
        cfg = self.res.cfg
        baths = [decompose_debye(bs) for bs in self.bath_specs]
        if not baths:
            return {"drift": 0.0, "tolerance": DEPTH_DRIFT_TOL, "converged": True}
        dim = self.h_sys.matrix.shape[0]
        deeper = build_hierarchy(dim, baths, 2 * self.depth, rho0=self._rho_start)
        t_max, dt_out, _ = _time_grid(cfg)
        result = propagate_heom(
            deeper, self.h_sys, self.coupling_ops, t_max, dt_out,
            observables={"P_R": self.observables["P_R"]},
            method=self.method, rtol=self.rtol, atol=self.atol,
        )
        drift = float(np.max(np.abs(result.series.channels["P_R"] - series.channels["P_R"])))
        return {
            "drift": drift,
            "tolerance": DEPTH_DRIFT_TOL,
            "converged": bool(drift < DEPTH_DRIFT_TOL),
        }

    def extra_analysis(self, series: TimeSeries) -> dict:
        return {}


def _checkpoint_write(path: Path, adapter, state, k: int, times: np.ndarray,
                      rows: dict, cfg_hash: str) -> None:
    blob = {
        "format_version": np.array(RUNNER_CHECKPOINT_VERSION),
        "k": np.array(k),
        "times": times[: k + 1],
        "config_hash": np.frombuffer(cfg_hash.encode(), dtype=np.uint8),
    }
    for name, values in rows.items():
        blob[f"row_{name}"] = values[: k + 1]
    blob.update(adapter.payload(state))
    with open(path, "wb") as fh:
        np.savez(fh, **blob)


def _drive_open_engine(res: ResolvedRun, adapter, out_dir: Path | None,
                       resume_blob=None) -> tuple[TimeSeries, bool]:
    """Advance an open-system engine over the output grid in chunks.

    Returns the series collected so far, whether the run is complete, and
    the engine error if one stopped it. Engines restart exactly at output
    points, so any chunking produces bit-identical observables; chunks
    bound both checkpoint cadence and how much work a failure can lose.
    """
    cfg = res.cfg
    t_max, dt_out, n_out = _time_grid(cfg)
    times = dt_out * np.arange(n_out + 1)
    rows = {name: np.full(n_out + 1, np.nan) for name in adapter.channel_names}

    if resume_blob is not None:
        expect = config_hash(cfg)
        stored = bytes(resume_blob["config_hash"]).decode()
        if stored != expect:
            raise ConfigError(
                f"checkpoint belongs to config {stored}, this config is {expect}"
            )
        k = int(resume_blob["k"])
        for name in rows:
            rows[name][: k + 1] = resume_blob[f"row_{name}"]
        state = adapter.restore(resume_blob)
    else:
        k = 0
        state = adapter.build_initial()
        # the first chunk records the initial point itself

    ck = cfg.checkpoint
    checkpointing = out_dir is not None and (
        ck.every_s is not None or ck.stop_after_points is not None
    )
    stop_at = n_out
    if ck.stop_after_points is not None:
        stop_at = min(n_out, k + ck.stop_after_points)
    last_flush = _time.monotonic()

    filled = k if resume_blob is not None else -1
    first_chunk = resume_blob is None
    error: CavkinError | None = None
    while k < stop_at:
        k_next = min(k + CHECKPOINT_CHUNK, stop_at)
        try:
            state, got = adapter.advance(state, times[k_next], dt_out)
        except CavkinError as err:
            error = err
            break
        # every chunk after the first re-reports its own starting point
        lo = 0 if first_chunk else 1
        first_chunk = False
        for name in rows:
            rows[name][k + lo: k_next + 1] = got[name][lo:]
        k = k_next
        filled = k
        if checkpointing:
            due = ck.every_s is not None and _time.monotonic() - last_flush >= ck.every_s
            if due or k == stop_at:
                _checkpoint_write(out_dir / CHECKPOINT_BASENAME, adapter, state,
                                  k, times, rows, config_hash(cfg))
                last_flush = _time.monotonic()

    complete = error is None and k == n_out
    series = None
    if filled >= 0:
        series = TimeSeries(
            times=times[: filled + 1],
            channels={name: rows[name][: filled + 1] for name in rows},
            meta=dict(adapter.meta),
        )
    return series, complete, error


def _run_open(res: ResolvedRun, out_dir: Path | None,
              resume_blob=None) -> tuple[EngineOutput, CavkinError | None]:
    cfg = res.cfg
    adapter = _MeanFieldAdapter(res) if cfg.engine == "meanfield" else _HeomAdapter(res)
    series, complete, error = _drive_open_engine(res, adapter, out_dir, resume_blob)

    analysis: dict = {
        "coupling": res.g_eff,
        "p_p_eq": float(adapter.p_p_eq),
    }
    if series is not None:
        analysis["p_r_final"] = float(series.channels["P_R"][-1])
        if "n_c" in series.channels:
            analysis["n_c_final"] = float(series.channels["n_c"][-1])
        analysis.update(adapter.extra_analysis(series))

    gates: dict = {}
    if not complete:
        t_max, dt_out, n_out = _time_grid(cfg)
        done = 0 if series is None else int(round(series.times[-1] / dt_out))
        analysis["points_done"] = done
        analysis["points_total"] = n_out
        if error is not None:
            analysis["error"] = str(error)
        return EngineOutput(series=series, analysis=analysis, gates=gates), error

    if cfg.engine == "heom":
        if cfg.numerics.depth_check:
            gates["depth"] = adapter.depth_gate(series)
        else:
            gates["depth"] = "skipped"
    return EngineOutput(series=series, analysis=analysis, gates=gates), None


# ---------------------------------------------------------------------------
# rate analysis and artifact writing


def _rate_mode(cfg: ExperimentConfig) -> str:
    if cfg.analysis.rate != "auto":
        return cfg.analysis.rate
    return "fit_decay" if cfg.engine == "closed" else "forward"


def _analyze_rates(res: ResolvedRun, out: EngineOutput,
                   reference: TimeSeries | None) -> None:
    cfg = res.cfg
    mode = _rate_mode(cfg)
    analysis = out.analysis

    if mode == "forward" and "P_P" in out.series.channels:
        try:
            rate = forward_rate(out.series, analysis["p_p_eq"])
            analysis["rate"] = {
                "kappa_fs1": rate.kappa,
                "plateau_window_fs": list(rate.plateau_window),
                "plateau_flatness": rate.plateau_flatness,
                "p_p_eq": rate.equilibrium_p_p,
            }
            analysis["kappa_fs1"] = rate.kappa
        except KineticRegimeError as err:
            analysis["rate"] = None
            analysis["rate_error"] = str(err)
    elif mode == "fit_decay" and "corr_norm" in out.series.channels:
        if reference is None:
            analysis["fit"] = None
            analysis["rate_error"] = "no cavity-free reference series available"
        else:
            a, b, kappa = fit_decay_rate(reference, out.series, channel="corr_norm")
            analysis["fit"] = {"a": a, "b": b, "kappa_fs1": kappa}
            analysis["kappa_fs1"] = kappa

    t_star = cfg.analysis.t_star_fs
    if t_star is not None:
        t_fs = out.series.times_fs()
        idx = int(np.argmin(np.abs(t_fs - t_star)))
        if abs(t_fs[idx] - t_star) > 0.5 * cfg.time.dt_out_fs + 1e-9:
            analysis["t_star_error"] = (
                f"t_star = {t_star:g} fs lies outside the output grid"
            )
        else:
            name = "P_R" if "P_R" in out.series.channels else "corr_norm"
            if name in out.series.channels:
                key = "p_r_at_t_star" if name == "P_R" else "corr_at_t_star"
                analysis[key] = float(out.series.channels[name][idx])
                analysis["t_star_fs"] = float(t_fs[idx])


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if math.isnan(value) else value
    return value


def _write_run_dir(out_dir: Path, res: ResolvedRun, out: EngineOutput,
                   status: str) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_text = emit_config(res.cfg)
    (out_dir / CONFIG_BASENAME).write_text(cfg_text)

    if out.series is not None:
        meta = dict(out.series.meta)
        meta["config_hash"] = config_hash(res.cfg)
        meta["engine"] = res.cfg.engine
        series = TimeSeries(times=out.series.times, channels=out.series.channels,
                            meta=meta)
        series.to_csv(out_dir / SERIES_BASENAME)

    analysis = {
        "status": status,
        "engine": res.cfg.engine,
        "initial_condition": res.cfg.initial_condition,
        "n_molecules": res.cfg.n_molecules,
        "config_hash": config_hash(res.cfg),
        "omega_c_cm1": res.cfg.cavity.omega_c * HARTREE_TO_CM,
        "fundamental_cm1": res.fundamental * HARTREE_TO_CM,
        "channels": [] if out.series is None else list(out.series.channels),
        "gates": out.gates,
    }
    analysis.update(out.analysis)
    analysis = _jsonable(analysis)
    with open(out_dir / ANALYSIS_BASENAME, "w") as fh:
        json.dump(analysis, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return analysis


def gates_converged(analysis: dict) -> bool:
    for gate in analysis.get("gates", {}).values():
        if isinstance(gate, dict) and not gate.get("converged", True):
            return False
    return True


@dataclass
class RunOutcome:
    out_dir: Path
    analysis: dict
    status: str       # "ok" | "partial"
    gate_ok: bool


def run_experiment(cfg: ExperimentConfig, *, resume=None) -> RunOutcome:
    """Execute a single-point experiment and write its artifact directory."""
    if cfg.sweep is not None:
        raise ConfigError("config has a [sweep] section; use the sweep command")
    res = resolve(cfg)
    out_dir = Path(res.cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    resume_blob = None
    if resume is not None:
        path = Path(resume)
        if path.is_dir():
            path = path / CHECKPOINT_BASENAME
        if not path.exists():
            raise ConfigError(f"no checkpoint at {path}")
        if cfg.engine == "closed":
            raise ConfigError("closed-system runs are not checkpointable; rerun instead")
        resume_blob = np.load(path, allow_pickle=False)

    engine_error = None
    if cfg.engine == "closed":
        out = _run_closed(res)
        reference = _closed_reference(res) if _rate_mode(cfg) == "fit_decay" \
            and "corr_norm" in out.series.channels else None
        status = "ok"
    else:
        out, engine_error = _run_open(res, out_dir, resume_blob)
        reference = None
        if engine_error is not None:
            status = "failed"
        else:
            status = "ok" if "points_done" not in out.analysis else "partial"

    if status == "ok":
        _analyze_rates(res, out, reference)
    analysis = _write_run_dir(out_dir, res, out, status)
    if engine_error is not None:
        # artifacts for the completed portion are on disk; surface the failure
        raise engine_error
    return RunOutcome(out_dir=out_dir, analysis=analysis, status=status,
                      gate_ok=gates_converged(analysis))


# ---------------------------------------------------------------------------
# sweeps


_AXIS_COLUMNS = {"omega_c": "omega_c_cm1", "tau_c": "tau_c_fs", "N": "n_molecules"}
_SUMMARY_KEYS = (
    "kappa_fs1", "kappa_ratio", "corr_integral_fs", "corr_final",
    "p_r_final", "p_r_at_t_star", "corr_at_t_star", "n_c_final", "n_c_max",
)


def _axis_display(axis: str, value: float) -> float:
    if axis == "omega_c":
        return value * HARTREE_TO_CM
    if axis == "tau_c":
        return value  # already fs
    return value


def _point_cfg(cfg: ExperimentConfig, axis: str, value: float, idx: int) -> ExperimentConfig:
    point = with_axis_value(cfg, axis, value)
    out = str(Path(cfg.output) / POINTS_DIRNAME / f"{idx:03d}")
    return replace(point, output=out)


def _sweep_reference(cfg: ExperimentConfig) -> tuple[float | None, str | None]:
    """Out-of-cavity rate for normalized sweep columns, where defined."""
    if _rate_mode(cfg) != "forward":
        return None, None
    bare = replace(
        cfg,
        sweep=None,
        cavity=replace(cfg.cavity, eta=None, g=None),
        output=str(Path(cfg.output) / REFERENCE_DIRNAME),
        checkpoint=replace(cfg.checkpoint, every_s=None, stop_after_points=None),
    )
    outcome = run_experiment(bare)
    kappa0 = outcome.analysis.get("kappa_fs1")
    err = outcome.analysis.get("rate_error")
    return kappa0, err


def _run_sweep_point(cfg_text: str) -> dict:
    from .config import parse_config

    outcome = run_experiment(parse_config(cfg_text))
    return outcome.analysis


def sweep_experiment(cfg: ExperimentConfig, *, workers: int = 1) -> RunOutcome:
    """Run every grid point of a sweep and assemble the summary table."""
    if cfg.sweep is None:
        raise ConfigError("config has no [sweep] section; use the run command")
    axis, values = cfg.sweep.axis, cfg.sweep.values
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    base = resolve(cfg)
    (out_dir / CONFIG_BASENAME).write_text(emit_config(base.cfg))

    kappa0, ref_err = _sweep_reference(base.cfg)

    point_cfgs = [_point_cfg(base.cfg, axis, v, i) for i, v in enumerate(values)]
    texts = [emit_config(pc) for pc in point_cfgs]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_sweep_point, text) for text in texts]
            results = []
            for future in futures:
                try:
                    results.append(future.result())
                except CavkinError as err:
                    results.append({"status": "failed", "error": str(err)})
    else:
        results = []
        for text in texts:
            try:
                results.append(_run_sweep_point(text))
            except CavkinError as err:
                results.append({"status": "failed", "error": str(err)})

    summary_rows = []
    all_ok = True
    for value, analysis in zip(values, results):
        row = {_AXIS_COLUMNS[axis]: _axis_display(axis, value)}
        failed = analysis.get("status") == "failed"
        for key in _SUMMARY_KEYS:
            got = analysis.get(key)
            if key == "kappa_ratio":
                kappa = analysis.get("kappa_fs1")
                got = (kappa / kappa0) if (kappa is not None and kappa0) else None
            row[key] = got
        row["gate_converged"] = 0 if not gates_converged(analysis) else 1
        row["status"] = "failed" if failed else analysis.get("status", "ok")
        row["error"] = analysis.get("error", analysis.get("rate_error", "")) or ""
        if failed or not gates_converged(analysis):
            all_ok = False
        summary_rows.append(row)

    columns = [_AXIS_COLUMNS[axis]] + [k for k in _SUMMARY_KEYS
                                       if any(r[k] is not None for r in summary_rows)]
    columns += ["gate_converged", "status", "error"]
    lines = [",".join(columns)]
    for row in summary_rows:
        cells = []
        for col in columns:
            value = row.get(col)
            if value is None:
                cells.append("")
            elif isinstance(value, float):
                cells.append("%.12g" % value)
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    (out_dir / SUMMARY_BASENAME).write_text("\n".join(lines) + "\n")

    analysis = {
        "status": "ok" if all_ok else "degraded",
        "kind": "sweep",
        "axis": axis,
        "engine": base.cfg.engine,
        "config_hash": config_hash(base.cfg),
        "n_points": len(values),
        "kappa0_fs1": kappa0,
        "reference_error": ref_err,
        "rows": summary_rows,
    }
    analysis = _jsonable(analysis)
    with open(out_dir / ANALYSIS_BASENAME, "w") as fh:
        json.dump(analysis, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return RunOutcome(out_dir=out_dir, analysis=analysis,
                      status=analysis["status"], gate_ok=all_ok)


def frequency_sweep(cfg: ExperimentConfig, *, workers: int = 1) -> RunOutcome:
    """Sweep the cavity frequency; the config must carry an omega_c axis."""
    if cfg.sweep is None or cfg.sweep.axis != "omega_c":
        raise ConfigError("frequency_sweep needs a [sweep] section with axis = 'omega_c'")
    return sweep_experiment(cfg, workers=workers)


# ---------------------------------------------------------------------------
# report


def report(run_dir) -> str:
    """Human-readable summary of a completed run or sweep directory."""
    run_dir = Path(run_dir)
    missing = [name for name in (CONFIG_BASENAME, ANALYSIS_BASENAME)
               if not (run_dir / name).exists()]
    if (run_dir / ANALYSIS_BASENAME).exists():
        with open(run_dir / ANALYSIS_BASENAME) as fh:
            analysis = json.load(fh)
    else:
        analysis = None
    if analysis is None:
        lines = [f"run directory: {run_dir}", "missing artifacts:"]
        lines += [f"  - {name}" for name in missing]
        return "\n".join(lines)

    lines = [f"run directory: {run_dir}"]
    if analysis.get("kind") == "sweep":
        lines.append(f"sweep over {analysis['axis']} ({analysis['n_points']} points), "
                     f"engine {analysis['engine']}, status {analysis['status']}")
        if analysis.get("kappa0_fs1") is not None:
            lines.append(f"out-of-cavity rate kappa0 = {analysis['kappa0_fs1']:.6g} 1/fs")
        rows = analysis.get("rows", [])
        if rows:
            columns = list(rows[0])
            widths = {c: max(len(c), 12) for c in columns}
            lines.append("  ".join(c.ljust(widths[c]) for c in columns))
            for row in rows:
                cells = []
                for c in columns:
                    v = row.get(c)
                    text = "" if v is None else (
                        "%.6g" % v if isinstance(v, float) else str(v))
                    cells.append(text.ljust(widths[c]))
                lines.append("  ".join(cells).rstrip())
        unconverged = any(r.get("gate_converged") == 0 or r.get("status") != "ok"
                          for r in rows)
        if unconverged:
            lines.append("UNCONVERGED: one or more points failed a convergence gate")
    else:
        lines.append(f"engine {analysis.get('engine')}, "
                     f"start {analysis.get('initial_condition')}, "
                     f"N = {analysis.get('n_molecules')}, "
                     f"status {analysis.get('status')}")
        lines.append(f"cavity frequency {analysis.get('omega_c_cm1', float('nan')):.4f} cm-1 "
                     f"(molecular fundamental {analysis.get('fundamental_cm1', float('nan')):.4f})")
        rate = analysis.get("rate")
        if rate:
            lines.append(f"forward rate kappa = {rate['kappa_fs1']:.6g} 1/fs over plateau "
                         f"[{rate['plateau_window_fs'][0]:.1f}, "
                         f"{rate['plateau_window_fs'][1]:.1f}] fs "
                         f"(flatness {rate['plateau_flatness']:.3f})")
        fit = analysis.get("fit")
        if fit:
            lines.append(f"decay-rate fit kappa = {fit['kappa_fs1']:.6g} 1/fs "
                         f"(a = {fit['a']:.6g}, b = {fit['b']:.6g})")
        if analysis.get("rate_error"):
            lines.append(f"rate analysis: {analysis['rate_error']}")
        for name, gate in sorted(analysis.get("gates", {}).items()):
            if isinstance(gate, dict):
                verdict = "pass" if gate.get("converged") else "FAIL"
                detail = ", ".join(f"{k} = {v:.3g}" for k, v in gate.items()
                                   if isinstance(v, float))
                lines.append(f"gate {name}: {verdict} ({detail})")
            else:
                lines.append(f"gate {name}: {gate}")
        if not gates_converged(analysis):
            lines.append("UNCONVERGED: a convergence gate failed; "
                         "results are not trustworthy")
        if analysis.get("status") == "partial":
            lines.append(f"partial run: {analysis.get('points_done')} of "
                         f"{analysis.get('points_total')} output points; resume with "
                         f"--resume {run_dir / CHECKPOINT_BASENAME}")
    if missing:
        lines.append("missing artifacts:")
        lines += [f"  - {name}" for name in missing]
    return "\n".join(lines)
