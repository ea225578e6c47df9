"""Experiment configuration: TOML parsing, validation, canonical echo.

Configs are sectioned key-value files. Every physical quantity accepts
either a bare number in the documented default unit or a string with an
explicit unit ("129 cm-1", "1 ps", "0.003 au"). All internal values are
atomic units except times, which stay in femtoseconds until an engine
needs them.

Unit reference (pinned):
    1 Hartree = 219474.6313632 cm^-1
    1 a.u. of time = 0.02418884254 fs
    k_B = 3.166811563e-6 Hartree/K
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace

import tomli

from .errors import ConfigError
from .models import Model2Params
from .units import AU_TO_FS, CM_TO_HARTREE

ENGINES = ("heom", "meanfield", "closed")
INITIAL_CONDITIONS = ("uncorrelated", "correlated", "reactant_thermal")
MODEL_KINDS = ("model1", "model2")
SWEEP_AXES = ("omega_c", "tau_c", "N")
COUPLING_SCALINGS = ("constant_rho", "constant_V")
ENGINE_VARIANTS = ("auto", "product", "symmetric")
RATE_MODES = ("auto", "forward", "fit_decay", "none")
HEOM_METHODS = ("rk45", "krylov")

# initial conditions each engine can realize
COMPATIBLE_STARTS = {
    "closed": ("uncorrelated", "correlated"),
    "meanfield": ("uncorrelated", "reactant_thermal"),
    "heom": ("uncorrelated", "reactant_thermal"),
}

_ENERGY_UNITS = {
    "au": 1.0,
    "hartree": 1.0,
    "cm-1": CM_TO_HARTREE,
    "cm^-1": CM_TO_HARTREE,
    "1/cm": CM_TO_HARTREE,
}
_TIME_UNITS_FS = {
    "fs": 1.0,
    "ps": 1000.0,
    "au": AU_TO_FS,
}

# model parameter overrides that carry energy units; everything else is a
# bare atomic-unit number
_MODEL_ENERGY_KEYS = ("omega_b", "e_b")
_MODEL2_KEYS = tuple(f.name for f in fields(Model2Params))


def _bad(path: str, msg: str) -> ConfigError:
    return ConfigError(f"{path}: {msg}")


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _bad(path, f"expected a number, got {value!r}")
    return float(value)


def _split_quantity(text: str, path: str) -> tuple[float, str]:
    parts = text.split()
    if len(parts) != 2:
        raise _bad(path, f"expected '<number> <unit>', got {text!r}")
    try:
        num = float(parts[0])
    except ValueError:
        raise _bad(path, f"cannot parse number in {text!r}") from None
    return num, parts[1].lower()


def parse_energy(value, path: str) -> float:
    """Energy/frequency in atomic units; bare numbers are already a.u."""
    if isinstance(value, str):
        num, unit = _split_quantity(value, path)
        if unit not in _ENERGY_UNITS:
            raise _bad(path, f"unknown energy unit {unit!r}; use one of {sorted(_ENERGY_UNITS)}")
        return num * _ENERGY_UNITS[unit]
    return _as_number(value, path)


def parse_time_fs(value, path: str, *, allow_inf: bool = False) -> float:
    """Time in femtoseconds; bare numbers are already fs."""
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinite"):
            if not allow_inf:
                raise _bad(path, "must be finite")
            return math.inf
        num, unit = _split_quantity(value, path)
        if unit not in _TIME_UNITS_FS:
            raise _bad(path, f"unknown time unit {unit!r}; use one of {sorted(_TIME_UNITS_FS)}")
        return num * _TIME_UNITS_FS[unit]
    return _as_number(value, path)


def _expect_table(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise _bad(path, f"expected a section, got {value!r}")
    return value


def _reject_unknown(table: dict, known, path: str) -> None:
    for key in table:
        if key not in known:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown key '{where}'")


@dataclass(frozen=True)
class SolventSection:
    """Debye bath on the reaction coordinate (a.u.)."""

    reorganization: float
    cutoff: float


@dataclass(frozen=True)
class ModelSection:
    kind: str = "model2"
    temperature: float = 300.0
    overrides: dict = field(default_factory=dict)
    solvent: SolventSection | None = None


@dataclass(frozen=True)
class CavitySection:
    omega_c: float | str = "auto"  # a.u., or "auto" for the molecular fundamental
    eta: float | None = None       # dimensionless coupling (exclusive with g)
    g: float | None = None         # coupling in inverse-dipole a.u.
    scaling: str = "constant_rho"
    dse: bool = True
    tau_c_fs: float = math.inf
    orientations: str | tuple[float, ...] = "aligned"


@dataclass(frozen=True)
class TimeSection:
    t_max_fs: float = 100.0
    dt_out_fs: float = 1.0
    dt_fs: float | None = None  # mean-field substep; default dt_out / 4


@dataclass(frozen=True)
class NumericsSection:
    depth: int = 3
    pade_terms: int | None = None
    levels: int | None = None  # default: 6 for model2, 4 for model1
    n_fock: int = 20
    dim_budget: int = 2_000_000
    variant: str = "auto"
    propagator_tol: float = 1e-10
    rtol: float = 1e-8
    atol: float = 1e-12
    heom_method: str = "rk45"
    truncation_check: bool = True
    depth_check: bool = False


@dataclass(frozen=True)
class AnalysisSection:
    rate: str = "auto"
    t_star_fs: float | None = None


@dataclass(frozen=True)
class SweepSection:
    axis: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class CheckpointSection:
    every_s: float | None = None
    stop_after_points: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    cavity: CavitySection = field(default_factory=CavitySection)
    time: TimeSection = field(default_factory=TimeSection)
    numerics: NumericsSection = field(default_factory=NumericsSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    sweep: SweepSection | None = None
    checkpoint: CheckpointSection = field(default_factory=CheckpointSection)
    engine: str = "closed"
    initial_condition: str = "uncorrelated"
    n_molecules: int = 1
    seed: int = 0
    output: str = "run_output"


def _parse_model(table: dict) -> ModelSection:
    known = ("kind", "temperature", "solvent") + _MODEL_ENERGY_KEYS
    # free-form numeric overrides are allowed for the proton-transfer model
    kind = table.get("kind", "model2")
    if kind not in MODEL_KINDS:
        raise _bad("model.kind", f"expected one of {MODEL_KINDS}, got {kind!r}")
    overrides = {}
    solvent = None
    temperature = 300.0
    for key, value in table.items():
        path = f"model.{key}"
        if key == "kind":
            continue
        if key == "temperature":
            temperature = _as_number(value, path)
            if temperature <= 0.0:
                raise _bad(path, "must be positive (kelvin)")
        elif key == "solvent":
            sub = _expect_table(value, path)
            _reject_unknown(sub, ("reorganization", "cutoff"), path)
            if "reorganization" not in sub or "cutoff" not in sub:
                raise _bad(path, "needs both 'reorganization' and 'cutoff'")
            solvent = SolventSection(
                reorganization=parse_energy(sub["reorganization"], f"{path}.reorganization"),
                cutoff=parse_energy(sub["cutoff"], f"{path}.cutoff"),
            )
        elif kind == "model1" and key in _MODEL_ENERGY_KEYS:
            overrides[key] = parse_energy(value, path)
        elif kind == "model2" and key in _MODEL2_KEYS:
            overrides[key] = _as_number(value, path)
        else:
            raise ConfigError(f"unknown key '{path}'")
    return ModelSection(kind=kind, temperature=temperature, overrides=overrides, solvent=solvent)


def _parse_orientations(value, path: str):
    if isinstance(value, str):
        if value not in ("aligned", "disordered"):
            raise _bad(path, f"expected 'aligned', 'disordered' or a cosine list, got {value!r}")
        return value
    if isinstance(value, list):
        out = []
        for k, item in enumerate(value):
            c = _as_number(item, f"{path}[{k}]")
            if abs(c) > 1.0:
                raise _bad(f"{path}[{k}]", f"cosine {c} lies outside [-1, 1]")
            out.append(c)
        if not out:
            raise _bad(path, "cosine list must not be empty")
        return tuple(out)
    raise _bad(path, f"expected 'aligned', 'disordered' or a cosine list, got {value!r}")


def _parse_cavity(table: dict) -> CavitySection:
    known = ("omega_c", "eta", "g", "scaling", "dse", "tau_c", "orientations")
    _reject_unknown(table, known, "cavity")
    omega_c = table.get("omega_c", "auto")
    if isinstance(omega_c, str) and omega_c.strip().lower() == "auto":
        omega_c = "auto"
    else:
        omega_c = parse_energy(omega_c, "cavity.omega_c")
        if omega_c <= 0.0:
            raise _bad("cavity.omega_c", "must be positive")
    eta = table.get("eta")
    g = table.get("g")
    if eta is not None and g is not None:
        raise _bad("cavity.eta", "give either 'eta' or 'g', not both")
    if eta is not None:
        eta = _as_number(eta, "cavity.eta")
    if g is not None:
        g = _as_number(g, "cavity.g")
    scaling = table.get("scaling", "constant_rho")
    if scaling not in COUPLING_SCALINGS:
        raise _bad("cavity.scaling", f"expected one of {COUPLING_SCALINGS}, got {scaling!r}")
    dse = table.get("dse", True)
    if not isinstance(dse, bool):
        raise _bad("cavity.dse", f"expected a boolean, got {dse!r}")
    tau_c = parse_time_fs(table.get("tau_c", math.inf), "cavity.tau_c", allow_inf=True)
    if tau_c <= 0.0:
        raise _bad("cavity.tau_c", "must be positive")
    orientations = _parse_orientations(table.get("orientations", "aligned"), "cavity.orientations")
    return CavitySection(
        omega_c=omega_c, eta=eta, g=g, scaling=scaling, dse=dse,
        tau_c_fs=tau_c, orientations=orientations,
    )


def _parse_time(table: dict) -> TimeSection:
    _reject_unknown(table, ("t_max", "dt_out", "dt"), "time")
    t_max = parse_time_fs(table.get("t_max", 100.0), "time.t_max")
    dt_out = parse_time_fs(table.get("dt_out", 1.0), "time.dt_out")
    dt = table.get("dt")
    if dt is not None:
        dt = parse_time_fs(dt, "time.dt")
        if dt <= 0.0:
            raise _bad("time.dt", "must be positive")
    if t_max <= 0.0 or dt_out <= 0.0:
        raise _bad("time.t_max", "t_max and dt_out must be positive")
    n = t_max / dt_out
    if abs(n - round(n)) > 1e-9 * max(n, 1.0) or round(n) < 1:
        raise _bad("time.t_max", f"must be a positive multiple of dt_out, got {t_max}/{dt_out}")
    return TimeSection(t_max_fs=t_max, dt_out_fs=dt_out, dt_fs=dt)


def _parse_int(table, key, default, path, minimum):
    value = table.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise _bad(f"{path}.{key}", f"expected an integer, got {value!r}")
    if value < minimum:
        raise _bad(f"{path}.{key}", f"must be >= {minimum}, got {value}")
    return value


def _parse_numerics(table: dict) -> NumericsSection:
    known = ("depth", "pade_terms", "levels", "n_fock", "dim_budget", "variant",
             "propagator_tol", "rtol", "atol", "heom_method", "truncation_check",
             "depth_check")
    _reject_unknown(table, known, "numerics")
    variant = table.get("variant", "auto")
    if variant not in ENGINE_VARIANTS:
        raise _bad("numerics.variant", f"expected one of {ENGINE_VARIANTS}, got {variant!r}")
    method = table.get("heom_method", "rk45")
    if method not in HEOM_METHODS:
        raise _bad("numerics.heom_method", f"expected one of {HEOM_METHODS}, got {method!r}")
    flags = {}
    for key in ("truncation_check", "depth_check"):
        flag = table.get(key, NumericsSection.__dataclass_fields__[key].default)
        if not isinstance(flag, bool):
            raise _bad(f"numerics.{key}", f"expected a boolean, got {flag!r}")
        flags[key] = flag
    tols = {}
    for key in ("propagator_tol", "rtol", "atol"):
        value = _as_number(table.get(key, getattr(NumericsSection, key)), f"numerics.{key}")
        if not 0.0 < value < 1.0:
            raise _bad(f"numerics.{key}", f"must be in (0, 1), got {value}")
        tols[key] = value
    return NumericsSection(
        depth=_parse_int(table, "depth", 3, "numerics", 0),
        pade_terms=_parse_int(table, "pade_terms", None, "numerics", 0),
        levels=_parse_int(table, "levels", None, "numerics", 2),
        n_fock=_parse_int(table, "n_fock", 20, "numerics", 2),
        dim_budget=_parse_int(table, "dim_budget", 2_000_000, "numerics", 1),
        variant=variant,
        heom_method=method,
        **flags,
        **tols,
    )


def _parse_analysis(table: dict) -> AnalysisSection:
    _reject_unknown(table, ("rate", "t_star"), "analysis")
    rate = table.get("rate", "auto")
    if rate not in RATE_MODES:
        raise _bad("analysis.rate", f"expected one of {RATE_MODES}, got {rate!r}")
    t_star = table.get("t_star")
    if t_star is not None:
        t_star = parse_time_fs(t_star, "analysis.t_star")
        if t_star <= 0.0:
            raise _bad("analysis.t_star", "must be positive")
    return AnalysisSection(rate=rate, t_star_fs=t_star)


def _parse_sweep(table: dict) -> SweepSection:
    _reject_unknown(table, ("axis", "values", "start", "stop", "count"), "sweep")
    axis = table.get("axis")
    if axis not in SWEEP_AXES:
        raise _bad("sweep.axis", f"expected one of {SWEEP_AXES}, got {axis!r}")

    explicit = "values" in table
    gridded = any(k in table for k in ("start", "stop", "count"))
    if explicit == gridded:
        raise _bad("sweep.values", "give either an explicit 'values' list or start/stop/count")

    def one(value, path):
        if axis == "omega_c":
            v = parse_energy(value, path)
            if v <= 0.0:
                raise _bad(path, "must be positive")
            return v
        if axis == "tau_c":
            v = parse_time_fs(value, path, allow_inf=True)
            if v <= 0.0:
                raise _bad(path, "must be positive")
            return v
        if isinstance(value, bool) or not isinstance(value, (int, float)) \
                or value < 1 or value != round(value):
            raise _bad(path, f"molecule counts must be positive integers, got {value!r}")
        return float(value)

    if explicit:
        raw = table["values"]
        if not isinstance(raw, list) or not raw:
            raise _bad("sweep.values", "expected a non-empty list")
        values = tuple(one(v, f"sweep.values[{k}]") for k, v in enumerate(raw))
    else:
        for key in ("start", "stop", "count"):
            if key not in table:
                raise _bad(f"sweep.{key}", "start/stop/count must all be given")
        count = table["count"]
        if isinstance(count, bool) or not isinstance(count, int) or count < 2:
            raise _bad("sweep.count", f"expected an integer >= 2, got {count!r}")
        lo = one(table["start"], "sweep.start")
        hi = one(table["stop"], "sweep.stop")
        if not hi > lo:
            raise _bad("sweep.stop", "must exceed sweep.start")
        step = (hi - lo) / (count - 1)
        values = tuple(lo + step * k for k in range(count))
        if axis == "N":
            values = tuple(float(int(round(v))) for v in values)
    return SweepSection(axis=axis, values=values)


def _parse_checkpoint(table: dict) -> CheckpointSection:
    _reject_unknown(table, ("every_s", "stop_after_points"), "checkpoint")
    every = table.get("every_s")
    if every is not None:
        every = _as_number(every, "checkpoint.every_s")
        if every < 0.0:
            raise _bad("checkpoint.every_s", "must be >= 0")
    stop = _parse_int(table, "stop_after_points", None, "checkpoint", 1)
    return CheckpointSection(every_s=every, stop_after_points=stop)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate an experiment file.

    All defaults are resolved here except the 'auto' cavity frequency,
    which needs the built molecule and is resolved by the runner (the
    echoed config always carries the resolved number).

    Raises
    ------
    ConfigError
        On syntax errors, unknown keys, unit mistakes, or incompatible
        engine / initial-condition combinations, naming the failing key.
    """
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"config syntax error: {err}") from None

    known_top = ("model", "cavity", "time", "numerics", "analysis", "sweep",
                 "checkpoint", "engine", "initial_condition", "n_molecules",
                 "seed", "output")
    _reject_unknown(raw, known_top, "")

    engine = raw.get("engine", "closed")
    if engine not in ENGINES:
        raise _bad("engine", f"expected one of {ENGINES}, got {engine!r}")
    start = raw.get("initial_condition", "uncorrelated")
    if start not in INITIAL_CONDITIONS:
        raise _bad("initial_condition", f"expected one of {INITIAL_CONDITIONS}, got {start!r}")
    if start not in COMPATIBLE_STARTS[engine]:
        raise _bad(
            "initial_condition",
            f"{start!r} is not available with the {engine!r} engine; "
            f"compatible starts: {COMPATIBLE_STARTS[engine]}",
        )

    n_molecules = raw.get("n_molecules", 1)
    if isinstance(n_molecules, bool) or not isinstance(n_molecules, int) or n_molecules < 1:
        raise _bad("n_molecules", f"expected a positive integer, got {n_molecules!r}")

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise _bad("seed", f"expected a nonnegative integer, got {seed!r}")

    output = raw.get("output", "run_output")
    if not isinstance(output, str) or not output:
        raise _bad("output", f"expected a non-empty path prefix, got {output!r}")

    cfg = ExperimentConfig(
        model=_parse_model(_expect_table(raw.get("model", {}), "model")),
        cavity=_parse_cavity(_expect_table(raw.get("cavity", {}), "cavity")),
        time=_parse_time(_expect_table(raw.get("time", {}), "time")),
        numerics=_parse_numerics(_expect_table(raw.get("numerics", {}), "numerics")),
        analysis=_parse_analysis(_expect_table(raw.get("analysis", {}), "analysis")),
        sweep=(_parse_sweep(_expect_table(raw["sweep"], "sweep")) if "sweep" in raw else None),
        checkpoint=_parse_checkpoint(_expect_table(raw.get("checkpoint", {}), "checkpoint")),
        engine=engine,
        initial_condition=start,
        n_molecules=n_molecules,
        seed=seed,
        output=output,
    )
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: ExperimentConfig) -> None:
    if cfg.engine == "heom" and cfg.n_molecules != 1:
        raise _bad("n_molecules", "the heom engine propagates one explicit molecule; "
                                  "use meanfield or closed for ensembles")
    if cfg.engine == "closed" and math.isfinite(cfg.cavity.tau_c_fs):
        raise _bad("cavity.tau_c", "the closed engine has no loss channel; "
                                   "leave tau_c infinite or use heom/meanfield")
    if cfg.engine == "meanfield":
        if cfg.cavity.orientations != "aligned":
            raise _bad("cavity.orientations",
                       "the mean-field reduction assumes aligned molecules")
        if cfg.cavity.scaling != "constant_rho":
            raise _bad("cavity.scaling",
                       "the mean-field reduction is defined for constant_rho scaling")
    if isinstance(cfg.cavity.orientations, tuple) and \
            len(cfg.cavity.orientations) != cfg.n_molecules:
        if cfg.sweep is None or cfg.sweep.axis != "N":
            raise _bad("cavity.orientations",
                       f"got {len(cfg.cavity.orientations)} cosines for "
                       f"{cfg.n_molecules} molecules")
    if cfg.sweep is not None and cfg.sweep.axis == "tau_c" and cfg.engine == "closed":
        raise _bad("sweep.axis", "the closed engine has no loss channel to sweep")
    if cfg.model.kind == "model2" and cfg.model.solvent is not None:
        raise _bad("model.solvent", "the proton-transfer model ships without a solvent "
                                    "bath; only model1 takes one")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return '"inf"'
        return repr(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, tuple):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise ConfigError(f"cannot format config value {value!r}")


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical text form of a config; parse_config inverts it exactly."""
    lines = []
    for key in ("engine", "initial_condition", "n_molecules", "seed", "output"):
        lines.append(f"{key} = {_format_value(getattr(cfg, key))}")

    lines.append("\n[model]")
    lines.append(f"kind = {_format_value(cfg.model.kind)}")
    lines.append(f"temperature = {_format_value(cfg.model.temperature)}")
    for key in sorted(cfg.model.overrides):
        lines.append(f"{key} = {_format_value(cfg.model.overrides[key])}")
    if cfg.model.solvent is not None:
        lines.append("\n[model.solvent]")
        lines.append(f"reorganization = {_format_value(cfg.model.solvent.reorganization)}")
        lines.append(f"cutoff = {_format_value(cfg.model.solvent.cutoff)}")

    lines.append("\n[cavity]")
    lines.append(f"omega_c = {_format_value(cfg.cavity.omega_c)}")
    if cfg.cavity.eta is not None:
        lines.append(f"eta = {_format_value(cfg.cavity.eta)}")
    if cfg.cavity.g is not None:
        lines.append(f"g = {_format_value(cfg.cavity.g)}")
    lines.append(f"scaling = {_format_value(cfg.cavity.scaling)}")
    lines.append(f"dse = {_format_value(cfg.cavity.dse)}")
    lines.append(f"tau_c = {_format_value(cfg.cavity.tau_c_fs)}")
    lines.append(f"orientations = {_format_value(cfg.cavity.orientations)}")

    lines.append("\n[time]")
    lines.append(f"t_max = {_format_value(cfg.time.t_max_fs)}")
    lines.append(f"dt_out = {_format_value(cfg.time.dt_out_fs)}")
    if cfg.time.dt_fs is not None:
        lines.append(f"dt = {_format_value(cfg.time.dt_fs)}")

    lines.append("\n[numerics]")
    for f in fields(NumericsSection):
        value = getattr(cfg.numerics, f.name)
        if value is None:
            continue
        lines.append(f"{f.name} = {_format_value(value)}")

    lines.append("\n[analysis]")
    lines.append(f"rate = {_format_value(cfg.analysis.rate)}")
    if cfg.analysis.t_star_fs is not None:
        lines.append(f"t_star = {_format_value(cfg.analysis.t_star_fs)}")

    if cfg.sweep is not None:
        lines.append("\n[sweep]")
        lines.append(f"axis = {_format_value(cfg.sweep.axis)}")
        lines.append(f"values = {_format_value(cfg.sweep.values)}")

    ck = cfg.checkpoint
    if ck.every_s is not None or ck.stop_after_points is not None:
        lines.append("\n[checkpoint]")
        if ck.every_s is not None:
            lines.append(f"every_s = {_format_value(ck.every_s)}")
        if ck.stop_after_points is not None:
            lines.append(f"stop_after_points = {_format_value(ck.stop_after_points)}")

    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """Short stable identifier of a resolved config."""
    return hashlib.sha256(emit_config(cfg).encode()).hexdigest()[:12]


def with_axis_value(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    """The per-point config of a sweep, with the swept key substituted."""
    if axis == "omega_c":
        return replace(cfg, sweep=None, cavity=replace(cfg.cavity, omega_c=float(value)))
    if axis == "tau_c":
        return replace(cfg, sweep=None, cavity=replace(cfg.cavity, tau_c_fs=float(value)))
    if axis == "N":
        return replace(cfg, sweep=None, n_molecules=int(round(value)))
    raise ConfigError(f"unknown sweep axis {axis!r}")
