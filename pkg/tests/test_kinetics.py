"""Side operators, population traces, rate extraction, and sweep drivers."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cavkin.errors import ConfigError, KineticRegimeError
from cavkin.kinetics import (
    PLATEAU_DRIFT_TOL,
    RateResult,
    SideOperator,
    SweepPoint,
    equilibrium_populations,
    fit_decay_rate,
    forward_rate,
    grid_side_operator,
    instantaneous_rate,
    parameter_sweep,
    population_traces,
    reactant_initial_density,
    side_operator_from_levels,
)
from cavkin.models import (
    Model1Params,
    Model2Params,
    build_model1_molecule,
    build_model2_molecule,
    model2_dividing_point,
    truncate_model2,
)
from cavkin.quantum import HilbertSpace, Operator
from cavkin.timeseries import TimeSeries
from cavkin.units import AU_TO_FS, KB_HARTREE

AU_PER_FS = 1.0 / AU_TO_FS
BETA_300K = 1.0 / (KB_HARTREE * 300.0)


@pytest.fixture(scope="module")
def mol1():
    return build_model1_molecule(Model1Params())


@pytest.fixture(scope="module")
def mol2():
    return build_model2_molecule(Model2Params())


@pytest.fixture(scope="module")
def side1(mol1):
    return side_operator_from_levels(mol1.levels, 0.0)


@pytest.fixture(scope="module")
def h1(mol1):
    return Operator(mol1.levels.space(), mol1.levels.hamiltonian, hermitian=True)


def first_order_traces(kappa_fs, p_p_eq, t_max_fs=3000.0, dt_fs=10.0):
    """Closed-form two-state kinetics: P_P(t) = <P_P>(1 - e^{-(k+k')t})."""
    lam = kappa_fs / p_p_eq
    t_fs = np.arange(0.0, t_max_fs + dt_fs / 2, dt_fs)
    p_p = p_p_eq * (1.0 - np.exp(-lam * t_fs))
    return TimeSeries(t_fs * AU_PER_FS, {"P_P": p_p, "P_R": 1.0 - p_p})


class TestSideOperator:
    def test_grid_projector_exact(self, mol2):
        q_star = model2_dividing_point(Model2Params())
        side = grid_side_operator(mol2.space, q_star)
        h = side.operator.matrix
        assert np.array_equal(h @ h, h)
        r_op = np.diag(mol2.space.grid)
        assert np.array_equal(h @ r_op, r_op @ h)

    def test_complement_exact(self, mol2):
        side = grid_side_operator(mol2.space, 0.0)
        total = side.operator.matrix + side.complement.matrix
        assert np.array_equal(total, np.eye(mol2.space.dim))

    def test_above_side(self):
        space = HilbertSpace("x", 4, "dvr_grid", grid=np.array([-2.0, -1.0, 1.0, 2.0]))
        below = grid_side_operator(space, 0.0, "below")
        above = grid_side_operator(space, 0.0, "above")
        assert np.array_equal(np.diag(below.operator.matrix), [1.0, 1.0, 0.0, 0.0])
        assert np.array_equal(np.diag(above.operator.matrix), [0.0, 0.0, 1.0, 1.0])

    def test_from_levels(self, mol1, side1):
        assert side1.dividing_point == 0.0
        assert side1.reactant_side == "below"
        evals = np.linalg.eigvalsh(side1.operator.matrix)
        assert evals[0] >= -0.02 and evals[-1] <= 1.02
        assert np.allclose(side1.operator.matrix, mol1.levels.side)

    def test_rejects_bad_side(self, mol2):
        with pytest.raises(ConfigError, match="reactant_side"):
            grid_side_operator(mol2.space, 0.0, "left")

    def test_rejects_eigenvalue_range(self, mol2):
        op = Operator(mol2.space, 2.0 * np.eye(mol2.space.dim), hermitian=True)
        with pytest.raises(ConfigError, match="eigenvalues"):
            SideOperator(0.0, "below", op)

    def test_rejects_non_grid_space(self, mol1):
        with pytest.raises(ConfigError, match="dvr_grid"):
            grid_side_operator(mol1.levels.space(), 0.0)


class TestPopulationTraces:
    def test_fully_reactant_state(self, mol2):
        side = grid_side_operator(mol2.space, model2_dividing_point(Model2Params()))
        rho = np.zeros((mol2.space.dim, mol2.space.dim))
        rho[10, 10] = 1.0  # grid point deep in the donor well
        traces = population_traces([(0.0, rho), (1.0, rho)], side)
        assert np.array_equal(traces.channels["P_R"], [1.0, 1.0])
        assert np.array_equal(traces.channels["P_P"], [0.0, 0.0])

    def test_complement_machine_precision(self, mol1, side1, rng):
        dim = mol1.levels.dim
        snaps = []
        for k in range(6):
            a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
            m = a @ a.conj().T
            snaps.append((float(k), m / np.trace(m).real))
        traces = population_traces(snaps, side1)
        total = traces.channels["P_R"] + traces.channels["P_P"]
        assert np.abs(total - 1.0).max() <= 1e-14

    def test_symmetric_equilibrium(self, mol1, side1, h1):
        w = np.exp(-BETA_300K * (mol1.levels.energies - mol1.levels.energies[0]))
        rho = np.diag(w / w.sum())
        traces = population_traces([(0.0, rho)], side1)
        assert abs(traces.channels["P_R"][0] - 0.5) < 1e-12
        p_r, p_p = equilibrium_populations(h1, side1, BETA_300K)
        assert abs(p_r - 0.5) < 1e-12
        assert p_r + p_p == 1.0

    def test_accepts_run_objects(self, mol1, side1):
        class FakeRun:
            snapshots = [(0.0, np.eye(mol1.levels.dim) / mol1.levels.dim)]

        traces = population_traces(FakeRun(), side1)
        assert traces.times.size == 1
        assert traces.meta["reactant_side"] == "below"

    def test_rejects_empty(self, side1):
        with pytest.raises(ConfigError, match="snapshot"):
            population_traces([], side1)

    def test_rejects_shape_mismatch(self, side1):
        with pytest.raises(ConfigError, match="shape"):
            population_traces([(0.0, np.eye(3))], side1)


class TestReactantInitialDensity:
    def test_model1_trace_and_support(self, h1, side1):
        rho = reactant_initial_density(h1, side1, BETA_300K)
        assert abs(np.trace(rho.matrix).real - 1.0) < 1e-12
        p_r = np.einsum("ij,ji->", side1.operator.matrix, rho.matrix).real
        assert p_r >= 0.99
        assert abs(p_r - 0.999475) < 5e-6

    def test_model2_support(self, mol2):
        p = Model2Params()
        lev = truncate_model2(mol2, 4)
        side = side_operator_from_levels(lev, model2_dividing_point(p))
        h = Operator(lev.space(), lev.hamiltonian, hermitian=True)
        rho = reactant_initial_density(h, side, BETA_300K)
        p_r = np.einsum("ij,ji->", side.operator.matrix, rho.matrix).real
        # ground state is genuinely delocalized, so support is weaker than Model I
        assert abs(p_r - 0.969113) < 1e-4
        assert np.linalg.eigvalsh(rho.matrix)[0] >= -1e-8

    def test_zero_temperature_limit(self):
        space = HilbertSpace("toy", 2, "dvr_grid", grid=np.array([-1.0, 1.0]))
        h = Operator(space, np.array([[0.0, -0.01], [-0.01, 0.002]]), hermitian=True)
        side = grid_side_operator(space, 0.0)
        rho = reactant_initial_density(h, side, 1e7)
        _, vec = np.linalg.eigh(h.matrix)
        ground = np.outer(vec[:, 0], vec[:, 0])
        assert np.abs(rho.matrix - ground).max() < 1e-6

    def test_no_reactant_weight(self):
        space = HilbertSpace("toy", 2, "dvr_grid", grid=np.array([-1.0, 1.0]))
        h = Operator(space, np.diag([0.0, 1.0]), hermitian=True)
        side = grid_side_operator(space, 0.0, "above")
        with pytest.raises(ConfigError, match="reactant weight"):
            reactant_initial_density(h, side, 1e7)

    def test_rejects_bad_beta(self, h1, side1):
        for beta in (0.0, -1.0, np.inf):
            with pytest.raises(ConfigError, match="beta"):
                reactant_initial_density(h1, side1, beta)


class TestForwardRate:
    def test_synthetic_first_order(self):
        traces = first_order_traces(1e-3, 0.5)
        res = forward_rate(traces, 0.5)
        assert abs(res.kappa / 1e-3 - 1.0) < 1e-3
        assert res.plateau_flatness < 1e-9
        assert res.equilibrium_p_p == 0.5
        lo, hi = res.plateau_window
        assert lo < 50.0 and hi > 2900.0

    def test_instantaneous_rate_constant(self):
        traces = first_order_traces(1e-3, 0.5)
        series = instantaneous_rate(traces, 0.5)
        kappa_t = series.channels["kappa"]
        assert np.abs(kappa_t / 1e-3 - 1.0).max() < 1e-3

    def test_works_from_p_r_channel(self):
        traces = first_order_traces(1e-3, 0.5)
        only_r = TimeSeries(traces.times, {"P_R": traces.channels["P_R"]})
        res = forward_rate(only_r, 0.5)
        assert abs(res.kappa / 1e-3 - 1.0) < 1e-3

    def test_constant_input_rejected(self):
        t_fs = np.arange(0.0, 500.0, 10.0)
        flat = TimeSeries(t_fs * AU_PER_FS, {"P_P": np.full(t_fs.size, 0.5)})
        with pytest.raises(KineticRegimeError, match="no kinetic regime") as exc:
            forward_rate(flat, 0.5)
        assert exc.value.kappa_trace is not None
        assert exc.value.times_fs.size == t_fs.size - 2

    def test_oscillating_input_rejected(self):
        t_fs = np.arange(0.0, 2000.0 + 1, 10.0)
        p_p = 0.5 * (1.0 - np.exp(-2e-3 * t_fs)) * (1.0 + 0.3 * np.sin(t_fs / 25.0))
        traces = TimeSeries(t_fs * AU_PER_FS, {"P_P": p_p})
        with pytest.raises(KineticRegimeError, match="no kinetic regime"):
            forward_rate(traces, 0.5)

    def test_backward_rate_rejected(self):
        # product population drifting away from the claimed equilibrium
        t_fs = np.arange(0.0, 2000.0 + 1, 10.0)
        traces = TimeSeries(t_fs * AU_PER_FS, {"P_P": 0.5 + 1e-5 * t_fs})
        with pytest.raises(KineticRegimeError):
            forward_rate(traces, 0.5)

    def test_transient_then_plateau(self):
        # short-time slippage decays within ~150 fs, kinetic regime afterwards
        t_fs = np.arange(0.0, 3000.0 + 1, 10.0)
        p_p = 0.5 * (1.0 - np.exp(-2e-3 * t_fs)) - 0.03 * np.exp(-t_fs / 50.0)
        traces = TimeSeries(t_fs * AU_PER_FS, {"P_P": p_p})
        res = forward_rate(traces, 0.5)
        assert res.plateau_window[0] > 50.0
        assert abs(res.kappa / 1e-3 - 1.0) < 5e-3
        assert res.plateau_flatness <= PLATEAU_DRIFT_TOL

    def test_relaxation_from_product_side(self):
        # approaching equilibrium from above gives the same forward rate
        t_fs = np.arange(0.0, 2000.0 + 1, 10.0)
        p_p = 0.5 * (1.0 + 0.8 * np.exp(-2e-3 * t_fs))
        traces = TimeSeries(t_fs * AU_PER_FS, {"P_P": p_p})
        res = forward_rate(traces, 0.5)
        assert abs(res.kappa / 1e-3 - 1.0) < 1e-3

    @given(scale=st.floats(min_value=0.1, max_value=10.0))
    def test_time_scaling_linearity(self, scale):
        base = first_order_traces(1e-3, 0.5, t_max_fs=1000.0)
        scaled = TimeSeries(base.times * scale, {"P_P": base.channels["P_P"]})
        k0 = forward_rate(base, 0.5).kappa
        k1 = forward_rate(scaled, 0.5).kappa
        assert abs(k0 / k1 / scale - 1.0) < 1e-9

    def test_detailed_balance_synthetic(self):
        kf, kb = 1e-3, 4e-3
        p_p_eq = kf / (kf + kb)
        t_fs = np.arange(0.0, 2000.0 + 1, 10.0)
        p_p = p_p_eq * (1.0 - np.exp(-(kf + kb) * t_fs))
        traces = TimeSeries(t_fs * AU_PER_FS, {"P_P": p_p})
        swapped = TimeSeries(t_fs * AU_PER_FS, {"P_P": 1.0 - p_p})
        fwd = forward_rate(traces, p_p_eq)
        bwd = forward_rate(swapped, 1.0 - p_p_eq)
        assert abs(fwd.kappa * (1.0 - p_p_eq) / (bwd.kappa * p_p_eq) - 1.0) < 5e-3

    def test_rejects_bad_equilibrium(self):
        traces = first_order_traces(1e-3, 0.5, t_max_fs=200.0)
        for bad in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ConfigError, match="equilibrium"):
                forward_rate(traces, bad)

    def test_rejects_missing_channels(self):
        t_fs = np.arange(0.0, 100.0, 10.0)
        traces = TimeSeries(t_fs * AU_PER_FS, {"other": np.linspace(0, 1, t_fs.size)})
        with pytest.raises(ConfigError, match="P_P or P_R"):
            forward_rate(traces, 0.5)

    def test_rejects_short_series(self):
        traces = first_order_traces(1e-3, 0.5, t_max_fs=40.0, dt_fs=10.0)
        with pytest.raises(ConfigError, match="points"):
            forward_rate(traces, 0.5)

    def test_rate_result_validation(self):
        with pytest.raises(Exception, match="nonnegative"):
            RateResult(-1.0, (0.0, 1.0), 0.01, 0.5)
        with pytest.raises(Exception, match="flatness"):
            RateResult(1.0, (0.0, 1.0), 0.2, 0.5)


class TestFitDecayRate:
    @staticmethod
    def synthetic_pair(kappa_fs=0.01, a=0.3, b=0.12):
        t_fs = np.arange(0.0, 1000.0 + 1, 5.0)
        theta0 = 0.8 * np.exp(-t_fs / 300.0) + 0.2
        theta = np.exp(-kappa_fs * t_fs) * (theta0 - a) + b
        times = t_fs * AU_PER_FS
        return TimeSeries(times, {"theta": theta0}), TimeSeries(times, {"theta": theta})

    def test_synthetic_recovery(self):
        ref, per = self.synthetic_pair()
        a, b, kappa = fit_decay_rate(ref, per)
        assert abs(kappa / 0.01 - 1.0) < 0.01
        assert abs(a - 0.3) < 1e-3
        assert abs(b - 0.12) < 1e-3

    def test_identical_series(self):
        ref, _ = self.synthetic_pair()
        a, b, kappa = fit_decay_rate(ref, ref)
        assert kappa < 1e-9
        assert abs(a - b) < 1e-8

    def test_zero_rate_offset_pair(self):
        # kappa = 0 exactly: theta = theta0 - a* + b*, only a - b identifiable
        ref, _ = self.synthetic_pair()
        shifted = TimeSeries(ref.times, {"theta": ref.channels["theta"] - 0.1})
        a, b, kappa = fit_decay_rate(ref, shifted)
        assert kappa < 1e-6
        assert abs((a - b) - 0.1) < 1e-6

    def test_rejects_flat_inputs(self):
        ref, _ = self.synthetic_pair()
        flat = TimeSeries(ref.times, {"theta": np.full(ref.times.size, 0.7)})
        with pytest.raises(ConfigError, match="flat"):
            fit_decay_rate(flat, ref)
        with pytest.raises(ConfigError, match="flat"):
            fit_decay_rate(ref, flat)

    def test_rejects_grid_mismatch(self):
        ref, per = self.synthetic_pair()
        other = TimeSeries(per.times * 2.0, dict(per.channels))
        with pytest.raises(ConfigError, match="grid"):
            fit_decay_rate(ref, other)

    def test_channel_selection(self):
        ref, per = self.synthetic_pair()
        two = TimeSeries(ref.times, {"x": ref.channels["theta"], "y": ref.channels["theta"]})
        with pytest.raises(ConfigError, match="channel"):
            fit_decay_rate(two, two)
        a, b, kappa = fit_decay_rate(two, two, channel="x")
        assert kappa < 1e-9
        with pytest.raises(ConfigError, match="not found"):
            fit_decay_rate(two, two, channel="z")


class TestParameterSweep:
    def test_single_point_equals_direct(self):
        def run(w):
            return {"kappa": w**2, "p_r": 1.0 - w}

        rows = parameter_sweep(run, [0.3])
        assert rows == [SweepPoint(0.3, {"kappa": 0.09, "p_r": 0.7}, converged=True)]

    def test_failures_recorded_and_sweep_continues(self):
        def run(w):
            if 0.9 < w < 1.1:
                raise KineticRegimeError("no kinetic regime detected")
            return {"kappa": w}

        rows = parameter_sweep(run, [0.5, 1.0, 1.5])
        assert [r.converged for r in rows] == [True, False, True]
        assert rows[1].data == {}
        assert "kinetic regime" in rows[1].error
        assert rows[0].data["kappa"] == 0.5 and rows[2].data["kappa"] == 1.5

    def test_deterministic(self):
        def run(w):
            return {"kappa": np.sin(w) ** 2}

        grid = np.linspace(0.0, 2.0, 7)
        assert parameter_sweep(run, grid) == parameter_sweep(run, grid)

    def test_unexpected_errors_propagate(self):
        def run(w):
            raise ValueError("bug, not a physics failure")

        with pytest.raises(ValueError):
            parameter_sweep(run, [1.0])
