"""Molecule builders, cavity assembly, and polariton splitting checks."""

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

import cavkin.models as models
from cavkin.errors import ConfigError
from cavkin.models import (
    AssembledModel,
    CavitySpec,
    Model1Params,
    Model2Params,
    MoleculeLevels,
    assemble_light_matter,
    build_model1_molecule,
    build_model2_molecule,
    cavity_mode_operators,
    eta_from_dimensionless,
    fock_lowering,
    model1_potential,
    model2_coupling,
    model2_diabatic_wells,
    model2_dipole,
    model2_dividing_point,
    model2_potential,
    orientation_cosines,
    rabi_splitting,
    sample_orientation_cosines,
    spectator_displacement,
    truncate_model2,
)
from cavkin.quantum import Operator, colbert_miller_kinetic
from cavkin.units import HARTREE_TO_CM


@pytest.fixture(scope="module")
def mol1():
    return build_model1_molecule(Model1Params())


@pytest.fixture(scope="module")
def mol2_grid():
    return build_model2_molecule(Model2Params())


@pytest.fixture(scope="module")
def mol2(mol2_grid):
    return truncate_model2(mol2_grid, 4)


def synthetic_levels(dim: int, seed: int) -> MoleculeLevels:
    rng = np.random.default_rng(seed)
    energies = np.sort(rng.uniform(0.0, 1.0, dim))
    dip = rng.normal(size=(dim, dim))
    dip = 0.5 * (dip + dip.T)
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    side = q @ np.diag(rng.integers(0, 2, dim).astype(float)) @ q.T
    side = 0.5 * (side + side.T)
    return MoleculeLevels(energies, dip, side, label=f"synthetic{seed}")


class TestModel1Potential:
    def test_stationary_values(self):
        p = Model1Params()
        assert model1_potential(p, 0.0) == 0.0
        assert np.isclose(model1_potential(p, p.r_min), -p.e_b, rtol=1e-12)
        assert np.isclose(model1_potential(p, -p.r_min), -p.e_b, rtol=1e-12)

    def test_well_position_formula(self):
        p = Model1Params(omega_b=3e-3, e_b=8e-3)
        r = p.r_min
        # numerical stationarity of the quartic at +-r_min
        h = 1e-6 * r
        assert abs(model1_potential(p, r + h) - model1_potential(p, r - h)) < 1e-12

    def test_parameter_validation(self):
        with pytest.raises(ConfigError):
            Model1Params(omega_b=0.0)
        with pytest.raises(ConfigError):
            Model1Params(e_b=-1.0)
        with pytest.raises(ConfigError):
            Model1Params(n_vib=1)
        with pytest.raises(ConfigError):
            Model1Params(temperature=0.0)
        with pytest.raises(ConfigError):
            Model1Params(solvent="debye")  # type: ignore[arg-type]


class TestBuildModel1:
    def test_doublet_and_fundamental(self, mol1):
        gaps = (mol1.energies - mol1.energies[0]) * HARTREE_TO_CM
        # frozen from the converged grid; the doublet splitting is the
        # tunneling scale, the mean fundamental sits near the design target
        assert np.isclose(gaps[1], 2.050708, rtol=1e-6)
        fundamental = 0.5 * (gaps[2] + (gaps[3] - gaps[1]))
        assert np.isclose(fundamental, 1189.678285, rtol=1e-6)
        assert 1100.0 < fundamental < 1250.0

    def test_delta_definition(self, mol1):
        assert mol1.delta > 0.0
        assert np.isclose(2.0 * mol1.delta, mol1.energies[1] - mol1.energies[0], rtol=1e-14)
        assert mol1.delta < 0.01 * Model1Params().e_b

    def test_ground_state_centered(self, mol1):
        assert abs(mol1.levels.dipole[0, 0]) < 1e-6

    def test_doublet_dipole_sign_convention(self, mol1):
        # (v0+v1)/sqrt(2) must localize on the negative side
        assert mol1.levels.dipole[0, 1] < 0.0
        assert np.isclose(abs(mol1.levels.dipole[0, 1]), 41.415369, rtol=1e-6)

    def test_localized_states(self, mol1):
        vl = mol1.v_left.amplitudes.real
        vr = mol1.v_right.amplitudes.real
        pos_l = vl @ mol1.levels.dipole @ vl
        pos_r = vr @ mol1.levels.dipole @ vr
        assert pos_l < 0.0 < pos_r
        assert np.isclose(pos_l, mol1.levels.dipole[0, 1], rtol=1e-10)
        assert vl @ mol1.levels.side @ vl > 0.99
        assert vr @ mol1.levels.side @ vr < 0.01

    def test_side_diagonal_half(self, mol1):
        # parity eigenstates split evenly across the dividing point
        assert np.allclose(np.diag(mol1.levels.side), 0.5, atol=1e-6)

    def test_edges_converged(self, mol1):
        assert mol1.edge_amplitude < models.EDGE_DECAY_TOL
        assert mol1.grid.size % 2 == 0
        assert np.isclose(mol1.grid[0], -mol1.grid[-1], rtol=1e-12)

    def test_parity_spectrum(self, mol1):
        p = Model1Params()
        kin = colbert_miller_kinetic(mol1.grid, models.MODEL1_MASS)
        h = kin.matrix.real + np.diag(model1_potential(p, mol1.grid))
        e_direct = np.linalg.eigvalsh(h)
        e_reflected = np.linalg.eigvalsh(h[::-1, ::-1])
        assert np.abs(e_direct - e_reflected).max() < 1e-10

    def test_retention_count_does_not_move_levels(self, mol1):
        wide = build_model1_molecule(Model1Params(n_vib=6))
        assert np.allclose(wide.energies[:4], mol1.energies, rtol=1e-8)

    def test_edge_decay_error_names_extension(self, monkeypatch):
        monkeypatch.setattr(models, "EDGE_DECAY_TOL", 0.0)
        monkeypatch.setattr(models, "_GRID_MAX_ATTEMPTS", 1)
        with pytest.raises(ConfigError, match="extend the grid"):
            build_model1_molecule(Model1Params())


class TestModel2:
    def test_dipole_at_expansion_point(self):
        p = Model2Params()
        assert model2_dipole(p, p.q_0) == p.mu_0

    def test_lower_root_matches_two_state_diagonalization(self):
        p = Model2Params()
        for q in (-1.2, -0.5, 0.0, 0.3, 0.9, 1.8):
            v_oh, v_sh = model2_diabatic_wells(p, q)
            k = model2_coupling(p, q)
            lower = scipy.linalg.eigvalsh(np.array([[v_oh, k], [k, v_sh]]))[0]
            assert np.isclose(model2_potential(p, q), lower, rtol=1e-12)

    def test_path_equals_spectator_minimum(self):
        # minimizing the 2d surface over the spectator coordinate at fixed q
        # must land back on the path potential
        p = Model2Params()
        big_q = np.linspace(-3.0, 3.0, 4001)
        for q in (-1.0, -0.4, 0.1, 0.6, 1.4):
            v2d = model2_potential(p, q) + 0.5 * p.mass_spec * p.omega_spec**2 * (
                big_q - spectator_displacement(p, q)
            ) ** 2
            assert abs(v2d.min() - model2_potential(p, q)) < 1e-8

    def test_grid_is_literal(self, mol2_grid):
        g = mol2_grid.space.grid
        assert g.size == 120
        assert g[0] == -1.5 and g[-1] == 2.1

    def test_transition_energy(self, mol2):
        gap = mol2.transition_energy * HARTREE_TO_CM
        assert 119.0 < gap < 139.0
        assert np.isclose(gap, 126.867390, rtol=1e-6)

    def test_higher_gaps_frozen(self, mol2):
        gaps = (mol2.energies - mol2.energies[0]) * HARTREE_TO_CM
        assert np.isclose(gaps[2], 885.0448, rtol=1e-5)
        assert np.isclose(gaps[3], 1536.0185, rtol=1e-5)

    def test_transition_dipole(self, mol2):
        assert mol2.transition_dipole > 0.0
        assert 0.042 * 0.95 < mol2.transition_dipole < 0.042 * 1.05
        assert np.isclose(mol2.transition_dipole, 0.04224975, rtol=1e-5)

    def test_dividing_point(self):
        p = Model2Params()
        q_star = model2_dividing_point(p)
        assert p.q_oh < q_star < p.q_sh
        assert np.isclose(q_star, -0.00608936, atol=1e-7)
        assert model2_potential(p, q_star) > model2_potential(p, q_star - 0.05)
        assert model2_potential(p, q_star) > model2_potential(p, q_star + 0.05)

    def test_ground_state_is_reactant(self, mol2):
        diag = np.diag(mol2.side)
        assert diag[0] > 0.85
        assert diag[1] < 0.15
        evals = np.linalg.eigvalsh(mol2.side)
        assert evals.min() > -1e-9 and evals.max() < 1.0 + 1e-9

    def test_truncation_validation(self, mol2_grid):
        with pytest.raises(ConfigError):
            truncate_model2(mol2_grid, 1)
        with pytest.raises(ConfigError):
            truncate_model2(mol2_grid, 121)

    def test_parameter_validation(self):
        with pytest.raises(ConfigError):
            Model2Params(n_grid=4)
        with pytest.raises(ConfigError):
            Model2Params(q_min=0.0)  # no longer brackets the donor well
        with pytest.raises(ConfigError):
            Model2Params(mass_q=-1.0)


class TestMoleculeLevels:
    def test_truncated(self, mol2):
        two = mol2.truncated(2)
        assert two.dim == 2
        assert np.array_equal(two.energies, mol2.energies[:2])
        assert np.array_equal(two.dipole, mol2.dipole[:2, :2])

    def test_validation(self):
        with pytest.raises(ConfigError, match="ascending"):
            MoleculeLevels(np.array([1.0, 0.0]), np.eye(2), np.eye(2))
        with pytest.raises(ConfigError, match="symmetric"):
            MoleculeLevels(np.array([0.0, 1.0]), np.array([[0.0, 1.0], [0.0, 0.0]]), np.eye(2))
        with pytest.raises(ConfigError, match=r"\[0, 1\]"):
            MoleculeLevels(np.array([0.0, 1.0]), np.eye(2), 2.0 * np.eye(2))
        with pytest.raises(ConfigError):
            MoleculeLevels(np.array([0.0, 1.0]), np.eye(2), np.eye(2)).truncated(3)


class TestCavitySpec:
    def test_validation(self):
        with pytest.raises(ConfigError):
            CavitySpec(omega_c=0.0)
        with pytest.raises(ConfigError):
            CavitySpec(omega_c=0.01, n_fock=1)
        with pytest.raises(ConfigError):
            CavitySpec(omega_c=0.01, coupling_scaling="constant_volume")
        with pytest.raises(ConfigError):
            CavitySpec(omega_c=0.01, g_or_eta=float("nan"))
        with pytest.raises(ConfigError):
            CavitySpec(omega_c=0.01, loss=0.1)  # type: ignore[arg-type]

    def test_orientations_canonicalized(self):
        spec = CavitySpec(omega_c=0.01, orientations=(0.5, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]))
        assert spec.orientations == (0.5, 1.0, 0.0)

    def test_orientations_rejected(self):
        with pytest.raises(ConfigError, match="outside"):
            CavitySpec(omega_c=0.01, orientations=(1.5,))
        with pytest.raises(ConfigError, match="unit length"):
            CavitySpec(omega_c=0.01, orientations=([1.0, 1.0, 0.0],))
        with pytest.raises(ConfigError, match="shape"):
            CavitySpec(omega_c=0.01, orientations=([1.0, 0.0],))

    def test_orientation_count_helpers(self):
        spec = CavitySpec(omega_c=0.01, orientations=(1.0, -0.5))
        assert np.allclose(orientation_cosines(spec, 2), [1.0, -0.5])
        with pytest.raises(ConfigError, match="orientations for"):
            orientation_cosines(spec, 3)
        assert np.allclose(orientation_cosines(CavitySpec(omega_c=0.01), 3), 1.0)

    def test_sampled_cosines(self):
        a = sample_orientation_cosines(64, seed=7)
        b = sample_orientation_cosines(64, seed=7)
        c = sample_orientation_cosines(64, seed=8)
        assert a == b and a != c
        assert all(-1.0 <= x <= 1.0 for x in a)


class TestCavityModeOperators:
    def test_commutator_and_scales(self):
        omega, nf = 0.01, 7
        h, x, q_c = cavity_mode_operators(omega, nf)
        b = fock_lowering(nf)
        comm = b @ b.T - b.T @ b
        assert np.allclose(np.diag(comm)[:-1], 1.0, atol=1e-14)
        assert np.allclose(h, omega * np.diag(np.arange(nf)))
        assert np.allclose(q_c, x / np.sqrt(2.0 * omega))
        assert np.allclose(x, x.T)


class TestAssembly:
    def setup_method(self):
        self.levels = synthetic_levels(3, seed=11)
        self.cavity = CavitySpec(omega_c=0.02, n_fock=4, g_or_eta=0.3, dse=True)

    def test_zero_coupling_exact_sum(self):
        cav = CavitySpec(omega_c=0.02, n_fock=4, g_or_eta=0.0, dse=True)
        model = assemble_light_matter([self.levels] * 2, cav)
        recon = model.h_molecular[0].matrix + model.h_molecular[1].matrix + model.h_cavity.matrix
        assert np.array_equal(model.h_total.matrix, recon)

    def test_perpendicular_orientations_exact_sum(self):
        cav = CavitySpec(omega_c=0.02, n_fock=4, g_or_eta=0.3, dse=True, orientations=(0.0, 0.0))
        model = assemble_light_matter([self.levels] * 2, cav)
        recon = model.h_molecular[0].matrix + model.h_molecular[1].matrix + model.h_cavity.matrix
        assert np.array_equal(model.h_total.matrix, recon)

    def test_prefactor_arithmetic(self):
        cav = CavitySpec(omega_c=0.02, n_fock=3, coupling_scaling="constant_rho", g_or_eta=0.3)
        model = assemble_light_matter([self.levels] * 4, cav)
        assert model.coupling_prefactor == 0.3 * 0.02 / 2.0
        assert model.dse_prefactor == 0.3 * 0.3 * 0.02 / 4.0

    def test_count_mismatches(self):
        with pytest.raises(ConfigError, match="molecules"):
            assemble_light_matter([self.levels] * 2, self.cavity, n_molecules=3)
        cav = CavitySpec(omega_c=0.02, n_fock=4, orientations=(1.0,))
        with pytest.raises(ConfigError, match="orientations"):
            assemble_light_matter([self.levels] * 2, cav)
        with pytest.raises(ConfigError):
            assemble_light_matter([], self.cavity)

    def test_memory_budget(self):
        big = synthetic_levels(5, seed=3)
        with pytest.raises(ConfigError, match="product space"):
            assemble_light_matter([big] * 5, CavitySpec(omega_c=0.01, n_fock=2))

    def test_gauge_consistency_single_molecule(self):
        ca = CavitySpec(omega_c=0.02, n_fock=4, coupling_scaling="constant_rho", g_or_eta=0.3, dse=True)
        cb = CavitySpec(omega_c=0.02, n_fock=4, coupling_scaling="constant_V", g_or_eta=0.3, dse=True)
        ma = assemble_light_matter([self.levels], ca)
        mb = assemble_light_matter([self.levels], cb)
        assert np.array_equal(ma.h_total.matrix, mb.h_total.matrix)

    def test_dse_positive_semidefinite(self):
        on = assemble_light_matter([self.levels] * 2, CavitySpec(omega_c=0.02, n_fock=3, g_or_eta=0.4, dse=True))
        off = assemble_light_matter([self.levels] * 2, CavitySpec(omega_c=0.02, n_fock=3, g_or_eta=0.4, dse=False))
        diff = on.h_total.matrix - off.h_total.matrix
        evals = np.linalg.eigvalsh(diff)
        assert evals.min() > -1e-12 * max(np.abs(diff).max(), 1.0)

    def test_factor_layout(self):
        model = assemble_light_matter([self.levels] * 2, self.cavity)
        assert model.space.factors[-1].basis_kind == "fock"
        assert model.space.factors[0].dim == self.levels.dim
        assert model.space.dim == 3 * 3 * 4
        comm = model.mu_ops[0].matrix @ model.mu_ops[1].matrix - model.mu_ops[1].matrix @ model.mu_ops[0].matrix
        assert np.abs(comm).max() < 1e-14

    @given(
        g=st.floats(-1.0, 1.0),
        scaling=st.sampled_from(models.COUPLING_SCALINGS),
        dse=st.booleans(),
        cos=st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=3),
    )
    def test_total_always_hermitian(self, g, scaling, dse, cos):
        cav = CavitySpec(
            omega_c=0.02, n_fock=3, coupling_scaling=scaling, g_or_eta=g, dse=dse,
            orientations=tuple(cos),
        )
        mols = [synthetic_levels(2, seed=5)] * len(cos)
        model = assemble_light_matter(mols, cav)
        m = model.h_total.matrix
        assert np.abs(m - m.conj().T).max() < 1e-12 * max(np.abs(m).max(), 1.0)


class TestRabiSplitting:
    def test_proton_transfer_splitting(self, mol2):
        lv = mol2.truncated(2)
        g = eta_from_dimensionless(0.05, lv.transition_dipole)
        cav = CavitySpec(omega_c=lv.transition_energy, n_fock=30,
                         coupling_scaling="constant_rho", g_or_eta=g, dse=True)
        split = rabi_splitting(assemble_light_matter([lv], cav))
        assert 12.59 * 0.95 < split < 12.59 * 1.05
        assert np.isclose(split, 12.51509, rtol=1e-5)

    def test_self_energy_required_with_permanent_dipole(self, mol2):
        # without the self-energy the permanent dipole detunes the mode and
        # the apparent gap is several times too large
        lv = mol2.truncated(2)
        g = eta_from_dimensionless(0.05, lv.transition_dipole)
        cav = CavitySpec(omega_c=lv.transition_energy, n_fock=30,
                         coupling_scaling="constant_rho", g_or_eta=g, dse=False)
        split = rabi_splitting(assemble_light_matter([lv], cav))
        assert split > 30.0

    def test_constant_rho_n_independent(self, mol1):
        lv = mol1.levels.truncated(2)
        g = eta_from_dimensionless(0.05, lv.transition_dipole)
        splits = []
        for n in (1, 2, 4):
            cav = CavitySpec(omega_c=lv.transition_energy, n_fock=8,
                             coupling_scaling="constant_rho", g_or_eta=g, dse=True)
            splits.append(rabi_splitting(assemble_light_matter([lv] * n, cav)))
        assert abs(splits[1] / splits[0] - 1.0) < 0.01
        assert abs(splits[2] / splits[0] - 1.0) < 0.01

    def test_constant_v_sqrt_n(self, mol1):
        lv = mol1.levels.truncated(2)
        g = eta_from_dimensionless(0.05, lv.transition_dipole)
        splits = {}
        for n in (1, 2, 4):
            cav = CavitySpec(omega_c=lv.transition_energy, n_fock=10,
                             coupling_scaling="constant_V", g_or_eta=g, dse=True)
            splits[n] = rabi_splitting(assemble_light_matter([lv] * n, cav))
        for n in (2, 4):
            assert abs(splits[n] / (splits[1] * np.sqrt(n)) - 1.0) < 0.02

    def test_underresolved_mode_is_ambiguous(self, mol2):
        lv = mol2.truncated(2)
        g = eta_from_dimensionless(0.05, lv.transition_dipole)
        cav = CavitySpec(omega_c=lv.transition_energy, n_fock=8,
                         coupling_scaling="constant_rho", g_or_eta=g, dse=True)
        with pytest.raises(ConfigError, match="ambiguous"):
            rabi_splitting(assemble_light_matter([lv], cav))

    def test_weak_coupling_linear(self, mol1):
        # resonant two-level perturbation theory: splitting = 2 eta omega_c
        lv = mol1.levels.truncated(2)
        omega_cm = lv.transition_energy * HARTREE_TO_CM
        splits = {}
        for eta in (1e-3, 5e-4):
            g = eta_from_dimensionless(eta, lv.transition_dipole)
            cav = CavitySpec(omega_c=lv.transition_energy, n_fock=5, g_or_eta=g, dse=True)
            splits[eta] = rabi_splitting(assemble_light_matter([lv], cav))
            assert np.isclose(splits[eta], 2.0 * eta * omega_cm, rtol=1e-3)
        assert np.isclose(splits[1e-3], 2.0 * splits[5e-4], rtol=1e-3)


class TestEtaConversion:
    def test_arithmetic(self):
        assert np.isclose(eta_from_dimensionless(0.05, 0.042), 1.19047619, rtol=1e-8)
        assert eta_from_dimensionless(0.0, 0.042) == 0.0
        assert np.isclose(eta_from_dimensionless(0.10, 0.042),
                          2.0 * eta_from_dimensionless(0.05, 0.042), rtol=1e-14)

    def test_rejections(self):
        with pytest.raises(ConfigError, match="nonzero"):
            eta_from_dimensionless(0.05, 0.0)
        with pytest.raises(ConfigError):
            eta_from_dimensionless(float("inf"), 0.042)
