import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from cavkin.errors import NumericalError
from cavkin.quantum import (
    CompositeSpace,
    DensityOperator,
    HilbertSpace,
    Operator,
    StateVector,
    apply_embedded,
    arnoldi_propagate,
    colbert_miller_kinetic,
    diagonalize,
    embed,
    fix_phases,
    krylov_propagate,
    lowest_eigenpair_iterative,
)


def random_hermitian(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (a + a.conj().T)


def random_state(rng, n):
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def harmonic_space_op(n_pts, extent, mass=1.0, omega=1.0):
    grid = np.linspace(-extent, extent, n_pts)
    t = colbert_miller_kinetic(grid, mass)
    v = 0.5 * mass * omega**2 * grid**2
    return Operator(t.space, t.matrix + np.diag(v), hermitian=True)


class TestSpaces:
    def test_composite_dim_is_product(self):
        a = HilbertSpace("a", 3, "eigenstate")
        b = HilbertSpace("b", 4, "fock")
        c = HilbertSpace("c", 5, "eigenstate")
        assert CompositeSpace((a, b, c)).dim == 60
        assert CompositeSpace((a, b, c)).shape == (3, 4, 5)

    def test_dvr_space_requires_grid(self):
        with pytest.raises(ValueError, match="requires a grid"):
            HilbertSpace("q", 4, "dvr_grid")

    def test_grid_only_for_dvr(self):
        with pytest.raises(ValueError, match="only meaningful"):
            HilbertSpace("q", 4, "fock", grid=np.arange(4.0))

    def test_unknown_basis_kind(self):
        with pytest.raises(ValueError, match="basis_kind"):
            HilbertSpace("q", 4, "position")


class TestOperatorTypes:
    def test_hermitian_flag_enforced(self, rng):
        space = HilbertSpace("s", 6, "eigenstate")
        h = random_hermitian(rng, 6)
        Operator(space, h, hermitian=True)
        bad = h.copy()
        bad[0, 1] += 1e-6
        with pytest.raises(ValueError, match="hermitian"):
            Operator(space, bad, hermitian=True)

    def test_operator_dim_mismatch(self, rng):
        space = HilbertSpace("s", 6, "eigenstate")
        with pytest.raises(ValueError, match="does not match"):
            Operator(space, np.eye(5))

    def test_operator_matrix_readonly(self):
        space = HilbertSpace("s", 2, "eigenstate")
        op = Operator(space, np.eye(2))
        with pytest.raises(ValueError):
            op.matrix[0, 0] = 5.0

    def test_density_operator_accepts_physical(self):
        space = HilbertSpace("s", 2, "eigenstate")
        rho = DensityOperator(space, np.diag([0.75, 0.25]))
        assert np.allclose(rho.populations(), [0.75, 0.25])

    def test_density_operator_rejects_bad_trace(self):
        space = HilbertSpace("s", 2, "eigenstate")
        with pytest.raises(ValueError, match="trace"):
            DensityOperator(space, np.diag([0.8, 0.25]))

    def test_density_operator_rejects_nonhermitian(self):
        space = HilbertSpace("s", 2, "eigenstate")
        m = np.array([[0.5, 0.3], [0.1, 0.5]], dtype=complex)
        with pytest.raises(ValueError, match="hermitian"):
            DensityOperator(space, m)

    def test_density_operator_rejects_negative(self):
        space = HilbertSpace("s", 2, "eigenstate")
        with pytest.raises(ValueError, match="negative eigenvalue"):
            DensityOperator(space, np.diag([1.2, -0.2]))

    def test_state_vector_norm_and_density(self):
        space = HilbertSpace("s", 2, "eigenstate")
        psi = StateVector(space, np.array([3.0, 4.0]))
        assert psi.norm == pytest.approx(5.0)
        rho = psi.density()
        assert np.trace(rho.matrix) == pytest.approx(1.0)


class TestColbertMiller:
    def test_two_point_grid_matches_formula(self):
        mass, dx = 2.0, 0.5
        t = colbert_miller_kinetic(np.array([0.0, dx]), mass).matrix
        coeff = 1.0 / (2.0 * mass * dx * dx)
        assert t[0, 0] == pytest.approx(coeff * np.pi**2 / 3.0)
        assert t[0, 1] == pytest.approx(-2.0 * coeff)
        assert t[1, 0] == pytest.approx(t[0, 1])

    def test_harmonic_eigenvalues_analytic(self):
        # oracle: E_n = (n + 1/2) omega for the harmonic oscillator
        h = harmonic_space_op(201, 10.0)
        energies, _ = diagonalize(h, n_lowest=5)
        assert np.allclose(energies, np.arange(5) + 0.5, atol=1e-8)

    def test_harmonic_convergence_monotone(self):
        # grids coarse enough that the error sits above machine noise
        exact = np.arange(3) + 0.5
        errs = []
        for n_pts in (9, 13, 17):
            h = harmonic_space_op(n_pts, 6.0)
            energies, _ = diagonalize(h, n_lowest=3)
            errs.append(np.abs(energies - exact).sum())
        assert errs[0] > errs[1] > errs[2]

    def test_nonuniform_grid_rejected_with_spacings(self):
        grid = np.array([0.0, 1.0, 2.5, 3.0])
        with pytest.raises(ValueError, match="spacings range"):
            colbert_miller_kinetic(grid, 1.0)

    def test_negative_mass_rejected(self):
        with pytest.raises(ValueError, match="mass"):
            colbert_miller_kinetic(np.linspace(0, 1, 5), -1.0)


class TestDiagonalize:
    def test_identity(self):
        space = HilbertSpace("s", 4, "eigenstate")
        energies, vectors = diagonalize(Operator(space, np.eye(4), hermitian=True))
        assert np.allclose(energies, 1.0)
        assert np.allclose(vectors.conj().T @ vectors, np.eye(4), atol=1e-12)

    def test_ordering_and_consistency(self, rng):
        space = HilbertSpace("s", 8, "eigenstate")
        h = random_hermitian(rng, 8)
        energies, vectors = diagonalize(Operator(space, h, hermitian=True))
        assert np.all(np.diff(energies) >= 0)
        assert np.allclose(h @ vectors, vectors * energies, atol=1e-10)

    def test_phase_convention(self, rng):
        space = HilbertSpace("s", 7, "eigenstate")
        h = random_hermitian(rng, 7)
        _, vectors = diagonalize(Operator(space, h, hermitian=True))
        for j in range(7):
            k = np.argmax(np.abs(vectors[:, j]))
            pivot = vectors[k, j]
            assert abs(pivot.imag) < 1e-12
            assert pivot.real > 0

    def test_phase_convention_deterministic(self, rng):
        h = random_hermitian(rng, 6)
        space = HilbertSpace("s", 6, "eigenstate")
        _, v1 = diagonalize(Operator(space, h, hermitian=True))
        _, v2 = diagonalize(Operator(space, h.copy(), hermitian=True))
        assert np.array_equal(v1, v2)

    def test_rejects_nonhermitian(self):
        space = HilbertSpace("s", 3, "eigenstate")
        m = np.triu(np.ones((3, 3)))
        with pytest.raises(ValueError, match="hermitian"):
            diagonalize(Operator(space, m))

    def test_n_lowest_bounds(self, rng):
        space = HilbertSpace("s", 4, "eigenstate")
        op = Operator(space, random_hermitian(rng, 4), hermitian=True)
        with pytest.raises(ValueError, match="n_lowest"):
            diagonalize(op, n_lowest=5)

    def test_fix_phases_zero_column_passthrough(self):
        v = np.zeros((3, 1), dtype=complex)
        assert np.array_equal(fix_phases(v), v)


class TestKrylovPropagate:
    def test_matches_dense_expm(self, rng):
        # oracle: dense matrix exponential, independent of the Lanczos route
        n = 120
        h = random_hermitian(rng, n)
        psi = random_state(rng, n)
        dt = 0.7
        expected = scipy.linalg.expm(-1j * dt * h) @ psi
        got = krylov_propagate(h, psi, dt, tol=1e-12)
        assert np.linalg.norm(got - expected) < 1e-9

    def test_step_subdivision_with_small_cap(self, rng):
        n = 40
        h = 8.0 * random_hermitian(rng, n)
        psi = random_state(rng, n)
        dt = 2.0
        expected = scipy.linalg.expm(-1j * dt * h) @ psi
        got = krylov_propagate(h, psi, dt, tol=1e-11, max_dim=12)
        assert np.linalg.norm(got - expected) < 1e-8

    def test_operator_and_statevector_interface(self, rng):
        space = HilbertSpace("s", 10, "eigenstate")
        h = Operator(space, random_hermitian(rng, 10), hermitian=True)
        psi = StateVector(space, random_state(rng, 10))
        out = krylov_propagate(h, psi, 0.3)
        assert isinstance(out, StateVector)
        assert out.norm == pytest.approx(1.0, abs=1e-10)

    def test_norm_and_energy_drift_long_run(self, rng):
        # 1e4 steps: norm drift <= 1e-8, energy drift <= 1e-6 relative
        n = 16
        h = random_hermitian(rng, n)
        psi = random_state(rng, n)
        e0 = np.real(psi.conj() @ h @ psi)
        for _ in range(10_000):
            psi = krylov_propagate(h, psi, 0.05, tol=1e-12)
        assert abs(np.linalg.norm(psi) - 1.0) <= 1e-8
        e1 = np.real(psi.conj() @ h @ psi)
        assert abs(e1 - e0) <= 1e-6 * max(1.0, abs(e0))

    def test_two_level_rabi_analytic(self):
        # oracle: P_excited(t) = sin^2(Delta t) for H = Delta sigma_x
        delta = 0.37
        h = delta * np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        psi0 = np.array([1.0, 0.0], dtype=complex)
        for t in (0.2, 1.0, 2.9):
            psi = krylov_propagate(h, psi0, t, tol=1e-13)
            assert abs(psi[1]) ** 2 == pytest.approx(np.sin(delta * t) ** 2, abs=1e-10)

    def test_coherent_state_period(self):
        # harmonic ladder: a coherent state returns after one period
        n = 40
        omega = 1.3
        h = omega * np.diag(np.arange(n) + 0.5)
        alpha = 1.0
        amps = np.array([alpha**k / np.sqrt(scipy.special.factorial(k)) for k in range(n)], dtype=complex)
        amps *= np.exp(-abs(alpha) ** 2 / 2)
        amps /= np.linalg.norm(amps)
        period = 2 * np.pi / omega
        psi = krylov_propagate(h, amps, period, tol=1e-13)
        assert abs(np.vdot(amps, psi)) == pytest.approx(1.0, abs=1e-8)

    def test_nonfinite_state_aborts(self, rng):
        h = random_hermitian(rng, 4)
        bad = np.array([np.inf, 0, 0, 0], dtype=complex)
        with pytest.raises(NumericalError, match="non-finite"):
            krylov_propagate(h, bad, 0.1)

    def test_nonfinite_hamiltonian_aborts(self, rng):
        h = random_hermitian(rng, 4)
        h = h.copy()
        h[0, 0] = np.nan
        with pytest.raises(NumericalError, match="non-finite"):
            krylov_propagate(h, random_state(rng, 4), 0.1)

    def test_zero_state_rejected(self, rng):
        h = random_hermitian(rng, 4)
        with pytest.raises(NumericalError, match="zero state"):
            krylov_propagate(h, np.zeros(4, dtype=complex), 0.1)


class TestLowestEigenpair:
    def test_matches_dense(self, rng):
        n = 60
        h = random_hermitian(rng, n)
        evals = np.linalg.eigvalsh(h)
        e0, vec, _ = lowest_eigenpair_iterative(h, random_state(rng, n), tol=1e-11)
        assert e0 == pytest.approx(evals[0], abs=1e-9)
        resid = np.linalg.norm(h @ vec - e0 * vec)
        assert resid < 1e-8

    def test_eigenvector_guess_one_iteration(self, rng):
        n = 30
        h = random_hermitian(rng, n)
        evals, evecs = np.linalg.eigh(h)
        e0, _, iters = lowest_eigenpair_iterative(h, evecs[:, 0], tol=1e-10)
        assert iters == 1
        assert e0 == pytest.approx(evals[0], abs=1e-10)

    def test_matvec_interface(self, rng):
        n = 25
        h = random_hermitian(rng, n)
        e0, _, _ = lowest_eigenpair_iterative(lambda v: h @ v, random_state(rng, n), tol=1e-10)
        assert e0 == pytest.approx(np.linalg.eigvalsh(h)[0], abs=1e-8)

    def test_zero_guess_rejected(self, rng):
        h = random_hermitian(rng, 4)
        with pytest.raises(NumericalError, match="zero guess"):
            lowest_eigenpair_iterative(h, np.zeros(4, dtype=complex))


class TestEmbed:
    def test_dim_mismatch_rejected(self):
        a = HilbertSpace("a", 3, "eigenstate")
        b = HilbertSpace("b", 4, "fock")
        comp = CompositeSpace((a, b))
        op = Operator(a, np.eye(3))
        with pytest.raises(ValueError, match="does not match factor"):
            embed(op, 1, comp)

    def test_factor_index_bounds(self):
        a = HilbertSpace("a", 3, "eigenstate")
        comp = CompositeSpace((a,))
        with pytest.raises(ValueError, match="out of range"):
            embed(Operator(a, np.eye(3)), 1, comp)

    @given(factor=st.integers(min_value=0, max_value=2), seed=st.integers(min_value=0, max_value=10_000))
    def test_embedded_expectation_equals_local(self, factor, seed):
        rng = np.random.default_rng(seed)
        dims = (2, 3, 2)
        spaces = tuple(HilbertSpace(f"f{i}", d, "eigenstate") for i, d in enumerate(dims))
        comp = CompositeSpace(spaces)
        local = random_hermitian(rng, dims[factor])
        parts = [random_state(rng, d) for d in dims]
        psi = parts[0]
        for p in parts[1:]:
            psi = np.kron(psi, p)
        big = embed(Operator(spaces[factor], local, hermitian=True), factor, comp)
        got = np.real(psi.conj() @ big.matrix @ psi)
        want = np.real(parts[factor].conj() @ local @ parts[factor])
        assert got == pytest.approx(want, abs=1e-10)

    @given(factor=st.integers(min_value=0, max_value=2), seed=st.integers(min_value=0, max_value=10_000))
    def test_apply_embedded_matches_kron(self, factor, seed):
        rng = np.random.default_rng(seed)
        dims = (3, 2, 4)
        spaces = tuple(HilbertSpace(f"f{i}", d, "eigenstate") for i, d in enumerate(dims))
        comp = CompositeSpace(spaces)
        local = rng.standard_normal((dims[factor], dims[factor])) + 1j * rng.standard_normal(
            (dims[factor], dims[factor])
        )
        psi = random_state(rng, comp.dim)
        big = embed(Operator(spaces[factor], local), factor, comp)
        got = apply_embedded(local, factor, dims, psi)
        assert np.allclose(got, big.matrix @ psi, atol=1e-12)


class TestArnoldiPropagate:
    def test_matches_dense_expm(self, rng):
        from scipy.linalg import expm

        n = 30
        gen = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        gen = gen - 2.0 * np.eye(n)  # push spectrum leftward, mildly dissipative
        y0 = rng.normal(size=n) + 1j * rng.normal(size=n)
        got = arnoldi_propagate(gen, y0, 0.7, tol=1e-12)
        want = expm(0.7 * gen) @ y0
        assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-9

    def test_agrees_with_hermitian_krylov(self, rng):
        n = 40
        h = rng.normal(size=(n, n))
        h = h + h.T
        psi = rng.normal(size=n) + 1j * rng.normal(size=n)
        a = krylov_propagate(h, psi, 0.9, tol=1e-12)
        b = arnoldi_propagate(lambda v: -1j * (h @ v), psi, 0.9, tol=1e-12)
        assert np.linalg.norm(a - b) / np.linalg.norm(a) < 1e-9

    def test_subdivision_at_small_cap(self, rng):
        from scipy.linalg import expm

        n = 12
        gen = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        y0 = rng.normal(size=n) + 1j * rng.normal(size=n)
        got = arnoldi_propagate(gen, y0, 1.5, tol=1e-11, max_dim=6)
        want = expm(1.5 * gen) @ y0
        assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-8

    def test_zero_state_passthrough(self):
        out = arnoldi_propagate(np.eye(3), np.zeros(3, dtype=complex), 1.0)
        assert np.all(out == 0)

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericalError):
            arnoldi_propagate(np.eye(2), np.array([np.nan, 1.0]), 0.5)
