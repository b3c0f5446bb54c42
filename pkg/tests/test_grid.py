import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_ensembles.grid import ClassicalSector, GridError, HybridGrid, QuantumSector


def make_grid(n_x=64, scheme="spectral", d=2, x_min=0.0, x_max=2 * np.pi):
    return HybridGrid(QuantumSector.discrete(d), ClassicalSector(x_min, x_max, n_x), scheme)


class TestQuadrature:
    def test_constant_field_gives_domain_volume(self):
        g = make_grid()
        assert g.integrate(np.ones(g.shape)) == pytest.approx(2 * 2 * np.pi, abs=1e-12)

    def test_zero_field(self):
        g = make_grid()
        assert g.integrate(np.zeros(g.shape)) == 0.0

    def test_sin_squared_integral(self):
        # spectral-exact for band-limited integrands; oracle is the analytic pi
        # cross-checked against a 16x denser grid
        g = make_grid(d=1)
        f = np.sin(g.x) ** 2
        dense = make_grid(n_x=1024, d=1)
        oracle = dense.integrate(np.sin(dense.x) ** 2)
        assert abs(g.integrate(f) - np.pi) < 1e-12
        assert abs(g.integrate(f) - oracle) < 1e-12

    def test_midpoint_rule_on_nonperiodic_grid(self):
        g = HybridGrid(QuantumSector.discrete(1), ClassicalSector(0.0, 1.0, 16, periodic=False), "fd2")
        assert g.integrate(np.ones(g.shape)) == pytest.approx(1.0, abs=1e-14)

    def test_shape_mismatch_rejected(self):
        g = make_grid()
        with pytest.raises(GridError):
            g.integrate(np.ones((3, 3)))


class TestDerivatives:
    def test_fourier_mode(self):
        g = make_grid(d=1)
        f = np.exp(1j * 3 * g.x)
        err = np.abs(g.d_dx(f) - 3j * f).max()
        assert err < 1e-10

    def test_constant_derivative_is_zero(self):
        g = make_grid(d=1)
        assert np.abs(g.d_dx(np.ones(g.shape) + 0j)).max() < 1e-14

    def test_gaussian_derivative_analytic_oracle(self):
        g = HybridGrid(QuantumSector.discrete(1), ClassicalSector(-10, 10, 256))
        f = np.exp(-g.x**2 / 2)
        assert np.abs(g.d_dx(f) + g.x * f).max() < 1e-8

    def test_dq_requires_continuous_sector(self):
        g = make_grid()
        with pytest.raises(GridError):
            g.d_dq(np.ones(g.shape, dtype=complex))

    def test_laplacian_q_fourier_mode(self):
        g = HybridGrid(QuantumSector.continuous(0, 2 * np.pi, 64), ClassicalSector(0, 2 * np.pi, 8))
        f = np.exp(2j * g.q)
        assert np.abs(g.laplacian_q(f) + 4 * f).max() < 1e-9

    def test_laplacian_q_ho_ground_state(self):
        # d^2/dq^2 exp(-q^2/2) = (q^2 - 1) exp(-q^2/2)
        g = HybridGrid(QuantumSector.continuous(-10, 10, 128), ClassicalSector(0, 1, 8))
        phi = np.exp(-g.q**2 / 2)
        assert np.abs(g.laplacian_q(phi) - (g.q**2 - 1) * phi).max() < 1e-8

    @pytest.mark.parametrize("scheme,order", [("fd2", 2), ("fd4", 4)])
    def test_fd_convergence_order(self, scheme, order):
        errs = []
        for n in (32, 64, 128):
            g = HybridGrid(QuantumSector.discrete(1), ClassicalSector(0, 2 * np.pi, n), scheme)
            f = np.sin(g.x)
            errs.append(np.abs(g.d_dx(f) - np.cos(g.x)).max())
        observed = np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2])
        assert min(observed) > order - 0.15

    def test_spectral_requires_periodic(self):
        with pytest.raises(GridError):
            HybridGrid(QuantumSector.discrete(1), ClassicalSector(0, 1, 16, periodic=False), "spectral")

    def test_spectral_quantum_needs_power_of_two(self):
        with pytest.raises(GridError):
            HybridGrid(QuantumSector.continuous(0, 1, 24), ClassicalSector(0, 1, 16))


class TestIntegrationByParts:
    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_adjointness_random_fields(self, seed):
        from conftest import random_smooth_field

        g = make_grid(d=1)
        rng = np.random.default_rng(seed)
        f = random_smooth_field(g, rng)
        h = random_smooth_field(g, rng)
        lhs = g.integrate(f * g.d_dx(h))
        rhs = -g.integrate(h * g.d_dx(f))
        assert abs(lhs - rhs) < 1e-10

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_total_derivative_integrates_to_zero(self, seed):
        from conftest import random_smooth_field

        g = make_grid(d=1)
        f = random_smooth_field(g, np.random.default_rng(seed))
        assert abs(g.integrate(g.d_dx(f))) < 1e-10

    @given(seed=st.integers(0, 10_000), a=st.floats(-3, 3), b=st.floats(-3, 3))
    @settings(max_examples=25, deadline=None)
    def test_linearity(self, seed, a, b):
        from conftest import random_smooth_field

        g = make_grid(d=1)
        rng = np.random.default_rng(seed)
        f = random_smooth_field(g, rng)
        h = random_smooth_field(g, rng)
        lhs = g.d_dx(a * f + b * h)
        rhs = a * g.d_dx(f) + b * g.d_dx(h)
        assert np.abs(lhs - rhs).max() < 1e-12


class TestOperatorsAndHelpers:
    def test_derivative_matrix_antisymmetric_and_consistent(self):
        g = HybridGrid(QuantumSector.continuous(-5, 5, 32), ClassicalSector(0, 1, 8))
        D = g.derivative_matrix_q
        assert np.abs(D + D.T).max() == 0.0
        f = np.exp(-g.quantum.coords**2)
        direct = g.d_dq(np.outer(f, np.ones(8)))[:, 0]
        assert np.abs(D @ f - direct).max() < 1e-10

    def test_second_derivative_matrix_symmetric(self):
        g = HybridGrid(QuantumSector.continuous(-5, 5, 32), ClassicalSector(0, 1, 8))
        D2 = g.second_derivative_matrix_q
        assert np.abs(D2 - D2.T).max() == 0.0

    def test_spectral_translation_exact_for_gaussian(self):
        g = HybridGrid(QuantumSector.discrete(1), ClassicalSector(-10, 10, 128))
        x = g.classical.coords
        f = np.exp(-(x**2)) + 0j
        shifted = g.translate_x(f, 1.2345)  # not a grid multiple
        assert np.abs(shifted - np.exp(-((x - 1.2345) ** 2))).max() < 1e-12

    def test_lowpass_preserves_smooth_fields(self):
        g = make_grid(d=1)
        f = np.exp(1j * 3 * g.x)
        assert np.abs(g.lowpass(f) - f).max() < 1e-9

    def test_descriptor_round_trip(self):
        g = HybridGrid(QuantumSector.continuous(-5, 5, 32), ClassicalSector(-1, 1, 16), "fd4")
        assert HybridGrid.from_descriptor(g.descriptor()) == g
