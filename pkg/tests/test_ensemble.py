import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_ensembles.ensemble import (
    EnsembleError,
    Mixture,
    from_json,
    from_ps,
    from_psi,
    gaussian_packet,
    mixture_expectation,
    phase_point_ensemble,
    product,
    to_json,
)
from hybrid_ensembles.grid import ClassicalSector, HybridGrid, QuantumSector
from hybrid_ensembles.observables import ClassicalObservable, classical_expectation, phase_library

from conftest import random_node_free_ensemble


class TestFromPS:
    def test_uniform_density_zero_phase(self, line_grid):
        e = from_ps(line_grid, np.ones(line_grid.shape), np.zeros(line_grid.shape))
        assert np.abs(e.psi - 1.0 / np.sqrt(line_grid.volume)).max() < 1e-14
        assert e.norm() == pytest.approx(1.0, abs=1e-12)

    def test_round_trip_density(self, line_grid):
        P = np.exp(-line_grid.x**2)
        S = 0.3 * np.sin(2 * np.pi * line_grid.x / 16)
        e = from_ps(line_grid, P, S)
        assert np.abs(e.P - P / line_grid.integrate(P)).max() < 1e-12

    def test_linear_phase_gives_constant_momentum(self):
        # k0 on the mode lattice keeps the phase exactly periodic
        grid = HybridGrid(QuantumSector.discrete(1), ClassicalSector(-8, 8, 128))
        k0 = 2 * np.pi * 3 / 16.0
        P = np.exp(-grid.x**2)
        e = from_ps(grid, P, k0 * grid.x)
        mask = e.P > 1e-8 * e.P.max()
        assert np.abs(e.k()[mask] - k0).max() < 1e-8

    def test_momentum_readback_on_node_free_ensemble(self, line_grid, rng):
        # strictly positive periodic fixture: phase gradients recoverable on
        # every supported cell without unwrapping
        from conftest import random_smooth_field

        P = np.exp(2 * random_smooth_field(line_grid, rng, amplitude=0.5))
        S = random_smooth_field(line_grid, rng, amplitude=0.8)
        e = from_ps(line_grid, P, S)
        assert np.abs(e.k() - line_grid.d_dx(S)).max() < 1e-10

    def test_phase_constant_shift_is_unobservable(self, gaussian_line):
        e = gaussian_line
        shifted = from_psi(e.grid, e.psi * np.exp(1j * 1.234), normalize=False)
        assert np.abs(shifted.P - e.P).max() < 1e-15
        f = phase_library("ho")
        assert classical_expectation(shifted, f) == pytest.approx(classical_expectation(e, f), abs=1e-13)

    def test_negative_density_rejected(self, line_grid):
        P = np.ones(line_grid.shape)
        P[0, 3] = -1e-3
        with pytest.raises(EnsembleError):
            from_ps(line_grid, P, np.zeros(line_grid.shape))

    def test_zero_mass_rejected(self, line_grid):
        with pytest.raises(EnsembleError):
            from_ps(line_grid, np.zeros(line_grid.shape), np.zeros(line_grid.shape))


class TestProduct:
    def test_basis_state_factor(self, qubit_grid):
        psi_c = gaussian_packet(qubit_grid.classical.coords, 0.0, 1.0)
        e = product(qubit_grid, [1.0, 0.0], psi_c)
        assert np.abs(e.P[1]).max() == 0.0
        marg = e.marginal_classical()
        pc = np.abs(psi_c) ** 2
        pc = pc / (pc.sum() * qubit_grid.classical.dx)
        assert np.abs(marg - pc).max() < 1e-12

    def test_marginals_of_product(self, product_ensemble):
        e = product_ensemble
        assert e.grid.integrate_q(e.P).sum() * e.grid.classical.dx == pytest.approx(1.0, abs=1e-12)
        mq = e.marginal_quantum()
        assert mq.sum() * e.grid.quantum.weight == pytest.approx(1.0, abs=1e-12)

    def test_zero_factor_rejected(self, qubit_grid):
        with pytest.raises(EnsembleError):
            product(qubit_grid, [0.0, 0.0], np.ones(qubit_grid.classical.n_x))


class TestMarginals:
    def test_two_branch_marginal(self, qubit_grid):
        # equal-weight entangled branches with disjoint packets; oracle is the
        # direct weighted sum of the one-branch densities
        x = qubit_grid.classical.coords
        a = gaussian_packet(x, -3.0, 0.5)
        b = gaussian_packet(x, 3.0, 0.5)
        a = a / np.sqrt((np.abs(a) ** 2).sum() * qubit_grid.classical.dx)
        b = b / np.sqrt((np.abs(b) ** 2).sum() * qubit_grid.classical.dx)
        psi = np.stack([a, b]) / np.sqrt(2)
        e = from_psi(qubit_grid, psi, normalize=False)
        marg = e.marginal_classical()
        oracle = 0.5 * np.abs(a) ** 2 + 0.5 * np.abs(b) ** 2
        assert np.abs(marg - oracle).max() < 1e-12

    def test_marginal_normalization(self, correlated_ensemble):
        e = correlated_ensemble
        assert e.marginal_classical().sum() * e.grid.classical.dx == pytest.approx(1.0, abs=1e-9)
        assert e.marginal_quantum().sum() * e.grid.quantum.weight == pytest.approx(1.0, abs=1e-9)


class TestPhasePoint:
    def test_momentum_exact(self, line_grid):
        e = phase_point_ensemble(line_grid, x0=1.0, k0=-2.0, sigma=0.8)
        assert classical_expectation(e, phase_library("k")) == pytest.approx(-2.0, abs=1e-9)

    def test_position_exact(self, line_grid):
        e = phase_point_ensemble(line_grid, x0=1.5, k0=0.3, sigma=0.8)
        assert classical_expectation(e, phase_library("x")) == pytest.approx(1.5, abs=1e-9)

    def test_ho_energy_with_width_correction_and_limit(self):
        # <H> = H(x0,k0) + sigma^2/2 for the unit oscillator; Richardson in
        # sigma confirms the sigma -> 0 limit
        fine = HybridGrid(QuantumSector.discrete(1), ClassicalSector(-8, 8, 128))
        f = phase_library("ho")
        target = 0.5 * (-2.0) ** 2 + 0.5 * 1.5**2
        vals = {}
        for sigma in (0.8, 0.6, 0.4):
            e = phase_point_ensemble(fine, 1.5, -2.0, sigma)
            v = classical_expectation(e, f)
            assert v == pytest.approx(target + sigma**2 / 2, abs=1e-6)
            vals[sigma] = v
        extrap = (0.8**2 * vals[0.4] - 0.4**2 * vals[0.8]) / (0.8**2 - 0.4**2)
        assert extrap == pytest.approx(target, abs=1e-6)

    def test_unresolvable_width_rejected(self, line_grid):
        with pytest.raises(EnsembleError):
            phase_point_ensemble(line_grid, 0.0, 0.0, sigma=0.1 * line_grid.classical.dx)


class TestMixture:
    def test_single_member(self, gaussian_line):
        mix = Mixture.of([(1.0, gaussian_line)])
        obs = ClassicalObservable(phase_library("x2"))
        assert mixture_expectation(mix, obs) == pytest.approx(obs.value(gaussian_line))

    def test_symmetric_phase_points_cancel(self, line_grid):
        e1 = phase_point_ensemble(line_grid, 2.0, 0.0, 0.6)
        e2 = phase_point_ensemble(line_grid, -2.0, 0.0, 0.6)
        mix = Mixture.of([(0.5, e1), (0.5, e2)])
        assert mixture_expectation(mix, ClassicalObservable(phase_library("x"))) == pytest.approx(0.0, abs=1e-12)

    @given(w=st.floats(0.05, 0.95))
    @settings(max_examples=20, deadline=None)
    def test_expectation_affine_in_weights(self, line_grid, w):
        e1 = phase_point_ensemble(line_grid, 1.0, 0.5, 0.6)
        e2 = phase_point_ensemble(line_grid, -0.7, -0.2, 0.6)
        obs = ClassicalObservable(phase_library("ho"))
        mix = Mixture.of([(w, e1), (1 - w, e2)])
        expected = w * obs.value(e1) + (1 - w) * obs.value(e2)
        assert mixture_expectation(mix, obs) == pytest.approx(expected, rel=1e-12)

    def test_empty_mixture_rejected(self):
        with pytest.raises(EnsembleError):
            Mixture.of([])

    def test_bad_weights_rejected(self, gaussian_line):
        with pytest.raises(EnsembleError):
            Mixture.of([(0.6, gaussian_line), (0.6, gaussian_line)])


class TestValidityInvariants:
    @given(seed=st.integers(0, 5000))
    @settings(max_examples=15, deadline=None)
    def test_constructors_normalize_and_stay_positive(self, line_grid, seed):
        e = random_node_free_ensemble(line_grid, np.random.default_rng(seed))
        assert abs(e.norm() - 1.0) < 1e-9
        assert e.P.min() >= 0.0


class TestSerialization:
    def test_exact_round_trip(self, correlated_ensemble):
        e = correlated_ensemble
        e2 = from_json(to_json(e))
        assert e2.grid == e.grid
        assert e2.hbar == e.hbar
        assert np.array_equal(e2.psi, e.psi)

    def test_rejects_unknown_schema(self, gaussian_line):
        import json

        rec = json.loads(to_json(gaussian_line))
        rec["schema_version"] = 99
        with pytest.raises(EnsembleError):
            from_json(json.dumps(rec))
