import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_ensembles.ensemble import from_ps, from_psi, gaussian_packet, product
from hybrid_ensembles.grid import ClassicalSector, HybridGrid, QuantumSector
from hybrid_ensembles.observables import (
    ClassicalObservable,
    GenericFunctional,
    ObservableError,
    PerturbedState,
    QuantumObservable,
    QuantumOperator,
    classical_expectation,
    classical_variational_derivatives,
    homogeneity_check,
    numerical_variational_derivative,
    operator_library,
    phase_bracket,
    phase_library,
    quantum_expectation,
    quantum_wavefunction_derivative,
    resolve_observable,
)

from conftest import random_node_free_ensemble


ALL_PHASE_NAMES = ("one", "x", "k", "x2", "k2", "xk", "kinetic", "ho")


class TestPhaseFunctions:
    @pytest.mark.parametrize("name", ALL_PHASE_NAMES)
    def test_gradient_consistency(self, name):
        phase_library(name).validate_gradients()

    def test_bad_gradient_detected(self):
        from hybrid_ensembles.observables import PhaseFunction

        bad = PhaseFunction(lambda x, k: x * k, lambda x, k: k + 0.1, lambda x, k: x, "bad")
        with pytest.raises(ObservableError):
            bad.validate_gradients()

    def test_phase_bracket_canonical_pair(self):
        pb = phase_bracket(phase_library("x"), phase_library("k"))
        assert pb.f(0.3, -2.0) == pytest.approx(1.0)


class TestClassicalExpectation:
    def test_normalization(self, gaussian_line):
        assert classical_expectation(gaussian_line, phase_library("one")) == pytest.approx(1.0, abs=1e-12)

    def test_gaussian_mean_and_momentum(self):
        grid = HybridGrid(QuantumSector.discrete(1), ClassicalSector(-8, 8, 128))
        k0 = -2 * np.pi * 3 / 16.0  # on the mode lattice: exactly periodic phase
        P = np.exp(-((grid.x - 0.7) ** 2))
        e = from_ps(grid, P, k0 * grid.x)
        assert classical_expectation(e, phase_library("x")) == pytest.approx(0.7, abs=1e-10)
        assert classical_expectation(e, phase_library("k")) == pytest.approx(k0, abs=1e-10)

    def test_kinetic_on_linear_phase(self):
        # <k^2/2> = k0^2/2 + Fisher-information contribution of the envelope;
        # oracle: quadrature at double resolution
        def build(n):
            grid = HybridGrid(QuantumSector.discrete(1), ClassicalSector(-8, 8, n))
            P = np.exp(-((grid.x - 0.2) ** 2) / 0.8)
            k0 = -1.2 * np.pi / 16 * 8  # mode-lattice multiple
            return from_ps(grid, P, k0 * grid.x)

        coarse = classical_expectation(build(128), phase_library("kinetic"))
        fine = classical_expectation(build(256), phase_library("kinetic"))
        assert coarse == pytest.approx(fine, abs=1e-10)

    def test_invariant_under_discrete_relabeling(self, qubit_grid):
        x = qubit_grid.classical.coords
        rows = [gaussian_packet(x, -1.0, 0.8), 0.7 * gaussian_packet(x, 1.0, 1.1)]
        e = from_psi(qubit_grid, np.stack(rows))
        swapped = from_psi(qubit_grid, np.stack(rows[::-1]))
        f = phase_library("ho")
        assert classical_expectation(e, f) == pytest.approx(classical_expectation(swapped, f), abs=1e-13)

    def test_product_depends_only_on_classical_factor(self, cont_grid):
        psi_c = gaussian_packet(cont_grid.classical.coords, 0.5, 0.9, momentum=0.4)
        e1 = product(cont_grid, gaussian_packet(cont_grid.quantum.coords, 0.0, 1.0), psi_c)
        e2 = product(cont_grid, gaussian_packet(cont_grid.quantum.coords, 1.0, 0.6, momentum=1.0), psi_c)
        for name in ("x", "k", "ho"):
            f = phase_library(name)
            assert classical_expectation(e1, f) == pytest.approx(classical_expectation(e2, f), abs=1e-9)

    def test_nonfinite_rejected(self, gaussian_line):
        from hybrid_ensembles.observables import PhaseFunction

        diverging = PhaseFunction(lambda x, k: 1.0 / (x - x), label="inf")
        with pytest.raises(ObservableError):
            classical_expectation(gaussian_line, diverging)


class TestQuantumExpectation:
    def test_identity(self, correlated_ensemble):
        M = operator_library("identity", correlated_ensemble.grid)
        assert quantum_expectation(correlated_ensemble, M) == pytest.approx(1.0, abs=1e-10)

    def test_sigma_z_eigenstate(self, qubit_grid):
        e = product(qubit_grid, [1.0, 0.0], gaussian_packet(qubit_grid.classical.coords, 0, 1))
        assert quantum_expectation(e, operator_library("sigma_z", qubit_grid)) == pytest.approx(1.0, abs=1e-12)

    def test_entangled_sigma_x_equals_overlap(self, qubit_grid):
        # psi = (|0> phi_a + |1> phi_b)/sqrt(2): <sigma_x> = Re int phi_a* phi_b.
        # Oracle: the explicit double sum over components.
        x = qubit_grid.classical.coords
        dx = qubit_grid.classical.dx
        a = gaussian_packet(x, -0.8, 0.9)
        b = gaussian_packet(x, 0.8, 1.2)
        a = a / np.sqrt((np.abs(a) ** 2).sum() * dx)
        b = b / np.sqrt((np.abs(b) ** 2).sum() * dx)
        e = from_psi(qubit_grid, np.stack([a, b]) / np.sqrt(2), normalize=False)
        r = ((a.conj() * b).sum() * dx).real
        val = quantum_expectation(e, operator_library("sigma_x", qubit_grid))
        oracle = sum(
            (e.psi[i].conj() * np.array([[0, 1], [1, 0]])[i, j] * e.psi[j]).sum() * dx
            for i in range(2)
            for j in range(2)
        ).real
        assert val == pytest.approx(r, abs=1e-12)
        assert val == pytest.approx(oracle, abs=1e-12)

    def test_real_within_tolerance(self, correlated_ensemble):
        M = operator_library("kinetic", correlated_ensemble.grid, m=1.0)
        raw = correlated_ensemble.grid.integrate(
            correlated_ensemble.psi.conj() * M.apply(correlated_ensemble.psi)
        )
        assert abs(raw.imag) < 1e-12 * max(1.0, abs(raw.real))

    def test_dimension_mismatch(self, qubit_grid):
        M = QuantumOperator(np.eye(3))
        with pytest.raises(ObservableError):
            quantum_expectation(from_psi(qubit_grid, np.ones(qubit_grid.shape)), M)

    def test_hermiticity_enforced(self):
        with pytest.raises(ObservableError):
            QuantumOperator(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestVariationalDerivatives:
    def test_position_function(self, gaussian_line):
        dP, dS = classical_variational_derivatives(gaussian_line, phase_library("x"))
        assert np.abs(dP - gaussian_line.grid.x).max() < 1e-12
        assert np.abs(dS).max() == 0.0

    def test_momentum_function(self, gaussian_line):
        e = gaussian_line
        dP, dS = classical_variational_derivatives(e, phase_library("k"))
        assert np.abs(dP - e.k()).max() < 1e-12
        expected = -e.grid.d_dx(e.P)
        mask = e.support
        assert np.abs((dS - expected)[mask]).max() < 1e-9

    def test_dS_integrates_to_zero(self, correlated_ensemble):
        for name in ("k", "k2", "xk", "ho"):
            _, dS = classical_variational_derivatives(correlated_ensemble, phase_library(name))
            assert abs(correlated_ensemble.grid.integrate(dS)) < 1e-9

    def test_dS_vanishes_on_excised_region(self, line_grid):
        # smooth bump cut out of the density: variations of S there are inert
        x = line_grid.x
        P = np.exp(-(x**2))
        hole = np.clip((np.abs(x - 3.0) - 0.5) / 0.5, 0.0, 1.0) ** 2
        P = P * hole
        e = from_ps(line_grid, P, 0.1 * np.sin(2 * np.pi * x / 16))
        dead = ~e.support
        assert dead.any()
        _, dS = classical_variational_derivatives(e, phase_library("ho"))
        assert np.abs(dS[dead]).max() == 0.0
        a = e.psi * operator_library("identity", line_grid).apply(e.psi).conj()
        assert np.abs((-2.0 * a.imag)[dead]).max() == 0.0

    def test_quantum_wavefunction_derivative_is_m_psi(self, qubit_grid):
        e = from_psi(qubit_grid, np.stack([
            gaussian_packet(qubit_grid.classical.coords, -1, 1),
            gaussian_packet(qubit_grid.classical.coords, 1, 1),
        ]))
        M = operator_library("sigma_x", qubit_grid)
        out = quantum_wavefunction_derivative(e, M)
        assert np.abs(out - e.psi[::-1]).max() < 1e-14

    def test_first_order_expansion(self, correlated_ensemble, rng):
        # Q(psi + dpsi) - Q(psi) = 2 Re int conj(M psi) dpsi + O(|dpsi|^2)
        e = correlated_ensemble
        M = operator_library("ho", e.grid, m=1.0, omega=1.0)
        obs = QuantumObservable(M)
        dpsi = 1e-5 * (rng.normal(size=e.grid.shape) + 1j * rng.normal(size=e.grid.shape))
        dpsi *= np.exp(-(e.grid.q**2 + e.grid.x**2) / 8)
        perturbed = from_psi(e.grid, e.psi + dpsi, normalize=False)
        actual = obs.value(perturbed) - obs.value(e)
        predicted = 2 * e.grid.integrate(obs.grad_psi_star(e).conj() * dpsi).real
        assert actual == pytest.approx(predicted, rel=1e-4, abs=1e-11)


class TestNumericalDerivatives:
    def test_classical_x(self, gaussian_line):
        dP, dS = numerical_variational_derivative(ClassicalObservable(phase_library("x")), gaussian_line, eps=1e-5)
        mask = gaussian_line.P > 1e-2 * gaussian_line.P.max()
        assert np.abs((dP - gaussian_line.grid.x)[mask]).max() < 1e-9
        assert np.abs(dS[mask]).max() < 1e-9

    def test_normalization_functional(self, gaussian_line):
        A = GenericFunctional(lambda st: st.grid.integrate(st.P), label="I")
        dP, dS = numerical_variational_derivative(A, gaussian_line, eps=1e-5)
        assert np.abs(dP - 1.0).max() < 1e-9
        assert np.abs(dS).max() < 1e-9

    def test_quantum_sigma_z_chain_rule(self, qubit_grid):
        # numerical (P,S) derivatives against the analytic psi-form mapped
        # through dA/dP = Re(psi dA/dpsi)/P, dA/dS = -(2/hbar) Im(psi dA/dpsi)
        x = qubit_grid.classical.coords
        e = from_psi(qubit_grid, np.stack([
            gaussian_packet(x, -0.5, 1.0),
            0.8 * gaussian_packet(x, 0.5, 1.2, momentum=0.3),
        ]))
        obs = QuantumObservable(operator_library("sigma_z", qubit_grid))
        dP_num, dS_num = numerical_variational_derivative(obs, e, eps=1e-5)
        mask = e.P > 1e-2 * e.P.max()
        assert np.abs((dP_num - obs.grad_P(e))[mask]).max() < 1e-5
        assert np.abs((dS_num - obs.grad_S(e))[mask]).max() < 1e-5

    def test_generic_off_diagonal(self, qubit_grid):
        x = qubit_grid.classical.coords
        e = from_psi(qubit_grid, np.stack([
            gaussian_packet(x, -0.4, 1.0, momentum=0.2),
            gaussian_packet(x, 0.4, 0.9),
        ]))
        obs = QuantumObservable(operator_library("sigma_x", qubit_grid))
        dP_num, dS_num = numerical_variational_derivative(obs, e, eps=1e-5)
        mask = e.P > 5e-2 * e.P.max()
        assert np.abs((dP_num - obs.grad_P(e))[mask]).max() < 1e-5
        assert np.abs((dS_num - obs.grad_S(e))[mask]).max() < 1e-5

    def test_eps_out_of_range(self, gaussian_line):
        with pytest.raises(ObservableError):
            numerical_variational_derivative(ClassicalObservable(phase_library("x")), gaussian_line, eps=1e-2)


class TestHomogeneity:
    @pytest.mark.parametrize("label", ["C:x", "C:k", "C:x2", "C:kinetic(m=1)", "C:ho(m=1,omega=1)", "Q:q", "Q:p", "Q:kinetic(m=1)", "Q:q2"])
    def test_first_degree_for_both_families(self, correlated_ensemble, label):
        obs = resolve_observable(label, correlated_ensemble.grid)
        rs, rl = homogeneity_check(obs, correlated_ensemble, lam=2.0)
        assert rs < 1e-9
        assert rl < 1e-9

    def test_zero_scaling_annihilates(self, correlated_ensemble):
        obs = resolve_observable("Q:q2", correlated_ensemble.grid)
        base = PerturbedState.from_ensemble(correlated_ensemble)
        assert obs.value(base.scaled(0.0)) == pytest.approx(0.0, abs=1e-15)

    def test_quadratic_counterexample(self, correlated_ensemble):
        e = correlated_ensemble
        counter = GenericFunctional(
            lambda st: st.grid.integrate(st.P**2),
            grad_P_fn=lambda st: 2 * st.P,
            grad_S_fn=lambda st: np.zeros(st.grid.shape),
            label="int P^2",
        )
        lam = 2.0
        rs, rl = homogeneity_check(counter, e, lam)
        predicted = lam * (lam - 1.0) * e.grid.integrate(e.P**2)
        assert rs == pytest.approx(predicted, rel=1e-12)
        assert rl == pytest.approx(e.grid.integrate(e.P**2), rel=1e-12)


class TestRegistry:
    @pytest.mark.parametrize("label", ["C:one", "C:x", "C:k", "C:x2", "C:k2", "C:xk", "C:kinetic(m=2)", "C:ho(m=1,omega=2)"])
    def test_classical_labels(self, cont_grid, label):
        obs = resolve_observable(label, cont_grid)
        assert isinstance(obs, ClassicalObservable)

    @pytest.mark.parametrize("label", ["Q:identity", "Q:q", "Q:q2", "Q:p", "Q:kinetic(m=1)", "Q:ho(m=1,omega=1)"])
    def test_quantum_labels(self, cont_grid, label):
        obs = resolve_observable(label, cont_grid)
        assert isinstance(obs, QuantumObservable)

    def test_pauli_labels(self, qubit_grid):
        for label in ("Q:sigma_x", "Q:sigma_y", "Q:sigma_z"):
            resolve_observable(label, qubit_grid)

    def test_diag_label(self, qubit_grid):
        obs = resolve_observable("Q:diag(1,-1)", qubit_grid)
        assert np.array_equal(np.diag(obs.op.matrix).real, [1.0, -1.0])

    @pytest.mark.parametrize("label", ["nope", "C:", "C:unknown", "Z:x", "Q:sigma_w"])
    def test_malformed_labels_rejected(self, cont_grid, label):
        with pytest.raises(ObservableError):
            resolve_observable(label, cont_grid)
