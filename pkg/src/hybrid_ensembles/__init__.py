"""Hybrid quantum-classical configuration ensembles.

Ensembles (P, S) on a joint quantum-classical configuration space, stored
canonically as the hybrid wavefunction psi = sqrt(P) exp(i S / hbar), with
Hamiltonian dynamics, classical/quantum observables, functional Poisson
brackets, a pointer-measurement protocol and thermal mixtures.
"""

from .grid import ClassicalSector, GridError, HybridGrid, QuantumSector
from .ensemble import (
    EnsembleError,
    HybridEnsemble,
    Mixture,
    from_ps,
    from_psi,
    from_json,
    mixture_expectation,
    phase_point_ensemble,
    product,
    to_json,
)
from .observables import (
    ClassicalObservable,
    GenericFunctional,
    ObservableError,
    PhaseFunction,
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
from .bracket import (
    BracketReport,
    IdentityCheck,
    jacobi_residual,
    poisson_bracket_ps,
    poisson_bracket_psi,
    strong_separability_integral,
    strong_separability_probe,
    verify_cc_homomorphism,
    verify_configuration_separability,
    verify_qq_homomorphism,
)

__version__ = "0.1.0"
