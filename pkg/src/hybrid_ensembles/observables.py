"""Observable families on hybrid ensembles.

Three families are implemented, each exposing a numerical value and the
variational derivatives the functional Poisson bracket consumes:

* classical observables ``C_f = integral P f(x, grad_x S)`` built from a
  phase-space function f(x, k) with caller-supplied gradients,
* quantum observables ``Q_M = integral psi* M psi`` built from a Hermitian
  matrix in the quantum-sector basis (including the grid basis, where the
  momentum operator is the dense spectral derivative matrix),
* generic functionals with optional analytic derivatives and a numerical
  variational-derivative fallback.

Variational derivatives with respect to (P, S) are field arrays on the grid;
the wavefunction derivative dA/dpsi is what the psi-form bracket consumes
(dA/dpsi* is its conjugate for real functionals).

All evaluators accept either a :class:`~hybrid_ensembles.ensemble.HybridEnsemble`
or the internal :class:`PerturbedState`, which represents raw, possibly
unnormalized (P, S) data during numerical differentiation and homogeneity
checks.  Classical observables read the momentum field straight off the
state, so perturbing P never contaminates k.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .ensemble import FLOOR_RATIO, HybridEnsemble
from .grid import HybridGrid

__all__ = [
    "ObservableError",
    "PhaseFunction",
    "QuantumOperator",
    "Observable",
    "ClassicalObservable",
    "QuantumObservable",
    "GenericFunctional",
    "PerturbedState",
    "classical_expectation",
    "quantum_expectation",
    "classical_variational_derivatives",
    "quantum_wavefunction_derivative",
    "numerical_variational_derivative",
    "homogeneity_check",
    "phase_bracket",
    "phase_library",
    "operator_library",
    "resolve_observable",
]


class ObservableError(ValueError):
    """Invalid observable construction or evaluation."""


# ---------------------------------------------------------------------------
# phase-space functions f(x, k)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseFunction:
    """Real phase-space function f(x, k) with its gradients.

    Evaluators must be numpy-vectorized.  Gradients may be omitted for
    expectation-only use; bracket machinery requires them.
    """

    f: Callable
    df_dx: Optional[Callable] = None
    df_dk: Optional[Callable] = None
    label: str = "f"

    def require_gradients(self) -> None:
        if self.df_dx is None or self.df_dk is None:
            raise ObservableError(f"phase function {self.label!r} lacks gradients")

    def validate_gradients(self, span: float = 2.0, n: int = 21, h: float = 1e-6, rtol: float = 1e-6) -> float:
        """Max relative mismatch of the gradients against centered differences."""
        self.require_gradients()
        xs = np.linspace(-span, span, n)
        X, K = np.meshgrid(xs, xs, indexing="ij")
        scale = np.max(np.abs(self.f(X, K))) + 1.0
        gx = (self.f(X + h, K) - self.f(X - h, K)) / (2 * h)
        gk = (self.f(X, K + h) - self.f(X, K - h)) / (2 * h)
        err = max(np.max(np.abs(gx - self.df_dx(X, K))), np.max(np.abs(gk - self.df_dk(X, K))))
        rel = err / scale
        if rel > rtol:
            raise ObservableError(f"gradients of {self.label!r} inconsistent: rel err {rel:.3e}")
        return rel


def phase_bracket(f: PhaseFunction, g: PhaseFunction) -> PhaseFunction:
    """The phase-space Poisson bracket {f, g} = f_x g_k - g_x f_k (no gradients)."""
    f.require_gradients()
    g.require_gradients()
    return PhaseFunction(
        f=lambda x, k: f.df_dx(x, k) * g.df_dk(x, k) - g.df_dx(x, k) * f.df_dk(x, k),
        label=f"{{{f.label},{g.label}}}",
    )


def _const(c):
    return lambda x, k: np.full(np.broadcast(x, k).shape, float(c))


def phase_library(name: str, **params) -> PhaseFunction:
    """Standard phase functions: one, x, k, x2, k2, xk, kinetic(m), ho(m, omega)."""
    if name in ("one", "1"):
        return PhaseFunction(_const(1.0), _const(0.0), _const(0.0), "one")
    if name == "x":
        return PhaseFunction(lambda x, k: x * np.ones_like(k), _const(1.0), _const(0.0), "x")
    if name == "k":
        return PhaseFunction(lambda x, k: k * np.ones_like(x), _const(0.0), _const(1.0), "k")
    if name == "x2":
        return PhaseFunction(lambda x, k: x**2 * np.ones_like(k), lambda x, k: 2 * x * np.ones_like(k), _const(0.0), "x2")
    if name == "k2":
        return PhaseFunction(lambda x, k: k**2 * np.ones_like(x), _const(0.0), lambda x, k: 2 * k * np.ones_like(x), "k2")
    if name == "xk":
        return PhaseFunction(lambda x, k: x * k, lambda x, k: k * np.ones_like(x), lambda x, k: x * np.ones_like(k), "xk")
    if name == "kinetic":
        m = float(params.get("m", 1.0))
        return PhaseFunction(
            lambda x, k: k**2 / (2 * m) * np.ones_like(x),
            _const(0.0),
            lambda x, k: k / m * np.ones_like(x),
            f"kinetic(m={m:g})",
        )
    if name == "ho":
        m = float(params.get("m", 1.0))
        om = float(params.get("omega", 1.0))
        return PhaseFunction(
            lambda x, k: k**2 / (2 * m) + 0.5 * m * om**2 * x**2,
            lambda x, k: m * om**2 * x * np.ones_like(k),
            lambda x, k: k / m * np.ones_like(x),
            f"ho(m={m:g},omega={om:g})",
        )
    raise ObservableError(f"unknown phase function {name!r}")


# ---------------------------------------------------------------------------
# Hermitian operators on the quantum sector
# ---------------------------------------------------------------------------

HERMITICITY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class QuantumOperator:
    """Dense Hermitian matrix in the quantum-sector basis."""

    matrix: np.ndarray
    label: str = "M"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ObservableError(f"operator {self.label!r} must be a square matrix")
        if np.max(np.abs(m - m.conj().T)) >= HERMITICITY_TOL:
            raise ObservableError(f"operator {self.label!r} is not Hermitian")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """Apply along the quantum axis of a grid field (or to a vector)."""
        if psi.shape[0] != self.dim:
            raise ObservableError(
                f"operator {self.label!r} has dimension {self.dim}, state has {psi.shape[0]}"
            )
        return self.matrix @ psi

    def commutator_observable(self, other: "QuantumOperator", hbar: float = 1.0) -> "QuantumOperator":
        """[M, N] / (i hbar), itself Hermitian."""
        c = (self.matrix @ other.matrix - other.matrix @ self.matrix) / (1j * hbar)
        c = 0.5 * (c + c.conj().T)  # kill roundoff asymmetry
        return QuantumOperator(c, f"[{self.label},{other.label}]/(i hbar)")


def _pauli(which: str) -> np.ndarray:
    return {
        "x": np.array([[0, 1], [1, 0]], dtype=complex),
        "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
        "z": np.array([[1, 0], [0, -1]], dtype=complex),
    }[which]


def operator_library(name: str, grid: HybridGrid, hbar: float = 1.0, *args, **params) -> QuantumOperator:
    """Standard operators.

    Discrete sector: identity, sigma_x, sigma_y, sigma_z, diag(v0, v1, ...).
    Continuous (grid basis): q, q2, p, kinetic(m), ho(m, omega); derivative
    operators are the grid's dense spectral (or FD) matrices.
    """
    n = grid.quantum.n
    if name == "identity":
        return QuantumOperator(np.eye(n), "identity")
    if name in ("sigma_x", "sigma_y", "sigma_z"):
        if n != 2:
            raise ObservableError(f"{name} needs a 2-dimensional quantum sector, got {n}")
        return QuantumOperator(_pauli(name[-1]), name)
    if name == "diag":
        vals = np.array([float(a) for a in args], dtype=float)
        if vals.shape[0] != n:
            raise ObservableError(f"diag needs {n} entries, got {vals.shape[0]}")
        return QuantumOperator(np.diag(vals), f"diag({','.join(f'{v:g}' for v in vals)})")
    if name == "q":
        return QuantumOperator(np.diag(grid.quantum.coords), "q")
    if name == "q2":
        return QuantumOperator(np.diag(grid.quantum.coords**2), "q2")
    if name == "p":
        return QuantumOperator(-1j * hbar * grid.derivative_matrix_q, "p")
    if name == "kinetic":
        m = float(params.get("m", 1.0))
        return QuantumOperator(-(hbar**2) / (2 * m) * grid.second_derivative_matrix_q, f"kinetic(m={m:g})")
    if name == "ho":
        m = float(params.get("m", 1.0))
        om = float(params.get("omega", 1.0))
        kin = -(hbar**2) / (2 * m) * grid.second_derivative_matrix_q
        pot = np.diag(0.5 * m * om**2 * grid.quantum.coords**2)
        return QuantumOperator(kin + pot, f"ho(m={m:g},omega={om:g})")
    raise ObservableError(f"unknown operator {name!r}")


# ---------------------------------------------------------------------------
# raw-field states for perturbation and scaling
# ---------------------------------------------------------------------------


class PerturbedState:
    """Raw (P, momentum, psi) data, possibly unnormalized or single-cell perturbed.

    Presents the same read protocol as HybridEnsemble (grid, hbar, P, psi,
    k(), kq(), support), so observables evaluate uniformly.  Momentum fields
    are carried explicitly: perturbing P leaves them untouched, and
    perturbing S shifts them by the exact derivative of the cell indicator.
    """

    def __init__(self, grid, hbar, P, psi, k_x, k_q=None):
        self.grid = grid
        self.hbar = hbar
        self.P = P
        self.psi = psi
        self._k_x = k_x
        self._k_q = k_q

    @classmethod
    def from_ensemble(cls, e: HybridEnsemble, with_kq: bool = False) -> "PerturbedState":
        k_q = e.kq() if (with_kq and not e.grid.quantum.is_discrete) else None
        return cls(e.grid, e.hbar, e.P, e.psi, e.k(), k_q)

    @property
    def p_floor(self) -> float:
        return FLOOR_RATIO * self.P.max()

    @property
    def support(self) -> np.ndarray:
        return self.P > self.p_floor

    def k(self) -> np.ndarray:
        return self._k_x

    def kq(self) -> np.ndarray:
        if self._k_q is None:
            raise ObservableError("state carries no quantum-sector momentum field")
        return self._k_q

    def scaled(self, lam: float) -> "PerturbedState":
        """State with P -> lam * P at fixed S."""
        if lam < 0:
            raise ObservableError("scaling factor must be nonnegative")
        kq = None if self._k_q is None else self._k_q
        return PerturbedState(self.grid, self.hbar, lam * self.P, np.sqrt(lam) * self.psi, self._k_x, kq)

    def perturb_P(self, i: int, j: int, h: float) -> "PerturbedState":
        P = self.P.copy()
        P[i, j] += h
        psi = self.psi.copy()
        if self.P[i, j] > self.p_floor:
            psi[i, j] *= np.sqrt(max(P[i, j], 0.0) / self.P[i, j])
        else:
            psi[i, j] = np.sqrt(max(P[i, j], 0.0))
        return PerturbedState(self.grid, self.hbar, P, psi, self._k_x, self._k_q)

    @cached_property
    def _dcol_x(self) -> np.ndarray:
        e0 = np.zeros(self.grid.classical.n_x)
        e0[0] = 1.0
        return self.grid.dx_vector(e0)

    @cached_property
    def _dcol_q(self) -> np.ndarray:
        field = np.zeros(self.grid.shape)
        field[0, :] = 1.0
        return self.grid.d_dq(field)[:, 0]

    def perturb_S(self, i: int, j: int, h: float) -> "PerturbedState":
        psi = self.psi.copy()
        psi[i, j] *= np.exp(1j * h / self.hbar)
        k_x = self._k_x.copy()
        k_x[i, :] += h * np.roll(self._dcol_x, j)
        k_q = self._k_q
        if k_q is not None:
            k_q = k_q.copy()
            k_q[:, j] += h * np.roll(self._dcol_q, i)
        out = PerturbedState(self.grid, self.hbar, self.P, psi, k_x, k_q)
        # share the indicator-derivative cache across perturbations
        out.__dict__["_dcol_x"] = self._dcol_x
        if "_dcol_q" in self.__dict__:
            out.__dict__["_dcol_q"] = self.__dict__["_dcol_q"]
        return out


def _support_mask(state) -> np.ndarray:
    return state.support


# ---------------------------------------------------------------------------
# observable classes
# ---------------------------------------------------------------------------


class Observable:
    """Common protocol: value and variational derivatives on a state."""

    label: str = "A"

    def value(self, state) -> float:
        raise NotImplementedError

    def grad_P(self, state) -> np.ndarray:
        raise NotImplementedError

    def grad_S(self, state) -> np.ndarray:
        raise NotImplementedError

    def grad_psi(self, state) -> np.ndarray:
        """dA/dpsi; dA/dpsi* is its conjugate for these real functionals."""
        raise NotImplementedError(f"{self.label!r} has no wavefunction derivative")

    def has_psi_gradient(self) -> bool:
        return True

    def __repr__(self):
        return f"<{type(self).__name__} {self.label}>"


class ClassicalObservable(Observable):
    """C_f = integral of P * f(x, k) with k the momentum field of the state."""

    def __init__(self, pf: PhaseFunction):
        self.pf = pf
        self.label = f"C:{pf.label}"

    def _fields(self, state):
        x = state.grid.x
        k = state.k()
        return x, k

    def value(self, state) -> float:
        x, k = self._fields(state)
        vals = self.pf.f(x, k)
        integrand = state.P * vals
        if not np.all(np.isfinite(integrand[state.support])):
            raise ObservableError(f"{self.label}: f not finite on the ensemble support")
        return state.grid.integrate(integrand)

    def grad_P(self, state) -> np.ndarray:
        x, k = self._fields(state)
        return np.asarray(self.pf.f(x, k), dtype=float)

    def grad_S(self, state) -> np.ndarray:
        self.pf.require_gradients()
        x, k = self._fields(state)
        flux = state.P * self.pf.df_dk(x, k)
        out = -state.grid.d_dx(flux)
        out[~state.support] = 0.0  # variations of S are inert where P vanishes
        return out

    def grad_psi(self, state) -> np.ndarray:
        self.pf.require_gradients()
        x, k = self._fields(state)
        fval = self.pf.f(x, k)
        fk = self.pf.df_dk(x, k)
        psi = state.psi
        ratio = np.zeros_like(psi)
        np.divide(psi.conj(), psi, out=ratio, where=state.support)
        half = -0.5j * state.hbar  # hbar / (2 i)
        dpsi = state.grid.d_dx(psi)
        return psi.conj() * fval - half * ratio * fk * dpsi - half * state.grid.d_dx(psi.conj() * fk)


class QuantumObservable(Observable):
    """Q_M = integral of psi* M psi for a Hermitian sector operator M."""

    IMAG_TOL = 1e-10

    def __init__(self, op: QuantumOperator):
        self.op = op
        self.label = f"Q:{op.label}"

    def _check_dim(self, state):
        if self.op.dim != state.grid.quantum.n:
            raise ObservableError(
                f"{self.label}: dimension {self.op.dim} does not match quantum sector {state.grid.quantum.n}"
            )

    def value(self, state) -> float:
        self._check_dim(state)
        raw = state.grid.integrate(state.psi.conj() * self.op.apply(state.psi))
        scale = max(1.0, abs(raw))
        if abs(raw.imag) > self.IMAG_TOL * scale:
            raise ObservableError(f"{self.label}: expectation has imaginary part {raw.imag:.3e}")
        return raw.real

    def _afield(self, state) -> np.ndarray:
        """psi * conj(M psi); Re/P and -2 Im/hbar give the (P,S) derivatives."""
        return state.psi * self.op.apply(state.psi).conj()

    def grad_P(self, state) -> np.ndarray:
        self._check_dim(state)
        a = self._afield(state)
        out = np.zeros(state.grid.shape)
        np.divide(a.real, state.P, out=out, where=state.support)
        return out

    def grad_S(self, state) -> np.ndarray:
        self._check_dim(state)
        a = self._afield(state)
        out = -(2.0 / state.hbar) * a.imag
        out[~state.support] = 0.0
        return out

    def grad_psi(self, state) -> np.ndarray:
        self._check_dim(state)
        return self.op.apply(state.psi).conj()

    def grad_psi_star(self, state) -> np.ndarray:
        """dQ/dpsi* = M psi."""
        self._check_dim(state)
        return self.op.apply(state.psi)


class GenericFunctional(Observable):
    """Functional with optional analytic derivatives and numerical fallback."""

    def __init__(self, value_fn, grad_P_fn=None, grad_S_fn=None, grad_psi_fn=None, label="A", eps: float = 1e-5):
        self._value = value_fn
        self._grad_P = grad_P_fn
        self._grad_S = grad_S_fn
        self._grad_psi = grad_psi_fn
        self.label = label
        self.eps = eps

    def value(self, state) -> float:
        return float(self._value(state))

    def _numeric(self, state):
        return _numerical_derivatives(self, state, self.eps)

    def grad_P(self, state) -> np.ndarray:
        if self._grad_P is not None:
            return self._grad_P(state)
        return self._numeric(state)[0]

    def grad_S(self, state) -> np.ndarray:
        if self._grad_S is not None:
            return self._grad_S(state)
        return self._numeric(state)[1]

    def has_psi_gradient(self) -> bool:
        return self._grad_psi is not None or (self._grad_P is not None and self._grad_S is not None)

    def grad_psi(self, state) -> np.ndarray:
        if self._grad_psi is not None:
            return self._grad_psi(state)
        if self._grad_P is None or self._grad_S is None:
            raise ObservableError(f"{self.label!r} has no wavefunction derivative")
        # chain rule: psi dA/dpsi = P dA/dP - i (hbar/2) dA/dS
        num = state.P * self.grad_P(state) - 0.5j * state.hbar * self.grad_S(state)
        out = np.zeros_like(state.psi)
        np.divide(num, state.psi, out=out, where=state.support)
        return out


def normalization_functional() -> GenericFunctional:
    """I[P, S] = integral of P; generates nothing (brackets with it vanish)."""
    return GenericFunctional(
        value_fn=lambda st: st.grid.integrate(st.P),
        grad_P_fn=lambda st: np.ones(st.grid.shape),
        grad_S_fn=lambda st: np.zeros(st.grid.shape),
        label="I",
    )


# ---------------------------------------------------------------------------
# free-function API
# ---------------------------------------------------------------------------


def classical_expectation(e, f: PhaseFunction) -> float:
    return ClassicalObservable(f).value(e)


def quantum_expectation(e, M: QuantumOperator) -> float:
    return QuantumObservable(M).value(e)


def classical_variational_derivatives(e, f: PhaseFunction):
    obs = ClassicalObservable(f)
    return obs.grad_P(e), obs.grad_S(e)


def quantum_wavefunction_derivative(e, M: QuantumOperator) -> np.ndarray:
    """dQ_M/dpsi* = M psi (the conjugate gives dQ_M/dpsi)."""
    return QuantumObservable(M).grad_psi_star(e)


def _numerical_derivatives(A: Observable, state, eps: float):
    if not (1e-8 <= eps <= 1e-3):
        raise ObservableError(f"eps {eps} outside [1e-8, 1e-3]")
    base = state if isinstance(state, PerturbedState) else PerturbedState.from_ensemble(state, with_kq=not state.grid.quantum.is_discrete)
    w = base.grid.cell_weight
    h = eps / w
    nq, nx = base.grid.shape
    dP = np.zeros((nq, nx))
    dS = np.zeros((nq, nx))
    for i in range(nq):
        for j in range(nx):
            dP[i, j] = (A.value(base.perturb_P(i, j, h)) - A.value(base.perturb_P(i, j, -h))) / (2 * eps)
            dS[i, j] = (A.value(base.perturb_S(i, j, h)) - A.value(base.perturb_S(i, j, -h))) / (2 * eps)
    return dP, dS


def numerical_variational_derivative(A: Observable, e, eps: float = 1e-5):
    """Centered-difference variational derivatives (dA/dP, dA/dS).

    Each cell is perturbed by eps divided by the cell weight (a grid delta
    function of unit integral).  Meaningful where P comfortably exceeds the
    perturbation scale; compare against analytic derivatives there.
    """
    return _numerical_derivatives(A, e, eps)


def homogeneity_check(A: Observable, e, lam: float):
    """Residuals of first-degree homogeneity in P.

    residual_scale = |A[lam P, S] - lam A[P, S]|  (normalization suspended),
    residual_local = |A[P, S] - integral P dA/dP|.
    Both vanish for the classical and quantum families; A = integral P^2
    is the standard counterexample.
    """
    if lam < 0:
        raise ObservableError("lam must be nonnegative")
    base = PerturbedState.from_ensemble(e, with_kq=not e.grid.quantum.is_discrete)
    a0 = A.value(base)
    residual_scale = abs(A.value(base.scaled(lam)) - lam * a0)
    residual_local = abs(a0 - e.grid.integrate(e.P * A.grad_P(e)))
    return residual_scale, residual_local


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

_LABEL_RE = re.compile(r"^([CQ]):([a-z_0-9]+)(?:\((.*)\))?$")


def resolve_observable(label: str, grid: HybridGrid, hbar: float = 1.0) -> Observable:
    """Resolve a string label like "C:x", "C:kinetic(m=1)", "Q:sigma_z", "Q:p".

    Classical names: one, x, k, x2, k2, xk, kinetic(m), ho(m, omega).
    Quantum names: identity, sigma_x/y/z, diag(v0, v1, ...), q, q2, p,
    kinetic(m), ho(m, omega).
    """
    m = _LABEL_RE.match(label.strip())
    if not m:
        raise ObservableError(f"malformed observable label {label!r}")
    family, name, raw = m.group(1), m.group(2), m.group(3)
    args, kwargs = [], {}
    if raw:
        for tok in raw.split(","):
            tok = tok.strip()
            if not tok:
                continue
            if "=" in tok:
                key, val = tok.split("=", 1)
                kwargs[key.strip()] = float(val)
            else:
                args.append(float(tok))
    if family == "C":
        if args:
            raise ObservableError(f"classical observable {name!r} takes only key=value parameters")
        return ClassicalObservable(phase_library(name, **kwargs))
    return QuantumObservable(operator_library(name, grid, hbar, *args, **kwargs))
