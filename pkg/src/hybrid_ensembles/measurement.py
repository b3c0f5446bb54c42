"""Pointer measurement of a quantum observable via a classical apparatus.

The interaction ensemble Hamiltonian

    H_int = kappa(t) * integral psi* (hbar/i) d_dx M psi

couples the eigenvalues of the Hermitian operator M to the position x of a
one-dimensional classical pointer.  During the interaction the state obeys
the hybrid Schroedinger equation i hbar dpsi/dt = kappa (hbar/i) d_dx M psi,
whose exact solution for an initially independent product ensemble is the
shifted sum

    psi(q, x, T) = sum_n (E_n psi_Q)(q) * psi_C(x - K lambda_n),

with K the time integral of kappa and E_n the eigenprojectors of M.  The
pointer marginal then shows the branch displaced by K lambda_n with
probability p_n = <psi_Q|E_n|psi_Q>; reading a pointer position selects a
branch, and the Bayesian collapse returns the independent product of the
narrow pointer packet with the normalized conditional quantum state.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .dynamics import DynamicsError, EnsembleHamiltonian, evolve
from .ensemble import HybridEnsemble, from_psi, gaussian_packet, product
from .grid import HybridGrid
from .observables import QuantumOperator

__all__ = [
    "MeasurementError",
    "KappaProfile",
    "MeasurementSetup",
    "MeasurementHamiltonian",
    "MeasurementOutcome",
    "exact_post_measurement",
    "evolve_measurement",
    "pointer_distribution",
    "collapse",
    "branch_overlap",
]

SUPPORT_THRESHOLD = 1e-12  # of the peak, for branch-support assignment
EIGEN_GROUP_TOL = 1e-10


class MeasurementError(RuntimeError):
    """Invalid measurement configuration or ambiguous reading."""


@dataclass(frozen=True)
class KappaProfile:
    """Coupling strength profile on [0, T] with total impulse K."""

    kind: str  # "bump" (C1 sin^2) or "const"
    K: float
    T: float

    def __post_init__(self):
        if self.K == 0.0 or not np.isfinite(self.K):
            raise MeasurementError("coupling impulse K must be finite and nonzero")
        if self.T <= 0:
            raise MeasurementError("measurement duration T must be positive")

    @classmethod
    def bump(cls, K: float, T: float = 1.0) -> "KappaProfile":
        return cls("bump", float(K), float(T))

    @classmethod
    def constant(cls, K: float, T: float = 1.0) -> "KappaProfile":
        return cls("const", float(K), float(T))

    def __call__(self, t) -> float:
        if self.kind == "const":
            return self.K / self.T if 0.0 <= t <= self.T else 0.0
        if 0.0 <= t <= self.T:
            return 2.0 * self.K / self.T * np.sin(np.pi * t / self.T) ** 2
        return 0.0

    @property
    def peak(self) -> float:
        return abs(self.K) / self.T if self.kind == "const" else 2.0 * abs(self.K) / self.T


@dataclass(frozen=True, eq=False)
class MeasurementSetup:
    """Operator, coupling profile and initial pointer packet."""

    M: QuantumOperator
    kappa: KappaProfile
    pointer_initial: np.ndarray  # classical-sector complex vector, normalized on use

    @property
    def K(self) -> float:
        return self.kappa.K

    @cached_property
    def eigensystem(self):
        """Distinct eigenvalues with their projectors; sum of projectors is 1."""
        vals, vecs = np.linalg.eigh(self.M.matrix)
        groups = []
        used = np.zeros(len(vals), dtype=bool)
        for i, lam in enumerate(vals):
            if used[i]:
                continue
            sel = np.abs(vals - lam) <= EIGEN_GROUP_TOL * max(1.0, np.max(np.abs(vals)))
            used |= sel
            V = vecs[:, sel]
            groups.append((float(np.mean(vals[sel])), V @ V.conj().T))
        total = sum(E for _, E in groups)
        if np.max(np.abs(total - np.eye(self.M.dim))) > 1e-10:
            raise MeasurementError("eigenprojectors do not resolve the identity")
        return groups

    def branch_centers(self, x_center: float = 0.0):
        return [(lam, x_center + self.K * lam) for lam, _ in self.eigensystem]


class MeasurementHamiltonian(EnsembleHamiltonian):
    """H_int = kappa(t) integral psi* (hbar/i) d_dx M psi (time-dependent)."""

    time_dependent = True

    def __init__(self, setup: MeasurementSetup):
        self.setup = setup
        self.label = f"H_meas({setup.M.label})"

    def psi_rhs(self, state, t: float = 0.0) -> np.ndarray:
        kap = self.setup.kappa(t)
        if kap == 0.0:
            return np.zeros_like(state.psi)
        return -kap * state.grid.d_dx(self.setup.M.apply(state.psi))

    def _afield(self, state) -> np.ndarray:
        # psi * conj(A psi) with A = (hbar/i) d_dx M, Hermitian
        apsi = -1j * state.hbar * state.grid.d_dx(self.setup.M.apply(state.psi))
        return state.psi * apsi.conj()

    def value(self, state, t: float = 0.0) -> float:
        kap = self.setup.kappa(t)
        if kap == 0.0:
            return 0.0
        return kap * state.grid.integrate(self._afield(state)).real

    def grad_P(self, state, t: float = 0.0) -> np.ndarray:
        a = self._afield(state)
        out = np.zeros(state.grid.shape)
        np.divide(a.real, state.P, out=out, where=state.support)
        return self.setup.kappa(t) * out

    def grad_S(self, state, t: float = 0.0) -> np.ndarray:
        a = self._afield(state)
        out = -(2.0 / state.hbar) * a.imag
        out[~state.support] = 0.0
        return self.setup.kappa(t) * out

    def dt_max(self, grid: HybridGrid, hbar: float = 1.0) -> float:
        lam_max = max(abs(lam) for lam, _ in self.setup.eigensystem)
        if lam_max == 0.0:
            return np.inf
        return grid.classical.dx / (self.setup.kappa.peak * lam_max)


class _SummedHamiltonian(EnsembleHamiltonian):
    """Pointwise sum of Hamiltonians (interaction plus background)."""

    time_dependent = True

    def __init__(self, parts):
        self.parts = list(parts)
        self.label = "+".join(p.label for p in self.parts)

    def psi_rhs(self, state, t: float = 0.0):
        return sum(p.psi_rhs(state, t) for p in self.parts)

    def value(self, state, t: float = 0.0) -> float:
        return sum(p.value(state, t) for p in self.parts)

    def dt_max(self, grid, hbar: float = 1.0) -> float:
        return min(p.dt_max(grid, hbar) for p in self.parts)


def _normalized_pointer(grid: HybridGrid, setup: MeasurementSetup) -> np.ndarray:
    psi_c = np.asarray(setup.pointer_initial, dtype=complex).reshape(-1)
    if psi_c.shape[0] != grid.classical.n_x:
        raise MeasurementError(
            f"pointer has length {psi_c.shape[0]}, classical sector wants {grid.classical.n_x}"
        )
    n = np.sum(np.abs(psi_c) ** 2) * grid.classical.dx
    if n <= 0:
        raise MeasurementError("zero pointer state")
    return psi_c / np.sqrt(n)


def _check_wraparound(grid: HybridGrid, setup: MeasurementSetup):
    box = grid.classical.x_max - grid.classical.x_min
    lam_max = max(abs(lam) for lam, _ in setup.eigensystem)
    if abs(setup.K) * lam_max > 0.5 * box:
        raise MeasurementError(
            f"pointer shift {abs(setup.K) * lam_max:g} exceeds half the box {0.5 * box:g} (wraparound)"
        )


def exact_post_measurement(psi_Q: np.ndarray, setup: MeasurementSetup, grid: HybridGrid, hbar: float = 1.0) -> HybridEnsemble:
    """Closed-form post-measurement state: sum over eigenbranches of the
    projected quantum factor times the spectrally translated pointer packet.

    Translations are Fourier phases, hence exact for band-limited pointers
    at arbitrary (non-grid-multiple) shifts.  Degenerate operators are
    handled by their eigenprojectors; for nondegenerate M this reduces to
    c_n <q|n> branches.
    """
    _check_wraparound(grid, setup)
    psi_Q = np.asarray(psi_Q, dtype=complex).reshape(-1)
    nq = np.sum(np.abs(psi_Q) ** 2) * grid.quantum.weight
    if nq <= 0:
        raise MeasurementError("zero quantum state")
    psi_Q = psi_Q / np.sqrt(nq)
    psi_c = _normalized_pointer(grid, setup)
    psi = np.zeros(grid.shape, dtype=complex)
    for lam, E in setup.eigensystem:
        branch_q = E @ psi_Q
        if np.sum(np.abs(branch_q) ** 2) * grid.quantum.weight < 1e-300:
            continue
        psi += np.outer(branch_q, grid.translate_x(psi_c, setup.K * lam))
    return from_psi(grid, psi, hbar)


def evolve_measurement(
    psi_Q: np.ndarray,
    setup: MeasurementSetup,
    grid: HybridGrid,
    dt: float,
    hbar: float = 1.0,
    background: Optional[EnsembleHamiltonian] = None,
) -> HybridEnsemble:
    """Numerically integrate the hybrid Schroedinger equation over [0, T].

    The interaction commutes with itself at different times, so
    :func:`exact_post_measurement` is the oracle this must reproduce.  An
    optional background Hamiltonian can be included to quantify how good the
    short-measurement approximation (ignoring it) is.
    """
    _check_wraparound(grid, setup)
    H: EnsembleHamiltonian = MeasurementHamiltonian(setup)
    cfl = H.dt_max(grid, hbar)
    if dt > cfl * (1 + 1e-12):
        raise MeasurementError(f"dt {dt} violates the advection CFL bound {cfl:.3e}")
    if background is not None:
        H = _SummedHamiltonian([H, background])
    e0 = product(grid, psi_Q, _normalized_pointer(grid, setup), hbar)
    rec = evolve(H, e0, setup.kappa.T, dt, record_every=10**9)
    return rec.final


def branch_overlap(setup: MeasurementSetup, grid: HybridGrid) -> float:
    """Largest pairwise Bhattacharyya overlap of the displaced pointer packets.

    Below ~1e-12 the branches are operationally nonoverlapping and a pointer
    reading identifies its eigenvalue unambiguously (a 'good' measurement).
    """
    psi_c = _normalized_pointer(grid, setup)
    dens = []
    for lam, _ in setup.eigensystem:
        shifted = grid.translate_x(psi_c, setup.K * lam)
        dens.append(np.abs(shifted) ** 2)
    worst = 0.0
    for i in range(len(dens)):
        for j in range(i + 1, len(dens)):
            worst = max(worst, float(np.sum(np.sqrt(dens[i] * dens[j])) * grid.classical.dx))
    return worst


def _branch_supports(e: HybridEnsemble, setup: MeasurementSetup) -> list[np.ndarray]:
    """Support mask per branch from the displaced pointer packets."""
    psi_c = _normalized_pointer(e.grid, setup)
    supports = []
    for lam, _ in setup.eigensystem:
        dens = np.abs(e.grid.translate_x(psi_c, setup.K * lam)) ** 2
        supports.append(dens > SUPPORT_THRESHOLD * dens.max())
    return supports


@dataclass
class MeasurementOutcome:
    """Pointer marginal, branch weights, and (optionally) the collapsed state."""

    pointer_density: np.ndarray
    branch_weights: list  # of (lambda_n, weight)
    overlap: float
    collapsed: Optional[HybridEnsemble] = None
    reading: Optional[float] = None


def pointer_distribution(e: HybridEnsemble, setup: MeasurementSetup) -> MeasurementOutcome:
    """Classical marginal of a post-measurement state with per-branch weights.

    Weights integrate the marginal over each branch support; for
    nonoverlapping branches they equal <psi_Q|E_n|psi_Q>.
    """
    marginal = e.marginal_classical()
    supports = _branch_supports(e, setup)
    weights = []
    for (lam, _), mask in zip(setup.eigensystem, supports):
        weights.append((lam, float(np.sum(marginal[mask]) * e.grid.classical.dx)))
    return MeasurementOutcome(marginal, weights, branch_overlap(setup, e.grid))


def collapse(e: HybridEnsemble, a: float, setup: MeasurementSetup, delta_width: Optional[float] = None) -> HybridEnsemble:
    """Bayesian collapse after reading pointer position a.

    The reading must fall inside exactly one branch support.  The collapsed
    ensemble is the independent product of a narrow (default width 2 dx)
    Gaussian pointer at a with the normalized quantum conditional at x = a,
    which carries the minimally substituted phase S(q, a).
    """
    grid = e.grid
    supports = _branch_supports(e, setup)
    coords = grid.classical.coords
    j_a = int(np.argmin(np.abs(coords - a)))
    hits = [n for n, mask in enumerate(supports) if mask[j_a]]
    if len(hits) == 0:
        raise MeasurementError(f"reading {a} lies outside every branch support")
    if len(hits) > 1:
        lams = [setup.eigensystem[n][0] for n in hits]
        raise MeasurementError(f"reading {a} is ambiguous between branches {lams}")
    psi_a = e.psi[:, j_a]
    wq = np.sum(np.abs(psi_a) ** 2) * grid.quantum.weight
    if wq <= 0:
        raise MeasurementError(f"zero conditional state at reading {a}")
    width = delta_width if delta_width is not None else 2.0 * grid.classical.dx
    pointer = gaussian_packet(coords, coords[j_a], width)
    return product(grid, psi_a / np.sqrt(wq), pointer, e.hbar)
