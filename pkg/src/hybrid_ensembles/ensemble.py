"""Hybrid configuration ensembles and mixtures.

The state of a hybrid ensemble is the pair (P, S): a probability density P
and its conjugate field S on the joint configuration space.  Canonical
storage is the hybrid wavefunction ``psi = sqrt(P) * exp(i S / hbar)``,
which is single-valued where S is only defined modulo 2*pi*hbar and remains
regular at nodes of P.  Everything that formally needs S is computed from
phase gradients of psi.

Divisions by P or psi are floored: cells with P below ``1e-30 * max(P)``
are treated as dynamically inert (gradients and momenta set to zero there),
matching the constraint that variations of S are irrelevant where P = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import GridError, HybridGrid

__all__ = [
    "EnsembleError",
    "HybridEnsemble",
    "Mixture",
    "from_ps",
    "from_psi",
    "product",
    "phase_point_ensemble",
    "mixture_expectation",
    "to_json",
    "from_json",
]

FLOOR_RATIO = 1e-30
NORM_TOL = 1e-9


class EnsembleError(ValueError):
    """Invalid ensemble construction or use."""


def _momentum_from_psi(grid: HybridGrid, psi: np.ndarray, hbar: float, axis: str) -> np.ndarray:
    """hbar * Im(d psi / psi) along one axis, zero where P is floored."""
    deriv = grid.d_dx(psi) if axis == "x" else grid.d_dq(psi)
    P = np.abs(psi) ** 2
    floor = FLOOR_RATIO * P.max()
    mask = P > floor
    out = np.zeros(grid.shape)
    np.divide((deriv * psi.conj()).imag, P, out=out, where=mask)
    return hbar * out


@dataclass(frozen=True, eq=False)
class HybridEnsemble:
    """A hybrid ensemble in canonical wavefunction storage.

    Attributes
    ----------
    grid : HybridGrid
    psi : complex array, shape grid.shape
    hbar : float
    """

    grid: HybridGrid
    psi: np.ndarray
    hbar: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "psi", np.asarray(self.psi, dtype=complex))
        self.grid.check(self.psi)
        if self.hbar <= 0:
            raise EnsembleError(f"hbar must be positive, got {self.hbar}")

    # -- derived fields -----------------------------------------------------

    @cached_property
    def P(self) -> np.ndarray:
        """Probability density |psi|^2 (nonnegative by construction)."""
        return np.abs(self.psi) ** 2

    @property
    def p_floor(self) -> float:
        return FLOOR_RATIO * self.P.max()

    @cached_property
    def support(self) -> np.ndarray:
        """Boolean mask of cells above the density floor."""
        return self.P > self.p_floor

    def k(self) -> np.ndarray:
        """Classical momentum field grad_x S = hbar * Im(d_dx psi / psi)."""
        return self._k_x

    @cached_property
    def _k_x(self) -> np.ndarray:
        return _momentum_from_psi(self.grid, self.psi, self.hbar, axis="x")

    def kq(self) -> np.ndarray:
        """Quantum-sector phase gradient (continuous quantum sector only)."""
        return self._k_q

    @cached_property
    def _k_q(self) -> np.ndarray:
        return _momentum_from_psi(self.grid, self.psi, self.hbar, axis="q")

    # -- diagnostics ---------------------------------------------------------

    def norm(self) -> float:
        return self.grid.integrate(self.P)

    def validate(self, tol: float = NORM_TOL) -> None:
        n = self.norm()
        if abs(n - 1.0) > tol:
            raise EnsembleError(f"ensemble not normalized: integral of P is {n!r}")

    def marginal_classical(self) -> np.ndarray:
        """Classical marginal density; integrates to the ensemble norm."""
        return self.grid.integrate_q(self.P)

    def marginal_quantum(self) -> np.ndarray:
        """Quantum marginal density (a probability vector when q is discrete)."""
        return self.grid.integrate_x(self.P)

    def with_psi(self, psi: np.ndarray) -> "HybridEnsemble":
        return HybridEnsemble(self.grid, psi, self.hbar)


# -- constructors ------------------------------------------------------------


def from_psi(grid: HybridGrid, psi: np.ndarray, hbar: float = 1.0, normalize: bool = True) -> HybridEnsemble:
    """Build an ensemble from a wavefunction, normalizing by default."""
    psi = np.asarray(psi, dtype=complex)
    grid.check(psi)
    if normalize:
        n = grid.integrate(np.abs(psi) ** 2)
        if n <= 0:
            raise EnsembleError("cannot normalize: zero total mass")
        psi = psi / np.sqrt(n)
    return HybridEnsemble(grid, psi, hbar)


def from_ps(grid: HybridGrid, P: np.ndarray, S: np.ndarray, hbar: float = 1.0, normalize: bool = True) -> HybridEnsemble:
    """Build an ensemble from conjugate fields (P, S).

    P is clipped at zero after checking it is nonnegative to within -1e-12
    of its peak, and normalized to unit integral.  The phase is exp(i S/hbar);
    adding a constant to S changes nothing observable.
    """
    P = np.asarray(grid.check(P), dtype=float)
    S = np.asarray(grid.check(S), dtype=float)
    scale = max(P.max(), 0.0)
    if P.min() < -1e-12 * max(scale, 1.0):
        raise EnsembleError(f"P has a negative entry: min {P.min()!r}")
    mass = grid.integrate(P)
    if mass <= 0:
        raise EnsembleError("P has zero total mass")
    P = np.clip(P, 0.0, None)
    if normalize:
        P = P / grid.integrate(P)
    psi = np.sqrt(P) * np.exp(1j * S / hbar)
    return HybridEnsemble(grid, psi, hbar)


def product(grid: HybridGrid, psi_q: np.ndarray, psi_c: np.ndarray, hbar: float = 1.0) -> HybridEnsemble:
    """Independent (product) ensemble psi(q, x) = psi_q(q) * psi_c(x).

    Both factors are normalized internally; P and S then factorize, so the
    components are independent.
    """
    psi_q = np.asarray(psi_q, dtype=complex).reshape(-1)
    psi_c = np.asarray(psi_c, dtype=complex).reshape(-1)
    if psi_q.shape[0] != grid.quantum.n:
        raise EnsembleError(f"quantum factor has length {psi_q.shape[0]}, grid wants {grid.quantum.n}")
    if psi_c.shape[0] != grid.classical.n_x:
        raise EnsembleError(f"classical factor has length {psi_c.shape[0]}, grid wants {grid.classical.n_x}")
    nq = np.sum(np.abs(psi_q) ** 2) * grid.quantum.weight
    nc = np.sum(np.abs(psi_c) ** 2) * grid.classical.dx
    if nq <= 0 or nc <= 0:
        raise EnsembleError("zero product factor")
    psi = np.outer(psi_q / np.sqrt(nq), psi_c / np.sqrt(nc))
    return HybridEnsemble(grid, psi, hbar)


def gaussian_packet(coords: np.ndarray, center: float, sigma: float, momentum: float = 0.0, hbar: float = 1.0) -> np.ndarray:
    """Normalized-by-caller Gaussian wave packet exp(-(x-c)^2/4 sigma^2 + i k x / hbar)."""
    return np.exp(-((coords - center) ** 2) / (4.0 * sigma**2) + 1j * momentum * coords / hbar)


def phase_point_ensemble(
    grid: HybridGrid,
    x0: float,
    k0: float,
    sigma: float,
    hbar: float = 1.0,
    psi_q: np.ndarray | None = None,
) -> HybridEnsemble:
    """Regularized classical phase-space point (x0, k0).

    The delta density is replaced by a Gaussian of width sigma (standard
    deviation), with the linear phase S = k0 * x.  As sigma -> 0 classical
    expectations converge to the point values f(x0, k0).  sigma must be at
    least 2 grid spacings to be resolvable.
    """
    if sigma < 2.0 * grid.classical.dx:
        raise EnsembleError(
            f"sigma {sigma} unresolvable: needs >= 2 dx = {2.0 * grid.classical.dx}"
        )
    if psi_q is None:
        if not (grid.quantum.is_discrete and grid.quantum.d == 1):
            raise EnsembleError("pass psi_q explicitly unless the quantum sector is discrete with d=1")
        psi_q = np.ones(1)
    psi_c = gaussian_packet(grid.classical.coords, x0, sigma, momentum=k0, hbar=hbar)
    return product(grid, psi_q, psi_c, hbar)


# -- mixtures ------------------------------------------------------------------


@dataclass(frozen=True)
class Mixture:
    """Weighted collection of ensembles on one grid; weights sum to 1."""

    members: tuple  # of (weight, HybridEnsemble)

    def __post_init__(self):
        if len(self.members) == 0:
            raise EnsembleError("empty mixture")
        weights = np.array([w for w, _ in self.members], dtype=float)
        if weights.min() < 0 or weights.max() > 1:
            raise EnsembleError("mixture weights must lie in [0, 1]")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise EnsembleError(f"mixture weights sum to {weights.sum()!r}, not 1")
        g0 = self.members[0][1].grid
        for _, e in self.members:
            if e.grid != g0:
                raise EnsembleError("all mixture members must share one grid")

    @classmethod
    def of(cls, pairs) -> "Mixture":
        return cls(tuple((float(w), e) for w, e in pairs))


def mixture_expectation(mix: Mixture, observable) -> float:
    """Average of an observable over a mixture: sum_j w_j * A[P_j, S_j]."""
    return float(sum(w * observable.value(e) for w, e in mix.members))


# -- serialization --------------------------------------------------------------

SCHEMA_VERSION = 1


def to_json(e: HybridEnsemble) -> str:
    """Serialize an ensemble snapshot; floats round-trip exactly."""
    rec = {
        "schema_version": SCHEMA_VERSION,
        "grid": e.grid.descriptor(),
        "hbar": e.hbar,
        "psi_re": e.psi.real.reshape(-1).tolist(),
        "psi_im": e.psi.imag.reshape(-1).tolist(),
    }
    return json.dumps(rec)


def from_json(text: str) -> HybridEnsemble:
    rec = json.loads(text)
    if rec.get("schema_version") != SCHEMA_VERSION:
        raise EnsembleError(f"unsupported snapshot schema: {rec.get('schema_version')!r}")
    grid = HybridGrid.from_descriptor(rec["grid"])
    psi = (np.array(rec["psi_re"]) + 1j * np.array(rec["psi_im"])).reshape(grid.shape)
    return HybridEnsemble(grid, psi, rec["hbar"])
