"""Ensemble Hamiltonians and time evolution.

An ensemble Hamiltonian is a functional H[P, S] generating

    dP/dt = dH/dS,     dS/dt = -dH/dP.

Evolution is integrated in the wavefunction representation with explicit
RK4 and spectral space derivatives.  For the mixed quantum-classical
Hamiltonian the right-hand side is

    i hbar dpsi/dt = [-hbar^2/(2 m_q) d_q^2 + V] psi
                   + [-hbar^2/(2 m_c) d_x^2 + hbar^2/(2 m_c) (d_x^2 sqrtP)/sqrtP] psi,

i.e. linear Schroedinger along the quantum sector while the classical sector
has its quantum potential subtracted pointwise each stage.  The norm is
renormalized every step and the drift logged, separating discretization
error from constraint violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft
from scipy.integrate import solve_ivp

from .ensemble import HybridEnsemble, from_psi, gaussian_packet, product
from .grid import GridError, HybridGrid, ClassicalSector, QuantumSector
from .observables import (
    ClassicalObservable,
    Observable,
    QuantumObservable,
    operator_library,
    phase_library,
)

__all__ = [
    "DynamicsError",
    "EnsembleHamiltonian",
    "QuantumHamiltonian",
    "ClassicalHamiltonian",
    "MixedQCHamiltonian",
    "CustomHamiltonian",
    "EvolutionRecord",
    "EhrenfestBenchmark",
    "EhrenfestResult",
    "step",
    "evolve",
    "ehrenfest_experiment",
    "ehrenfest_residuals",
    "config_expectation",
    "DT_SAFETY",
]

DT_SAFETY = 0.2  # dt <= DT_SAFETY * min(dq, dx)^2 * min(m) / hbar for RK4 stability
QPOT_REG_RATIO = 1e-26


class DynamicsError(RuntimeError):
    """Evolution failure: instability, NaN, or boundary contact."""


def _as_field(V, grid: HybridGrid) -> np.ndarray:
    """Potential from a callable V(q, x) or an array on the grid."""
    if callable(V):
        return np.asarray(V(grid.q, grid.x), dtype=float)
    return np.asarray(grid.check(V), dtype=float)


def _sqrt_ratio(grid: HybridGrid, P: np.ndarray, axis: str, band_limited: bool = False) -> np.ndarray:
    """(d^2 sqrtP / d axis^2) / sqrtP, smoothly regularized at low density.

    The division is damped by P/(P + p_reg) so roundoff-dominated cells
    cannot produce amplified noise; cells carrying more than ~1e-13 of the
    probability are essentially exact.

    With band_limited=True the amplitude sqrtP is low-passed to half the
    Nyquist wavenumber before differentiating.  The quantum-potential term
    acts as a gain medium of rate ~ k^2 on any high-wavenumber content that
    rides on low densities, so the evolution must never feed it unresolved
    scales; the truncation error is the amplitude's spectral tail, which is
    negligible whenever the state itself is resolved.
    """
    s = np.sqrt(P)
    if band_limited and grid.scheme == "spectral":
        s = grid.lowpass(s, half=True)
        lap = grid.laplacian_q(s) if axis == "q" else grid.d2_dx(s)
        return lap * s / (s * s + QPOT_REG_RATIO * P.max())
    lap = grid.laplacian_q(s) if axis == "q" else grid.d2_dx(s)
    return lap * s / (P + QPOT_REG_RATIO * P.max())


class EnsembleHamiltonian(Observable):
    """Base: an observable that also generates dynamics."""

    time_dependent = False
    # Hamiltonians whose rhs is nonlinear in psi (the subtracted quantum
    # potential) need the spectral low-pass each step to stop the aliasing
    # cascade the nonlinearity would otherwise feed.
    needs_filter = False
    # kinds of the form kinetic(Fourier) + real potential(P) support the
    # unconditionally stable split-step propagator
    supports_split = False

    def psi_rhs(self, state, t: float = 0.0) -> np.ndarray:
        """dpsi/dt at the given state."""
        raise NotImplementedError

    def eom_rhs(self, state, t: float = 0.0):
        """(dP/dt, dS/dt) = (dH/dS, -dH/dP) from the variational derivatives."""
        return self.grad_S(state), -self.grad_P(state)

    def dt_max(self, grid: HybridGrid, hbar: float = 1.0) -> float:
        raise NotImplementedError

    def value(self, state, t: float = 0.0) -> float:
        raise NotImplementedError

    def split_omega(self, grid: HybridGrid, hbar: float) -> np.ndarray:
        """Kinetic frequency table omega(kq, kx); propagator exp(-i dt omega)."""
        raise NotImplementedError(f"{self.label!r} has no split-step form")

    def split_potential(self, state, t: float = 0.0) -> np.ndarray:
        """Real potential field (including any density-dependent terms)."""
        raise NotImplementedError(f"{self.label!r} has no split-step form")


class QuantumHamiltonian(EnsembleHamiltonian):
    """Pure quantum sector: kinetic along q plus potential V(q)."""

    def __init__(self, m_q: float, V, label: str = "H_Q"):
        self.m_q = float(m_q)
        self._V = V
        self.label = label

    def _vfield(self, grid: HybridGrid) -> np.ndarray:
        if callable(self._V):
            return np.asarray(self._V(grid.q), dtype=float)
        return np.asarray(grid.check(self._V), dtype=float)

    def psi_rhs(self, state, t: float = 0.0) -> np.ndarray:
        grid, hbar = state.grid, state.hbar
        h_psi = -(hbar**2) / (2 * self.m_q) * grid.laplacian_q(state.psi) + self._vfield(grid) * state.psi
        return h_psi / (1j * hbar)

    def value(self, state, t: float = 0.0) -> float:
        grid = state.grid
        h_psi = -(state.hbar**2) / (2 * self.m_q) * grid.laplacian_q(state.psi) + self._vfield(grid) * state.psi
        return grid.integrate(state.psi.conj() * h_psi).real

    def grad_P(self, state) -> np.ndarray:
        grid, hbar = state.grid, state.hbar
        kq = state.kq()
        qpot = -(hbar**2) / (2 * self.m_q) * _sqrt_ratio(grid, state.P, "q")
        return kq**2 / (2 * self.m_q) + qpot + self._vfield(grid)

    def grad_S(self, state) -> np.ndarray:
        grid = state.grid
        out = -grid.d_dq(state.P * state.kq()) / self.m_q
        out[~state.support] = 0.0
        return out

    def dt_max(self, grid: HybridGrid, hbar: float = 1.0) -> float:
        return DT_SAFETY * grid.quantum.dq**2 * self.m_q / hbar

    supports_split = True

    def split_omega(self, grid: HybridGrid, hbar: float) -> np.ndarray:
        kq = 2.0 * np.pi * np.fft.fftfreq(grid.quantum.n_q, d=grid.quantum.dq)
        return hbar * np.broadcast_to(kq[:, None] ** 2 / (2 * self.m_q), grid.shape).copy()

    def split_potential(self, state, t: float = 0.0) -> np.ndarray:
        return self._vfield(state.grid)


class ClassicalHamiltonian(EnsembleHamiltonian):
    """Classical sector with quadratic kinetic energy: C_H for H = k^2/2m + V(x).

    The wavefunction evolution subtracts the classical-sector quantum
    potential, making the marginal dynamics exactly classical.  For a
    non-quadratic phase-space Hamiltonian wrap the classical observable
    C_H in :class:`CustomHamiltonian` instead.
    """

    needs_filter = True

    def __init__(self, m_c: float, V, label: str = "H_C"):
        self.m_c = float(m_c)
        self._V = V
        self.label = label

    def _vfield(self, grid: HybridGrid) -> np.ndarray:
        if callable(self._V):
            return np.asarray(self._V(grid.x), dtype=float)
        return np.asarray(grid.check(self._V), dtype=float)

    def psi_rhs(self, state, t: float = 0.0) -> np.ndarray:
        grid, hbar = state.grid, state.hbar
        coef = -(hbar**2) / (2 * self.m_c)
        h_psi = coef * grid.d2_dx(state.psi) + self._vfield(grid) * state.psi
        h_psi -= coef * _sqrt_ratio(grid, state.P, "x", band_limited=True) * state.psi
        return h_psi / (1j * hbar)

    def value(self, state, t: float = 0.0) -> float:
        k = state.k()
        return state.grid.integrate(state.P * (k**2 / (2 * self.m_c) + self._vfield(state.grid)))

    def grad_P(self, state) -> np.ndarray:
        return state.k() ** 2 / (2 * self.m_c) + self._vfield(state.grid)

    def grad_S(self, state) -> np.ndarray:
        out = -state.grid.d_dx(state.P * state.k()) / self.m_c
        out[~state.support] = 0.0
        return out

    def dt_max(self, grid: HybridGrid, hbar: float = 1.0) -> float:
        return DT_SAFETY * grid.classical.dx**2 * self.m_c / hbar

    supports_split = True

    def split_omega(self, grid: HybridGrid, hbar: float) -> np.ndarray:
        kx = 2.0 * np.pi * np.fft.fftfreq(grid.classical.n_x, d=grid.classical.dx)
        return hbar * np.broadcast_to(kx[None, :] ** 2 / (2 * self.m_c), grid.shape).copy()

    def split_potential(self, state, t: float = 0.0) -> np.ndarray:
        grid, hbar = state.grid, state.hbar
        return self._vfield(grid) + (hbar**2) / (2 * self.m_c) * _sqrt_ratio(grid, state.P, "x", band_limited=True)


class MixedQCHamiltonian(EnsembleHamiltonian):
    """Interacting quantum and classical particles with potential V(q, x)."""

    needs_filter = True

    def __init__(self, m_q: float, m_c: float, V, label: str = "H_QC"):
        self.m_q = float(m_q)
        self.m_c = float(m_c)
        self._V = V
        self.label = label
        self._cache_key = None
        self._kin_mult = None
        self._vcache = None

    def vfield(self, grid: HybridGrid) -> np.ndarray:
        return _as_field(self._V, grid)

    def _multipliers(self, grid: HybridGrid):
        """Cache the joint Fourier kinetic multiplier and the potential field."""
        key = id(grid)
        if self._cache_key != key:
            kq = 2.0 * np.pi * np.fft.fftfreq(grid.quantum.n_q, d=grid.quantum.dq)
            kx = 2.0 * np.pi * np.fft.fftfreq(grid.classical.n_x, d=grid.classical.dx)
            self._kin_mult = kq[:, None] ** 2 / (2 * self.m_q) + kx[None, :] ** 2 / (2 * self.m_c)
            self._vcache = self.vfield(grid)
            self._cache_key = key
        return self._kin_mult, self._vcache

    def psi_rhs(self, state, t: float = 0.0) -> np.ndarray:
        grid, hbar = state.grid, state.hbar
        if grid.scheme == "spectral":
            kin_mult, vf = self._multipliers(grid)
            h_psi = (hbar**2) * sfft.ifft2(kin_mult * sfft.fft2(state.psi))
            h_psi += vf * state.psi
        else:
            h_psi = -(hbar**2) / (2 * self.m_q) * grid.laplacian_q(state.psi)
            h_psi += -(hbar**2) / (2 * self.m_c) * grid.d2_dx(state.psi)
            h_psi += self.vfield(grid) * state.psi
        h_psi += (hbar**2) / (2 * self.m_c) * _sqrt_ratio(grid, state.P, "x", band_limited=True) * state.psi
        return h_psi / (1j * hbar)

    def value(self, state, t: float = 0.0) -> float:
        """Energy in wavefunction form (classical-sector Fisher term removed)."""
        grid, hbar = state.grid, state.hbar
        h_psi = -(hbar**2) / (2 * self.m_q) * grid.laplacian_q(state.psi)
        h_psi += -(hbar**2) / (2 * self.m_c) * grid.d2_dx(state.psi)
        h_psi += self.vfield(grid) * state.psi
        quantum_part = grid.integrate(state.psi.conj() * h_psi).real
        fisher_x = grid.integrate(grid.d_dx(np.sqrt(state.P)) ** 2)
        return quantum_part - (hbar**2) / (2 * self.m_c) * fisher_x

    def value_ps_form(self, state) -> float:
        """Independent evaluation from (P, grad S) fields, for cross-checking."""
        grid, hbar = state.grid, state.hbar
        kq, kx = state.kq(), state.k()
        fisher_q = grid.d_dq(np.sqrt(state.P)) ** 2
        dens = state.P * (kq**2 / (2 * self.m_q) + kx**2 / (2 * self.m_c) + self.vfield(grid))
        return grid.integrate(dens + (hbar**2) / (2 * self.m_q) * fisher_q)

    def grad_P(self, state) -> np.ndarray:
        grid, hbar = state.grid, state.hbar
        qpot = -(hbar**2) / (2 * self.m_q) * _sqrt_ratio(grid, state.P, "q")
        return state.kq() ** 2 / (2 * self.m_q) + state.k() ** 2 / (2 * self.m_c) + qpot + self.vfield(grid)

    def grad_S(self, state) -> np.ndarray:
        grid = state.grid
        out = -grid.d_dq(state.P * state.kq()) / self.m_q - grid.d_dx(state.P * state.k()) / self.m_c
        out[~state.support] = 0.0
        return out

    def dt_max(self, grid: HybridGrid, hbar: float = 1.0) -> float:
        """RK4 bound from the spectral radius of the right-hand side.

        |lambda|_max is the peak kinetic curvature of both sectors plus the
        largest potential and a margin for the subtracted quantum potential;
        RK4 is stable on the imaginary axis up to 2 sqrt 2, kept with margin.
        """
        if grid.scheme != "spectral":
            return DT_SAFETY * min(grid.quantum.dq, grid.classical.dx) ** 2 * min(self.m_q, self.m_c) / hbar
        kq = np.pi / grid.quantum.dq
        kx = np.pi / grid.classical.dx
        lam = hbar * (kq**2 / (2 * self.m_q) + kx**2 / (2 * self.m_c))
        lam += (np.max(np.abs(self.vfield(grid))) + 0.75 * hbar**2 * kx**2 / (2 * self.m_c)) / hbar
        return 2.5 / lam

    supports_split = True

    def split_omega(self, grid: HybridGrid, hbar: float) -> np.ndarray:
        kq = 2.0 * np.pi * np.fft.fftfreq(grid.quantum.n_q, d=grid.quantum.dq)
        kx = 2.0 * np.pi * np.fft.fftfreq(grid.classical.n_x, d=grid.classical.dx)
        return hbar * (kq[:, None] ** 2 / (2 * self.m_q) + kx[None, :] ** 2 / (2 * self.m_c))

    def split_potential(self, state, t: float = 0.0) -> np.ndarray:
        grid, hbar = state.grid, state.hbar
        return self.vfield(grid) + (hbar**2) / (2 * self.m_c) * _sqrt_ratio(grid, state.P, "x", band_limited=True)


class CustomHamiltonian(EnsembleHamiltonian):
    """Dynamics generated by an arbitrary observable with (P, S) derivatives.

    The wavefunction right-hand side follows from the chain rule
    dpsi/dt = psi * (dP/dt / 2P + i dS/dt / hbar), floored at nodes.
    """

    needs_filter = True

    def __init__(self, functional: Observable, dt_bound: float | None = None):
        self.functional = functional
        self.label = functional.label
        self._dt_bound = dt_bound

    def value(self, state, t: float = 0.0) -> float:
        return self.functional.value(state)

    def grad_P(self, state) -> np.ndarray:
        return self.functional.grad_P(state)

    def grad_S(self, state) -> np.ndarray:
        return self.functional.grad_S(state)

    def psi_rhs(self, state, t: float = 0.0) -> np.ndarray:
        dP, dS = self.eom_rhs(state, t)
        ratio = np.zeros(state.grid.shape)
        np.divide(dP, 2.0 * state.P, out=ratio, where=state.support)
        return state.psi * (ratio + 1j * dS / state.hbar)

    def dt_max(self, grid: HybridGrid, hbar: float = 1.0) -> float:
        if self._dt_bound is None:
            return DT_SAFETY * grid.classical.dx**2 / hbar
        return self._dt_bound


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


def _rk4_psi(H: EnsembleHamiltonian, e: HybridEnsemble, dt: float, t: float) -> np.ndarray:
    grid, hbar = e.grid, e.hbar

    def rhs(psi, tau):
        return H.psi_rhs(HybridEnsemble(grid, psi, hbar), tau)

    k1 = rhs(e.psi, t)
    k2 = rhs(e.psi + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rhs(e.psi + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rhs(e.psi + dt * k3, t + dt)
    return e.psi + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


class _SplitPropagator:
    """Strang splitting exp(-i dt V_eff/2) exp(-i dt T) exp(-i dt V_eff/2).

    Potential kicks are exact unit-modulus exponentials: unconditionally
    stable however large the (density-dependent) potential becomes, which
    explicit stepping is not near classical-sector caustics.  The density
    is invariant during a kick, so the nonlinear potential is constant over
    its own substep; it is re-evaluated after the kinetic drift to keep the
    scheme time-symmetric.  "splitstep4" composes three Strang substeps with
    the standard triple-jump coefficients for fourth order.
    """

    W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))

    def __init__(self, H: EnsembleHamiltonian, grid: HybridGrid, hbar: float):
        if not H.supports_split:
            raise DynamicsError(f"{H.label!r} does not support split-step propagation")
        self.H = H
        self.grid = grid
        self.hbar = hbar
        self.omega = H.split_omega(grid, hbar)
        self._kin_cache = {}

    def _kinetic(self, dt: float) -> np.ndarray:
        key = round(dt, 18)
        if key not in self._kin_cache:
            self._kin_cache[key] = np.exp(-1j * dt * self.omega)
        return self._kin_cache[key]

    def strang(self, psi: np.ndarray, dt: float, t: float) -> np.ndarray:
        v = self.H.split_potential(HybridEnsemble(self.grid, psi, self.hbar), t)
        psi = psi * np.exp(-0.5j * dt * v / self.hbar)
        psi = sfft.ifft2(self._kinetic(dt) * sfft.fft2(psi))
        v = self.H.split_potential(HybridEnsemble(self.grid, psi, self.hbar), t + dt)
        return psi * np.exp(-0.5j * dt * v / self.hbar)

    def yoshida4(self, psi: np.ndarray, dt: float, t: float) -> np.ndarray:
        w1 = self.W1
        w0 = 1.0 - 2.0 * w1
        psi = self.strang(psi, w1 * dt, t)
        psi = self.strang(psi, w0 * dt, t + w1 * dt)
        return self.strang(psi, w1 * dt, t + (w1 + w0) * dt)


_SPLIT_CACHE: dict = {}


def _split_propagator(H, grid, hbar) -> _SplitPropagator:
    key = (id(H), id(grid), hbar)
    prop = _SPLIT_CACHE.get(key)
    if prop is None:
        _SPLIT_CACHE.clear()
        prop = _SplitPropagator(H, grid, hbar)
        _SPLIT_CACHE[key] = prop
    return prop


SCHEMES = ("rk4", "splitstep", "splitstep4")


def step(H: EnsembleHamiltonian, e: HybridEnsemble, dt: float, t: float = 0.0, scheme: str = "rk4", renormalize: bool = True):
    """One time step; returns (new ensemble, norm before renormalization).

    "rk4" is the default explicit integrator; "splitstep" (Strang) and
    "splitstep4" (Yoshida composition) are unconditionally stable for
    kinetic-plus-real-potential Hamiltonians and are required in practice
    when the classical sector approaches a caustic.
    """
    if scheme not in SCHEMES:
        raise DynamicsError(f"unknown scheme {scheme!r}")
    if scheme == "rk4":
        psi = _rk4_psi(H, e, dt, t)
    else:
        prop = _split_propagator(H, e.grid, e.hbar)
        psi = prop.strang(e.psi, dt, t) if scheme == "splitstep" else prop.yoshida4(e.psi, dt, t)
    if H.needs_filter:
        psi = e.grid.lowpass(psi)
    if not np.all(np.isfinite(psi)):
        raise DynamicsError("NaN/Inf in wavefunction after step")
    norm = e.grid.integrate(np.abs(psi) ** 2)
    if renormalize:
        psi = psi / np.sqrt(norm)
    return e.with_psi(psi), norm


@dataclass
class EvolutionRecord:
    """Time series of expectations, energy and norm along an evolution."""

    times: np.ndarray
    expectations: dict
    energy: np.ndarray
    norm: np.ndarray
    max_norm_drift: float
    final: HybridEnsemble

    def table(self) -> dict:
        out = {"t": self.times}
        out.update(self.expectations)
        out["energy"] = self.energy
        out["norm"] = self.norm
        return out


def evolve(
    H: EnsembleHamiltonian,
    e: HybridEnsemble,
    t_final: float,
    dt: float,
    record: Optional[dict] = None,
    record_every: int = 1,
    renormalize: bool = True,
    check_dt: bool = True,
    scheme: str = "rk4",
) -> EvolutionRecord:
    """Integrate to t_final, recording observables every `record_every` steps.

    record maps column names to observables (anything with .value(e)).
    For the explicit scheme, raises before running if dt exceeds the
    Hamiltonian's stability bound (split-step schemes have none), and
    mid-run on NaN with the offending step index.
    """
    if t_final <= 0:
        raise DynamicsError("t_final must be positive")
    bound = H.dt_max(e.grid, e.hbar)
    if check_dt and scheme == "rk4" and dt > bound * (1 + 1e-12):
        raise DynamicsError(f"dt {dt} exceeds stability bound {bound:.3e}")
    record = record or {}
    n_steps = max(1, int(np.ceil(t_final / dt - 1e-12)))
    dt_eff = t_final / n_steps

    times, energies, norms = [], [], []
    series = {name: [] for name in record}

    def snapshot(t, ens, norm_before):
        times.append(t)
        energies.append(H.value(ens, t))
        norms.append(norm_before)
        for name, obs in record.items():
            series[name].append(obs.value(ens))

    current = e
    max_drift = abs(current.norm() - 1.0)
    snapshot(0.0, current, current.norm())
    for i in range(n_steps):
        t = i * dt_eff
        try:
            current, norm_before = step(H, current, dt_eff, t, scheme=scheme, renormalize=renormalize)
        except DynamicsError as err:
            raise DynamicsError(f"step {i + 1}: {err}") from err
        max_drift = max(max_drift, abs(norm_before - 1.0))
        if (i + 1) % record_every == 0 or i + 1 == n_steps:
            snapshot((i + 1) * dt_eff, current, norm_before)

    return EvolutionRecord(
        times=np.array(times),
        expectations={k: np.array(v) for k, v in series.items()},
        energy=np.array(energies),
        norm=np.array(norms),
        max_norm_drift=max_drift,
        final=current,
    )


# ---------------------------------------------------------------------------
# the coupled-oscillator benchmark
# ---------------------------------------------------------------------------


def config_expectation(e: HybridEnsemble, field: np.ndarray) -> float:
    """Expectation of a configuration-space function (a field on the grid)."""
    return e.grid.integrate(e.P * field)


class _ConfigObservable(Observable):
    """integral P * field(q, x); used to record potential-gradient averages."""

    def __init__(self, builder: Callable, label: str):
        self._builder = builder
        self.label = label

    def value(self, state) -> float:
        return state.grid.integrate(state.P * self._builder(state.grid))

    def grad_P(self, state) -> np.ndarray:
        return self._builder(state.grid)

    def grad_S(self, state) -> np.ndarray:
        return np.zeros(state.grid.shape)


@dataclass(frozen=True)
class EhrenfestBenchmark:
    """Linearly-coupled quantum and classical oscillators.

    V(q, x) = m_q omega^2 q^2 / 2 + m_c Omega^2 x^2 / 2 + K q x, with a
    Gaussian product packet at (q0, p0, x0, k0).  The coupling must satisfy
    K^2 < m_q m_c omega^2 Omega^2 so the potential is bounded below.

    Width defaults: the classical sector of a hybrid ensemble is a cold
    fluid (single-valued momentum field), so in a harmonic well it refocuses
    toward a caustic twice per period; the squeeze floor is set by the
    coupling, not the initial width.  The defaults below keep the minimum
    classical width near 0.15 over two periods (verified against the exact
    Gaussian covariance flow), which a 320-point sector still resolves.
    Pass sigma_q/sigma_x explicitly for other regimes; None selects the
    ground-state width of the matching oscillator.
    """

    m_q: float = 1.0
    m_c: float = 1.0
    omega: float = 1.0
    Omega: float = 1.0
    coupling_K: float = 0.25
    q0: float = 1.0
    p0: float = 0.0
    x0: float = -1.0
    k0: float = 0.0
    hbar: float = 1.0
    sigma_q: Optional[float] = np.sqrt(2.0)
    sigma_x: Optional[float] = 1.0

    def __post_init__(self):
        if self.coupling_K**2 >= self.m_q * self.m_c * self.omega**2 * self.Omega**2:
            raise DynamicsError("inadmissible coupling: potential not bounded below")

    def potential(self, q, x):
        return 0.5 * self.m_q * self.omega**2 * q**2 + 0.5 * self.m_c * self.Omega**2 * x**2 + self.coupling_K * q * x

    def hamiltonian(self) -> MixedQCHamiltonian:
        return MixedQCHamiltonian(self.m_q, self.m_c, self.potential, label="H_QC(coupled)")

    def widths(self):
        sq = self.sigma_q if self.sigma_q is not None else np.sqrt(self.hbar / (2 * self.m_q * self.omega))
        sx = self.sigma_x if self.sigma_x is not None else np.sqrt(self.hbar / (2 * self.m_c * self.Omega))
        return sq, sx

    def initial_ensemble(self, grid: HybridGrid) -> HybridEnsemble:
        sq, sx = self.widths()
        pq = gaussian_packet(grid.quantum.coords, self.q0, sq, self.p0, self.hbar)
        pc = gaussian_packet(grid.classical.coords, self.x0, sx, self.k0, self.hbar)
        return product(grid, pq, pc, self.hbar)

    def ode_rhs(self, t, y):
        q, p, x, k = y
        return [
            p / self.m_q,
            -self.m_q * self.omega**2 * q - self.coupling_K * x,
            k / self.m_c,
            -self.m_c * self.Omega**2 * x - self.coupling_K * q,
        ]


def default_ehrenfest_grid(n_q: int = 128, n_x: int = 320) -> HybridGrid:
    """Boxes sized for the default benchmark packet: the quantum width
    breathes up to ~1.4 and the classical width up to ~1.2 around centroids
    of order 1.3, so +-11ish keeps edge probability far below 1e-10."""
    return HybridGrid(
        QuantumSector.continuous(-11.5, 11.5, n_q),
        ClassicalSector(-11.0, 11.0, n_x),
    )


@dataclass
class EhrenfestResult:
    record: EvolutionRecord
    ode_reference: dict
    max_deviation: float
    deviations: dict
    residuals: dict


def _edge_mass(e: HybridEnsemble) -> float:
    mc = e.marginal_classical()
    mq = e.marginal_quantum()
    edge = mc[0] + mc[-1]
    edge_q = mq[0] + mq[-1]
    return float(edge * e.grid.classical.dx + edge_q * e.grid.quantum.weight)


def ehrenfest_residuals(record: EvolutionRecord, m_q: float, m_c: float) -> dict:
    """Centered-difference residuals of the four expectation-value relations.

    d<x>/dt = <k>/m_c, d<k>/dt = -<dV/dx>, d<q>/dt = <p>/m_q,
    d<p>/dt = -<dV/dq>; each residual is scaled by max(1, max |rhs|).
    """
    t = record.times
    ex = record.expectations

    def resid(series, rhs):
        dy = (series[2:] - series[:-2]) / (t[2:] - t[:-2])
        r = np.max(np.abs(dy - rhs[1:-1]))
        return float(r / max(1.0, np.max(np.abs(rhs))))

    return {
        "d<x>/dt = <k>/m_c": resid(ex["mean_x"], ex["mean_k"] / m_c),
        "d<k>/dt = -<dV/dx>": resid(ex["mean_k"], -ex["dV_dx"]),
        "d<q>/dt = <p>/m_q": resid(ex["mean_q"], ex["mean_p"] / m_q),
        "d<p>/dt = -<dV/dq>": resid(ex["mean_p"], -ex["dV_dq"]),
    }


def ehrenfest_experiment(
    b: EhrenfestBenchmark,
    t_final: float,
    dt: float,
    grid: Optional[HybridGrid] = None,
    record_every: int = 2,
    scheme: str = "splitstep4",
) -> EhrenfestResult:
    """Evolve the coupled-oscillator packet and compare against the classical ODE.

    The centroid of the hybrid packet obeys the same closed linear system as
    two classical oscillators; the reference solution is integrated
    independently with DOP853 at tight tolerance.  The default propagator is
    the fourth-order split-step composition: the classical sector passes
    near caustics twice per period, where the density-dependent potential is
    stiff and explicit stepping is unstable.
    """
    grid = grid or default_ehrenfest_grid()
    e0 = b.initial_ensemble(grid)
    if _edge_mass(e0) > 1e-10:
        raise DynamicsError("initial packet touches the box boundary")
    H = b.hamiltonian()

    dVdx = _ConfigObservable(lambda g: b.m_c * b.Omega**2 * g.x + b.coupling_K * g.q, "dV_dx")
    dVdq = _ConfigObservable(lambda g: b.m_q * b.omega**2 * g.q + b.coupling_K * g.x, "dV_dq")
    record = {
        "mean_x": ClassicalObservable(phase_library("x")),
        "mean_k": ClassicalObservable(phase_library("k")),
        "mean_q": QuantumObservable(operator_library("q", grid, b.hbar)),
        "mean_p": QuantumObservable(operator_library("p", grid, b.hbar)),
        "dV_dx": dVdx,
        "dV_dq": dVdq,
    }
    rec = evolve(H, e0, t_final, dt, record=record, record_every=record_every, scheme=scheme)
    if _edge_mass(rec.final) > 1e-10:
        raise DynamicsError("packet reached the box boundary during the run")

    sol = solve_ivp(
        b.ode_rhs,
        (0.0, t_final),
        [b.q0, b.p0, b.x0, b.k0],
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
        t_eval=rec.times,
    )
    ode = {"ode_q": sol.y[0], "ode_p": sol.y[1], "ode_x": sol.y[2], "ode_k": sol.y[3]}

    deviations = {}
    for name, ref in (("mean_q", "ode_q"), ("mean_p", "ode_p"), ("mean_x", "ode_x"), ("mean_k", "ode_k")):
        scale = max(1.0, np.max(np.abs(ode[ref])))
        deviations[name] = float(np.max(np.abs(rec.expectations[name] - ode[ref])) / scale)
    residuals = ehrenfest_residuals(rec, b.m_q, b.m_c)
    return EhrenfestResult(rec, ode, max(deviations.values()), deviations, residuals)
