"""Stationary trajectory ensembles, thermal mixtures and canonical averages.

A stationary classical ensemble is supported on a single phase-space
trajectory: its density is proportional to 1/|xdot| along the orbit, which
is singular at turning points, so observable values are computed instead as
trajectory time averages

    C_f = lim (1/T) integral_0^T f(x_t, k_t) dt,

the equivalent form after the change of variables.  Time averaging uses a
Hann window, which suppresses the periodic leakage of a finite window to
O((period/T)^3) without requiring period detection.

A thermal mixture weights these stationary ensembles, labeled by their
initial phase point, by exp(-beta * H(x0, k0)).  Averaging trajectory time
averages over the mixture reproduces the canonical phase-space ensemble for
1D bounded (ergodic) systems; a two-dimensional quadrature of the canonical
density provides the independent reference.  The quantum analogue weights
energy eigenstates by exp(-beta * E_n) and reproduces the Gibbs average
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .dynamics import EnsembleHamiltonian, evolve, DynamicsError
from .ensemble import HybridEnsemble, Mixture, product
from .grid import HybridGrid
from .observables import PhaseFunction, QuantumOperator, ObservableError

__all__ = [
    "ThermalError",
    "TrajectoryEnsemble",
    "ThermalMixture",
    "TimeAverage",
    "CanonicalAverage",
    "hamiltonian_library",
    "time_average",
    "characteristic_period",
    "stationarity_check",
    "sample_thermal",
    "canonical_average",
    "canonical_table",
    "quadrature_reference",
    "factorization_check",
    "quantum_gibbs_mixture",
    "quantum_gibbs_closed_form",
]


class ThermalError(RuntimeError):
    """Sampling or trajectory failure."""


def hamiltonian_library(name: str, **params) -> PhaseFunction:
    """Phase-space Hamiltonians: ho(m, omega) and quartic(m, a)."""
    if name == "ho":
        m = float(params.get("m", 1.0))
        om = float(params.get("omega", 1.0))
        return PhaseFunction(
            lambda x, k: k**2 / (2 * m) + 0.5 * m * om**2 * x**2,
            lambda x, k: m * om**2 * x * np.ones_like(k),
            lambda x, k: k / m * np.ones_like(x),
            f"ho(m={m:g},omega={om:g})",
        )
    if name == "quartic":
        m = float(params.get("m", 1.0))
        a = float(params.get("a", 1.0))
        return PhaseFunction(
            lambda x, k: k**2 / (2 * m) + a * x**4 / 4.0,
            lambda x, k: a * x**3 * np.ones_like(k),
            lambda x, k: k / m * np.ones_like(x),
            f"quartic(m={m:g},a={a:g})",
        )
    raise ThermalError(f"unknown phase-space Hamiltonian {name!r}")


# ---------------------------------------------------------------------------
# trajectories and time averages
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Stationary ensemble labeled by its initial phase point (x0, k0).

    dt is the leapfrog step; the Hamiltonian should be separable
    (H = T(k) + V(x)) for the integrator to be symplectic.
    """

    H: PhaseFunction
    x0: float
    k0: float
    dt: float

    @property
    def energy(self) -> float:
        return float(self.H.f(self.x0, self.k0))


def _leapfrog_sweep(
    H: PhaseFunction,
    x0: np.ndarray,
    k0: np.ndarray,
    dt,
    n_steps: int,
    fs: Sequence[PhaseFunction],
    bound: float = 1e6,
):
    """Vectorized kick-drift-kick sweep accumulating Hann-weighted averages.

    Returns (averages (n_f, n_samples), half-window averages, max relative
    energy drift).  dt may be a scalar or a per-sample array.
    """
    H.require_gradients()
    x = np.array(x0, dtype=float, copy=True)
    k = np.array(k0, dtype=float, copy=True)
    e0 = H.f(x, k)
    scale = np.maximum(np.abs(e0), 1.0)
    nf = len(fs)
    num = np.zeros((nf,) + x.shape)
    den = 0.0
    num_half = np.zeros_like(num)
    den_half = 0.0
    drift = np.zeros_like(x)
    n_half = n_steps // 2

    def accumulate(i, xx, kk):
        nonlocal den, den_half, drift
        w = np.sin(np.pi * i / n_steps) ** 2
        for a, f in enumerate(fs):
            val = f.f(xx, kk)
            num[a] += w * val
            if i <= n_half:
                num_half[a] += np.sin(np.pi * i / max(n_half, 1)) ** 2 * val
        den += w
        if i <= n_half:
            den_half += np.sin(np.pi * i / max(n_half, 1)) ** 2
        drift = np.maximum(drift, np.abs(H.f(xx, kk) - e0) / scale)

    accumulate(0, x, k)
    for i in range(1, n_steps + 1):
        k = k - 0.5 * dt * H.df_dx(x, k)
        x = x + dt * H.df_dk(x, k)
        k = k - 0.5 * dt * H.df_dx(x, k)
        if i % 64 == 0 and (np.max(np.abs(x)) > bound or np.max(np.abs(k)) > bound):
            raise ThermalError("trajectory escaped the configured bounds")
        accumulate(i, x, k)
    return num / den, num_half / max(den_half, 1e-300), float(np.max(drift))


@dataclass
class TimeAverage:
    """A trajectory time average with its convergence and drift diagnostics."""

    value: float
    convergence: float  # |half-window - full-window| difference
    energy_drift: float  # max relative drift of H along the trajectory

    def __float__(self):
        return self.value


def characteristic_period(H: PhaseFunction, energy: float, dt_probe: Optional[float] = None) -> float:
    """Orbit period at the given energy above the minimum, by winding a probe
    trajectory once around the fixed point."""
    H.require_gradients()
    xm, km = _minimum(H)
    e_min = float(H.f(xm, km))
    target = e_min + max(energy, 1e-12)
    # find k with H(xm, k) = target by bisection along the momentum axis
    hi = 1.0
    while H.f(xm, km + hi) < target and hi < 1e8:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if H.f(xm, km + mid) < target:
            lo = mid
        else:
            hi = mid
    kstart = km + 0.5 * (lo + hi)
    if dt_probe is None:
        curv = max(abs(H.f(xm + 1e-3, km) - 2 * e_min + H.f(xm - 1e-3, km)) / 1e-6, 1e-12)
        omega0 = np.sqrt(curv * max(abs(H.f(xm, km + 1e-3) - 2 * e_min + H.f(xm, km - 1e-3)) / 1e-6, 1e-12))
        dt_probe = min(1e-2, 1e-2 / max(omega0, 1e-2))
    x, k = np.array([xm]), np.array([kstart])
    theta = 0.0
    prev = np.arctan2(k[0] - km, 1e-300 + x[0] - xm)
    for i in range(1, 10**7):
        k = k - 0.5 * dt_probe * H.df_dx(x, k)
        x = x + dt_probe * H.df_dk(x, k)
        k = k - 0.5 * dt_probe * H.df_dx(x, k)
        ang = np.arctan2(k[0] - km, x[0] - xm)
        d = ang - prev
        if d > np.pi:
            d -= 2 * np.pi
        if d < -np.pi:
            d += 2 * np.pi
        theta += d
        prev = ang
        if abs(theta) >= 2 * np.pi:
            return i * dt_probe * 2 * np.pi / abs(theta)
    raise ThermalError("probe trajectory did not close; not a bounded 1D orbit?")


def time_average(f: PhaseFunction, te: TrajectoryEnsemble, T_avg: float, bound: float = 1e6) -> TimeAverage:
    """Hann-windowed trajectory average of f; equals the stationary-ensemble
    value of the corresponding classical observable."""
    n_steps = max(int(round(T_avg / te.dt)), 8)
    avg, half, drift = _leapfrog_sweep(te.H, np.array([te.x0]), np.array([te.k0]), te.dt, n_steps, [f], bound)
    return TimeAverage(float(avg[0, 0]), abs(float(avg[0, 0]) - float(half[0, 0])), drift)


# ---------------------------------------------------------------------------
# stationarity of candidate ensembles
# ---------------------------------------------------------------------------


def stationarity_check(e: HybridEnsemble, H: EnsembleHamiltonian, t_window: float = 0.5, dt: Optional[float] = None):
    """Evolve one short window; return (max |P(t)-P(0)|, energy from the
    global phase rotation rate).

    A stationary ensemble keeps P fixed while its phase rotates at -E/hbar;
    the window must satisfy |E| * t_window < pi * hbar for an unambiguous
    phase readout.
    """
    if dt is None:
        dt = 0.5 * H.dt_max(e.grid, e.hbar)
    rec = evolve(H, e, t_window, dt, record_every=10**9)
    final = rec.final
    dP_norm = float(np.max(np.abs(final.P - e.P)))
    overlap = e.grid.integrate(e.psi.conj() * final.psi)
    E_est = -e.hbar * np.angle(overlap) / rec.times[-1]
    return dP_norm, float(E_est)


# ---------------------------------------------------------------------------
# thermal sampling
# ---------------------------------------------------------------------------


def _minimum(H: PhaseFunction):
    res = minimize(
        lambda z: float(H.f(z[0], z[1])),
        x0=np.zeros(2),
        jac=lambda z: np.array([float(H.df_dx(z[0], z[1])), float(H.df_dk(z[0], z[1]))]),
        method="BFGS",
    )
    if not np.all(np.isfinite(res.x)) or np.max(np.abs(res.x)) > 1e6:
        raise ThermalError("Hamiltonian appears unbounded below: exp(-beta H) not integrable")
    return float(res.x[0]), float(res.x[1])


def _hessian(H: PhaseFunction, x: float, k: float, h: float = 1e-4) -> np.ndarray:
    fxx = (H.f(x + h, k) - 2 * H.f(x, k) + H.f(x - h, k)) / h**2
    fkk = (H.f(x, k + h) - 2 * H.f(x, k) + H.f(x, k - h)) / h**2
    fxk = (H.f(x + h, k + h) - H.f(x + h, k - h) - H.f(x - h, k + h) + H.f(x - h, k - h)) / (4 * h**2)
    return np.array([[fxx, fxk], [fxk, fkk]], dtype=float)


def _target_box(H: PhaseFunction, beta: float, x0: float, k0: float, drop: float = 40.0):
    """Half-widths around the minimum where beta*(H - Hmin) reaches `drop`."""
    e0 = float(H.f(x0, k0))

    def half_width(axis):
        r = 1.0
        for _ in range(60):
            x = x0 + r if axis == 0 else x0
            k = k0 + r if axis == 1 else k0
            if beta * (float(H.f(x, k)) - e0) > drop:
                return r
            r *= 1.5
        raise ThermalError("exp(-beta H) appears non-integrable (no decay found)")

    return half_width(0), half_width(1)


@dataclass
class ThermalMixture:
    """Importance-weighted sample of stationary-ensemble labels (x0, k0)."""

    beta: float
    samples: np.ndarray  # shape (n, 2)
    weights: np.ndarray  # normalized
    sampler: str
    seed: int
    ess: float

    @property
    def n(self) -> int:
        return self.samples.shape[0]


def sample_thermal(
    H: PhaseFunction,
    beta: float,
    n_samples: int,
    sampler: str = "importance",
    seed: int = 0,
) -> ThermalMixture:
    """Draw stationary-ensemble labels with weights prop. to exp(-beta H).

    "importance": independence sampling from a Gaussian matched to the
    Hessian of H at its minimum (exact for quadratic H, giving uniform
    weights), falling back to quadrature-matched moments with inflated
    variance when the Hessian is degenerate.  "metropolis": random-walk
    chain with uniform weights.  Deterministic under the seed.
    """
    if beta <= 0:
        raise ThermalError("beta must be positive")
    rng = np.random.default_rng(seed)
    xm, km = _minimum(H)
    e_min = float(H.f(xm, km))
    hess = _hessian(H, xm, km)
    eigvals = np.linalg.eigvalsh(hess)

    if sampler == "importance":
        if eigvals.min() > 1e-8 * max(eigvals.max(), 1.0):
            cov = np.linalg.inv(beta * hess)
        else:
            # degenerate curvature: match second moments by quadrature, inflate
            wx, wk = _target_box(H, beta, xm, km)
            xs = np.linspace(xm - wx, xm + wx, 201)
            ks = np.linspace(km - wk, km + wk, 201)
            X, K = np.meshgrid(xs, ks, indexing="ij")
            rho = np.exp(-beta * (H.f(X, K) - e_min))
            z = rho.sum()
            var_x = float((rho * (X - xm) ** 2).sum() / z)
            var_k = float((rho * (K - km) ** 2).sum() / z)
            cov = np.diag([2.25 * var_x, 2.25 * var_k])
        mean = np.array([xm, km])
        pts = rng.multivariate_normal(mean, cov, size=n_samples)
        inv = np.linalg.inv(cov)
        diff = pts - mean
        log_q = -0.5 * np.einsum("ni,ij,nj->n", diff, inv, diff)
        log_w = -beta * (H.f(pts[:, 0], pts[:, 1]) - e_min) - log_q
        log_w -= log_w.max()
        w = np.exp(log_w)
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise ThermalError("importance weights degenerate; exp(-beta H) may be non-integrable")
        w = w / total
        ess = 1.0 / np.sum(w**2)
        if ess < max(10.0, 0.001 * n_samples):
            raise ThermalError(f"effective sample size {ess:.1f} collapsed; weight variance divergent?")
        return ThermalMixture(beta, pts, w, sampler, seed, float(ess))

    if sampler == "metropolis":
        wx, wk = _target_box(H, beta, xm, km, drop=2.0)
        step = np.array([wx, wk])
        z = np.array([xm, km])
        e_z = float(H.f(z[0], z[1]))
        burn = 1000
        out = np.empty((n_samples, 2))
        for i in range(burn + n_samples):
            prop = z + step * rng.normal(size=2)
            e_p = float(H.f(prop[0], prop[1]))
            if np.log(rng.uniform()) < -beta * (e_p - e_z):
                z, e_z = prop, e_p
            if i >= burn:
                out[i - burn] = z
        w = np.full(n_samples, 1.0 / n_samples)
        return ThermalMixture(beta, out, w, sampler, seed, float(n_samples))

    raise ThermalError(f"unknown sampler {sampler!r}")


# ---------------------------------------------------------------------------
# canonical averages
# ---------------------------------------------------------------------------


def quadrature_reference(f: PhaseFunction, H: PhaseFunction, beta: float, n_nodes: int = 240) -> float:
    """Canonical phase-space average by 2D Gauss-Legendre quadrature
    (the independent oracle for the mixture construction)."""
    xm, km = _minimum(H)
    e_min = float(H.f(xm, km))
    wx, wk = _target_box(H, beta, xm, km)
    nodes, wts = np.polynomial.legendre.leggauss(n_nodes)
    xs = xm + wx * nodes
    ks = km + wk * nodes
    X, K = np.meshgrid(xs, ks, indexing="ij")
    W = np.outer(wts, wts)
    rho = np.exp(-beta * (H.f(X, K) - e_min))
    z = float((W * rho).sum())
    return float((W * rho * f.f(X, K)).sum() / z)


@dataclass
class CanonicalAverage:
    value: float
    stderr: float
    quadrature_reference: float
    ess: float

    @property
    def z_score(self) -> float:
        return abs(self.value - self.quadrature_reference) / max(self.stderr, 1e-300)


def _weighted_stats(F: np.ndarray, w: np.ndarray, sampler: str):
    mu = float(np.sum(w * F))
    if sampler == "metropolis":
        # batch means over the chain order to absorb autocorrelation
        nb = 50
        n = len(F)
        size = n // nb
        if size >= 2:
            batches = F[: nb * size].reshape(nb, size).mean(axis=1)
            stderr = float(batches.std(ddof=1) / np.sqrt(nb))
        else:
            stderr = float(F.std(ddof=1) / np.sqrt(n))
    else:
        stderr = float(np.sqrt(np.sum(w**2 * (F - mu) ** 2)))
    return mu, stderr


def canonical_table(
    fs: Sequence[PhaseFunction],
    H: PhaseFunction,
    beta: float,
    n_samples: int = 10_000,
    T_avg: Optional[float] = None,
    dt: Optional[float] = None,
    sampler: str = "importance",
    seed: int = 0,
    mixture: Optional[ThermalMixture] = None,
) -> list[CanonicalAverage]:
    """Mixture averages of several observables in one trajectory sweep.

    Each sampled label contributes the Hann-windowed time average of f along
    its trajectory; the mixture average is the importance-weighted mean.
    Defaults: T_avg is 50 characteristic periods at the thermal energy
    scale 1/beta, dt is 1/200 of that period (time-average bias O(dt^2),
    far below the sampling error at these sizes).
    """
    mix = mixture if mixture is not None else sample_thermal(H, beta, n_samples, sampler, seed)
    period = characteristic_period(H, 1.0 / beta)
    if T_avg is None:
        T_avg = 50.0 * period
    if dt is None:
        dt = period / 200.0
    n_steps = max(int(round(T_avg / dt)), 8)
    avgs, _, drift = _leapfrog_sweep(H, mix.samples[:, 0], mix.samples[:, 1], dt, n_steps, fs)
    if drift > 1e-2:
        raise ThermalError(f"leapfrog energy drift {drift:.2e} too large at dt={dt:g}")
    out = []
    for a, f in enumerate(fs):
        mu, stderr = _weighted_stats(avgs[a], mix.weights, mix.sampler)
        out.append(CanonicalAverage(mu, stderr, quadrature_reference(f, H, beta), mix.ess))
    return out


def canonical_average(
    f: PhaseFunction,
    H: PhaseFunction,
    beta: float,
    n_samples: int = 10_000,
    T_avg: Optional[float] = None,
    dt: Optional[float] = None,
    sampler: str = "importance",
    seed: int = 0,
) -> CanonicalAverage:
    """Thermal-mixture average of one observable; see :func:`canonical_table`."""
    return canonical_table([f], H, beta, n_samples, T_avg, dt, sampler, seed)[0]


@dataclass
class FactorizationCheck:
    weight_residual: float  # max |w_joint - w1 * w2| over pairs
    product_mean: float  # <f1 f2> over the joint mixture
    factored_mean: float  # <f1> <f2>
    stderr: float

    @property
    def z_score(self) -> float:
        return abs(self.product_mean - self.factored_mean) / max(self.stderr, 1e-300)


def factorization_check(
    H1: PhaseFunction,
    H2: PhaseFunction,
    beta: float,
    f1: Optional[PhaseFunction] = None,
    f2: Optional[PhaseFunction] = None,
    n_samples: int = 4000,
    seed: int = 0,
) -> FactorizationCheck:
    """Thermal weights of noninteracting systems factorize; so do averages.

    The joint weight computed from H1 + H2 is compared entry-by-entry with
    the product of the marginal weights (a floating-point identity of exp),
    and the mixture average of f1 * f2 with the product of averages, with a
    batch-means error bar.
    """
    f1 = f1 if f1 is not None else hamiltonian_library("ho")
    f2 = f2 if f2 is not None else hamiltonian_library("ho")
    m1 = sample_thermal(H1, beta, n_samples, "importance", seed)
    m2 = sample_thermal(H2, beta, n_samples, "importance", seed + 1)

    e1 = H1.f(m1.samples[:, 0], m1.samples[:, 1])
    e2 = H2.f(m2.samples[:, 0], m2.samples[:, 1])
    joint = np.exp(-beta * (e1 - e1.min() + e2 - e2.min()))
    prod = np.exp(-beta * (e1 - e1.min())) * np.exp(-beta * (e2 - e2.min()))
    weight_residual = float(np.max(np.abs(joint - prod)) / np.max(prod))

    period = max(characteristic_period(H1, 1.0 / beta), characteristic_period(H2, 1.0 / beta))
    dt = period / 200.0
    n_steps = int(round(50.0 * period / dt))  # 50 characteristic periods
    a1, _, _ = _leapfrog_sweep(H1, m1.samples[:, 0], m1.samples[:, 1], dt, n_steps, [f1])
    a2, _, _ = _leapfrog_sweep(H2, m2.samples[:, 0], m2.samples[:, 1], dt, n_steps, [f2])
    F1, F2 = a1[0], a2[0]
    w = m1.weights * m2.weights
    w = w / w.sum()
    prod_mean = float(np.sum(w * F1 * F2))
    mean1 = float(np.sum(m1.weights * F1))
    mean2 = float(np.sum(m2.weights * F2))
    # delta-method error bar for <f1 f2> - <f1><f2> from independent streams
    var = np.sum(w**2 * (F1 * F2 - prod_mean) ** 2)
    var += mean2**2 * np.sum(m1.weights**2 * (F1 - mean1) ** 2)
    var += mean1**2 * np.sum(m2.weights**2 * (F2 - mean2) ** 2)
    return FactorizationCheck(weight_residual, prod_mean, mean1 * mean2, float(np.sqrt(var)))


# ---------------------------------------------------------------------------
# quantum thermal mixtures
# ---------------------------------------------------------------------------


def quantum_gibbs_closed_form(op: QuantumOperator, beta: float) -> float:
    """sum_n lambda_n exp(-beta lambda_n) / sum_n exp(-beta lambda_n)."""
    lam = np.linalg.eigvalsh(op.matrix)
    w = np.exp(-beta * (lam - lam.min()))
    return float(np.sum(lam * w) / np.sum(w))


def quantum_gibbs_mixture(grid: HybridGrid, op: QuantumOperator, beta: float, psi_c: np.ndarray, hbar: float = 1.0) -> Mixture:
    """Mixture of eigenstate product ensembles weighted by exp(-beta E_n)."""
    if op.dim != grid.quantum.n:
        raise ObservableError("operator dimension does not match the quantum sector")
    vals, vecs = np.linalg.eigh(op.matrix)
    w = np.exp(-beta * (vals - vals.min()))
    w = w / w.sum()
    members = [(w[n], product(grid, vecs[:, n], psi_c, hbar)) for n in range(op.dim)]
    return Mixture.of(members)
