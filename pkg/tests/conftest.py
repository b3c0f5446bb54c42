import numpy as np
import pytest

from hybrid_ensembles.grid import ClassicalSector, HybridGrid, QuantumSector
from hybrid_ensembles.ensemble import from_ps, from_psi, gaussian_packet, product


@pytest.fixture(scope="session")
def line_grid():
    """Trivial quantum sector over a periodic classical line."""
    return HybridGrid(QuantumSector.discrete(1), ClassicalSector(-8, 8, 64))


@pytest.fixture(scope="session")
def qubit_grid():
    return HybridGrid(QuantumSector.discrete(2), ClassicalSector(-8, 8, 64))


@pytest.fixture(scope="session")
def cont_grid():
    """Continuous quantum sector times classical sector."""
    return HybridGrid(QuantumSector.continuous(-9, 9, 64), ClassicalSector(-9, 9, 64))


@pytest.fixture(scope="session")
def correlated_ensemble(cont_grid):
    """Entangled, nodeless Gaussian fixture: amplitude correlation 0.5 and
    phase coupling 0.3 between the sectors."""
    P = np.exp(-(cont_grid.q**2 + cont_grid.x**2 + 0.5 * cont_grid.q * cont_grid.x))
    S = 0.3 * cont_grid.q * cont_grid.x
    return from_ps(cont_grid, P, S)


@pytest.fixture(scope="session")
def gaussian_line(line_grid):
    """Smooth classical Gaussian with a periodic phase field."""
    P = np.exp(-line_grid.x**2)
    S = 0.7 * np.sin(2 * np.pi * line_grid.x / 16.0)
    return from_ps(line_grid, P, S)


@pytest.fixture(scope="session")
def product_ensemble(cont_grid):
    psi_q = gaussian_packet(cont_grid.quantum.coords, 0.4, 1.0)
    psi_c = gaussian_packet(cont_grid.classical.coords, -0.3, 0.9, momentum=0.7)
    return product(cont_grid, psi_q, psi_c)


def random_smooth_field(grid, rng, cut=4, amplitude=0.5):
    """Real band-limited periodic field on the grid (low Fourier modes only)."""
    nq, nx = grid.shape
    spec = np.zeros((nq, nx), dtype=complex)
    mq = min(cut, max(nq // 3, 1)) if nq > 1 else 1
    mx = min(cut, nx // 3)
    q_range = range(-(mq - 1), mq) if nq > 1 else range(0, 1)
    for iq in q_range:
        for ix in range(-mx, mx + 1):
            spec[iq % nq, ix % nx] = rng.normal() + 1j * rng.normal()
    f = np.fft.ifft2(spec).real
    f *= amplitude / max(np.abs(f).max(), 1e-300)
    return f


def random_node_free_ensemble(grid, rng, hbar=1.0):
    """Strictly positive periodic P with a smooth periodic phase."""
    P = np.exp(2.0 * random_smooth_field(grid, rng, cut=5, amplitude=0.6))
    S = random_smooth_field(grid, rng, cut=5, amplitude=0.8)
    return from_ps(grid, P, S, hbar)


def random_envelope_ensemble(grid, rng, hbar=1.0):
    """Random smooth fields under a Gaussian envelope (decays at the box edge)."""
    a = random_smooth_field(grid, rng, cut=4, amplitude=0.5)
    S = random_smooth_field(grid, rng, cut=4, amplitude=0.8)
    env = np.exp(-((grid.x / 3.0) ** 2))
    if not grid.quantum.is_discrete:
        env = env * np.exp(-((grid.q / 3.0) ** 2))
    P = env * np.exp(a)
    return from_ps(grid, P, S, hbar)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
