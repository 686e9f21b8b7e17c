import math

import numpy as np
import pytest

from bunchlab.models.counterexample import load_counterexample, reproduce_paper
from bunchlab.models.interferometer import InterferometerScene, haar_unitary, h_matrix
from bunchlab.utils.io_utils import save_matrix_file

# --- Random Instance Fixtures ---

@pytest.fixture
def rng():
    """Seeded generator so every test sees the same instances."""
    return np.random.default_rng(20240501)


@pytest.fixture
def random_complex(rng):
    """Factory for random complex n x n matrices."""
    def make(n: int) -> np.ndarray:
        return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return make


@pytest.fixture
def random_scene(rng):
    """Factory for Haar scenes with photons in modes 1..n and a random detection set."""
    def make(n: int, extra_modes: int = 2) -> InterferometerScene:
        m = n + extra_modes
        u = haar_unitary(m, seed=int(rng.integers(2 ** 32)))
        size = int(rng.integers(1, m))
        kappa = tuple(sorted(int(k) + 1 for k in rng.choice(m, size=size, replace=False)))
        return InterferometerScene(u=u, n=n, kappa=kappa)
    return make


@pytest.fixture
def random_gram(rng):
    """Factory for Gram matrices of random unit vectors in C^dim."""
    def make(n: int, dim: int = 3) -> np.ndarray:
        v = rng.standard_normal((n, dim)) + 1j * rng.standard_normal((n, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v.conj() @ v.T
    return make


# --- Hong-Ou-Mandel Fixtures ---

@pytest.fixture
def hom_unitary():
    return np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.complex128) / math.sqrt(2.0)


@pytest.fixture
def hom_h(hom_unitary):
    """H of a balanced splitter with both photons detected in output mode 1."""
    return h_matrix(InterferometerScene(u=hom_unitary, n=2, kappa=(1,)))


# --- File Fixtures ---

@pytest.fixture
def matrix_file(tmp_path):
    """Writes a matrix as a MatrixFile JSON and returns its path."""
    def write(a, name: str = "matrix.json") -> str:
        path = str(tmp_path / name)
        save_matrix_file(a, path)
        return path
    return write


# --- Counterexample Fixtures (expensive, shared across the session) ---

@pytest.fixture(scope='session')
def counterexample():
    return load_counterexample()


@pytest.fixture(scope='session')
def coarse_reproduction():
    """Full reproduction on a 201-point delay grid."""
    return reproduce_paper(d_grid=np.linspace(0.0, 2.0, 201))
