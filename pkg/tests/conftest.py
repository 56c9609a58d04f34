import numpy as np
import pytest


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (A + A.conj().T) / 2


def random_involution(dim: int, rng: np.random.Generator) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    return Q @ np.diag(rng.choice([-1.0, 1.0], size=dim)) @ Q.conj().T


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    Z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    Q, R = np.linalg.qr(Z)
    d = np.diag(R)
    return Q * (d / np.abs(d))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
