"""Spin-chain operators: Majoranas, the interacting Hamiltonian, parity sectors and drives.

Conventions
-----------
Site 1 is the leftmost (most significant) tensor factor, so computational basis
state ``idx`` has site ``j`` in bit ``L - j``.  A set bit means spin down
(sigma^z eigenvalue -1).

All public constructors return dense ``complex128`` arrays.  Internally the
operators are assembled as sparse Pauli strings and only densified at the end,
which keeps L = 12 within a few hundred megabytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ChainSpec",
    "SectorBasis",
    "SectorMixingError",
    "majorana",
    "build_hamiltonian",
    "parity_operator",
    "sector_basis",
    "project_to_sector",
    "embed_from_sector",
    "build_drive_unitaries",
    "partition_by_parity",
    "single_spin_hamiltonian",
    "hamiltonian_terms",
    "max_abs",
    "commutator",
    "anticommutator",
]

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)

SINGLE_SPIN_FIELD = np.array([1.0, 1.0, 2.0]) / np.sqrt(6.0)


class SectorMixingError(ValueError):
    """Raised when an operator does not commute with the parity operator."""


@dataclass(frozen=True)
class ChainSpec:
    """Open spin-1/2 chain of ``L`` sites with quartic coupling ``V``."""

    L: int
    V: float = 1.0
    boundary: str = "open"

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L!r}")
        if self.boundary != "open":
            raise ValueError("only open boundary conditions are supported")

    @property
    def dim(self) -> int:
        return 2**self.L

    @property
    def n_majorana(self) -> int:
        return 2 * self.L


@dataclass(frozen=True)
class SectorBasis:
    """Computational basis states with a fixed eigenvalue of ``P_Z``.

    For a single site no projection is applied and ``indices`` spans the full
    two-dimensional space (``parity`` is then only a label).
    """

    L: int
    parity: int
    indices: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.indices)


def max_abs(a) -> float:
    """Largest elementwise magnitude, accepting dense or sparse input."""
    if sp.issparse(a):
        return float(abs(a).max()) if a.nnz else 0.0
    a = np.asarray(a)
    return float(np.abs(a).max()) if a.size else 0.0


def commutator(a, b):
    return a @ b - b @ a


def anticommutator(a, b):
    return a @ b + b @ a


def _kron_chain(factors: Sequence) -> sp.csr_matrix:
    return reduce(lambda x, y: sp.kron(x, y, format="csr"), factors).tocsr()


def _majorana_sparse(L: int, a: int) -> sp.csr_matrix:
    j = (a + 1) // 2
    end = SIGMA_X if a % 2 == 1 else SIGMA_Y
    factors = [SIGMA_Z] * (j - 1) + [end] + [IDENTITY_2] * (L - j)
    return _kron_chain([sp.csr_matrix(f) for f in factors])


def _check_majorana_index(spec: ChainSpec, a: int) -> None:
    if not 1 <= a <= spec.n_majorana:
        raise IndexError(f"Majorana index {a} outside 1..{spec.n_majorana}")


def majorana(spec: ChainSpec, a: int) -> np.ndarray:
    """Jordan-Wigner Majorana operator ``gamma_a`` (1-based index).

    ``gamma_{2j-1}`` carries sigma^x on site ``j`` and ``gamma_{2j}`` carries
    sigma^y, both preceded by a sigma^z string on sites ``1..j-1``.
    """
    _check_majorana_index(spec, a)
    return _majorana_sparse(spec.L, a).toarray()


def hamiltonian_terms(spec: ChainSpec) -> list[tuple[complex, tuple[int, ...]]]:
    """Coefficient and Majorana indices of every term in the chain Hamiltonian.

    Bilinears ``-i e^{-(k-1)} gamma_j gamma_{j+k}`` for ``k = 1..4`` and one
    quartic ``V gamma_j ... gamma_{j+3}`` per starting index ``j``, all
    truncated at the open end of the chain.
    """
    n = spec.n_majorana
    terms: list[tuple[complex, tuple[int, ...]]] = []
    for j in range(1, n + 1):
        for k in range(1, 5):
            if j + k <= n:
                terms.append((-1j * np.exp(-k + 1.0), (j, j + k)))
        if j + 3 <= n:
            terms.append((complex(spec.V), (j, j + 1, j + 2, j + 3)))
    return terms


def _hamiltonian_sparse(spec: ChainSpec) -> sp.csr_matrix:
    gammas = {a: _majorana_sparse(spec.L, a) for a in range(1, spec.n_majorana + 1)}
    H = sp.csr_matrix((spec.dim, spec.dim), dtype=complex)
    for coeff, idx in hamiltonian_terms(spec):
        term = reduce(lambda x, y: x @ y, (gammas[a] for a in idx))
        H = H + coeff * term
    return H.tocsr()


def build_hamiltonian(spec: ChainSpec, sector: SectorBasis | None = None) -> np.ndarray:
    """Dense Hamiltonian on the full space, or on ``sector`` when given.

    Projection happens on the sparse representation, so requesting a sector
    never materialises the full ``2^L x 2^L`` matrix.
    """
    H = _hamiltonian_sparse(spec)
    if sector is not None:
        return _project_sparse(H, sector)
    return H.toarray()


def _parity_diagonal(L: int) -> np.ndarray:
    idx = np.arange(2**L)
    popcount = np.zeros_like(idx)
    for bit in range(L):
        popcount += (idx >> bit) & 1
    return np.where(popcount % 2 == 0, 1.0, -1.0)


def parity_operator(spec: ChainSpec) -> np.ndarray:
    """``P_Z``: the product of sigma^z over all sites."""
    return np.diag(_parity_diagonal(spec.L)).astype(complex)


def sector_basis(spec: ChainSpec, parity: int = 1) -> SectorBasis:
    if parity not in (1, -1):
        raise ValueError("parity must be +1 or -1")
    if spec.L == 1:
        return SectorBasis(L=1, parity=parity, indices=np.arange(2))
    diag = _parity_diagonal(spec.L)
    return SectorBasis(L=spec.L, parity=parity, indices=np.flatnonzero(diag == parity))


def _project_sparse(op: sp.spmatrix, basis: SectorBasis, atol: float = 1e-10) -> np.ndarray:
    op = sp.csr_matrix(op)
    if basis.L > 1:
        diag = sp.diags(_parity_diagonal(basis.L))
        leak = max_abs(op @ diag - diag @ op)
        if leak > atol:
            raise SectorMixingError(f"operator mixes parity sectors (|[op, P_Z]| = {leak:.3e})")
    idx = basis.indices
    return op[idx][:, idx].toarray()


def project_to_sector(op, basis: SectorBasis, atol: float = 1e-10) -> np.ndarray:
    """Block of ``op`` on the sector, after checking it commutes with ``P_Z``."""
    if sp.issparse(op):
        return _project_sparse(op, basis, atol)
    op = np.asarray(op)
    if basis.L > 1:
        diag = _parity_diagonal(basis.L)
        leak = max_abs(op * diag[None, :] - diag[:, None] * op)
        if leak > atol:
            raise SectorMixingError(f"operator mixes parity sectors (|[op, P_Z]| = {leak:.3e})")
    idx = basis.indices
    return op[np.ix_(idx, idx)]


def embed_from_sector(block: np.ndarray, basis: SectorBasis) -> np.ndarray:
    """Inverse of :func:`project_to_sector`: zero-pad a sector block to the full space."""
    dim = 2**basis.L
    full = np.zeros((dim, dim), dtype=np.result_type(block, complex))
    full[np.ix_(basis.indices, basis.indices)] = block
    return full


def _drives_sparse(spec: ChainSpec, with_x2: bool = True) -> list[sp.csr_matrix]:
    L = spec.L
    x1 = _kron_chain([sp.csr_matrix(SIGMA_X)] * L)
    if not with_x2:
        return [x1]
    if L % 2:
        raise ValueError(f"X_2 requires an even chain length, got L={L}")
    factors = [SIGMA_Z if site % 2 == 0 else IDENTITY_2 for site in range(1, L + 1)]
    x2 = _kron_chain([sp.csr_matrix(f) for f in factors])
    return [x1, x2]


def build_drive_unitaries(
    spec: ChainSpec, n_drives: int = 2, sector: SectorBasis | None = None
) -> list[np.ndarray]:
    """Drive unitaries ``[X_1]`` or ``[X_1, X_2]``.

    ``X_1`` flips every spin; ``X_2`` is sigma^z on every even site.  Both are
    involutions.  With ``sector`` given, the blocks on that parity sector are
    returned (``X_1`` only preserves parity for even ``L``).
    """
    if n_drives not in (1, 2):
        raise ValueError("n_drives must be 1 or 2")
    ops = _drives_sparse(spec, with_x2=n_drives == 2)
    if sector is not None:
        return [_project_sparse(op, sector) for op in ops]
    return [op.toarray() for op in ops]


def partition_by_parity(H: np.ndarray, drives: Sequence[np.ndarray]) -> dict[tuple[int, ...], np.ndarray]:
    """Split ``H`` into pieces ``A_eps`` with ``X_j A_eps X_j = (-1)^eps_j A_eps``.

    Keys are tuples of 0/1 of length ``len(drives)``; the pieces sum to ``H``.
    Each drive is applied in turn as the projector pair ``(A +/- X A X) / 2``.
    """
    parts: dict[tuple[int, ...], np.ndarray] = {(): np.asarray(H)}
    for X in drives:
        nxt = {}
        for key, A in parts.items():
            conj = X @ A @ X
            nxt[key + (0,)] = 0.5 * (A + conj)
            nxt[key + (1,)] = 0.5 * (A - conj)
        parts = nxt
    return parts


def single_spin_hamiltonian(field: Sequence[float] = SINGLE_SPIN_FIELD) -> np.ndarray:
    """``B . sigma`` for one spin; the default field has unit length."""
    bx, by, bz = field
    return bx * SIGMA_X + by * SIGMA_Y + bz * SIGMA_Z
