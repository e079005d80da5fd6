"""SU(n) bases, Bloch-vector conversion and small density-matrix utilities.

Conventions used throughout the package:

* basis elements are generalized Gell-Mann matrices normalized to
  ``Tr(s_i s_j) = 2 delta_ij``; for ``n = 2`` they are the Pauli matrices
  ``(X, Y, Z)``;
* ``rho = (1/n) (I + sum_i x_i s_i)`` so ``x_i = (n/2) Tr(rho s_i)``;
* for a qubit the excited state ``|1>`` is the first computational basis
  vector, hence ``|1><1|`` sits at ``z = +1`` and ``sigma_- = [[0, 0], [1, 0]]``.

Density matrices and Bloch vectors are plain numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

HERMITIAN_TOL = 1e-12
POSITIVITY_TOL = -1e-10


class DimensionError(ValueError):
    """Raised when array shapes do not match the requested dimensions."""


@dataclass(frozen=True, eq=False)
class SUBasis:
    """Ordered traceless Hermitian basis of an n-level system."""

    n: int
    elements: np.ndarray  # shape (n*n - 1, n, n)

    @property
    def dim(self) -> int:
        return self.n * self.n - 1

    def __len__(self) -> int:
        return self.dim

    def __iter__(self):
        return iter(self.elements)

    def __getitem__(self, i):
        return self.elements[i]


@lru_cache(maxsize=None)
def su_basis(n: int) -> SUBasis:
    """Generalized Gell-Mann basis: symmetric, antisymmetric, then diagonal."""
    if int(n) != n or n < 2:
        raise DimensionError(f"basis dimension must be an integer >= 2, got {n!r}")
    n = int(n)
    sym, asym, diag = [], [], []
    for j in range(n):
        for k in range(j + 1, n):
            s = np.zeros((n, n), dtype=complex)
            s[j, k] = s[k, j] = 1.0
            sym.append(s)
            a = np.zeros((n, n), dtype=complex)
            a[j, k] = -1j
            a[k, j] = 1j
            asym.append(a)
    for l in range(1, n):
        d = np.zeros(n, dtype=complex)
        d[:l] = 1.0
        d[l] = -l
        diag.append(np.sqrt(2.0 / (l * (l + 1))) * np.diag(d))
    elements = np.array(sym + asym + diag)
    elements.setflags(write=False)
    return SUBasis(n, elements)


def dim_to_n(d: int) -> int:
    """Hilbert dimension n with n*n - 1 == d."""
    n = int(round(np.sqrt(d + 1)))
    if n < 2 or n * n - 1 != d:
        raise DimensionError(f"dimension {d} is not of the form n^2 - 1")
    return n


def _check_square(rho: np.ndarray, n: int) -> None:
    if rho.shape != (n, n):
        raise DimensionError(f"expected a {n}x{n} matrix, got shape {rho.shape}")


def operator_coords(X: np.ndarray, basis: SUBasis) -> tuple[complex, np.ndarray]:
    """Return ``(Tr X, (n/2) Tr(X s_i))`` for an arbitrary n x n matrix.

    The coordinates are complex for non-Hermitian input; this is the linear
    extension used when lifting Bloch maps to operator space.
    """
    X = np.asarray(X)
    _check_square(X, basis.n)
    coords = 0.5 * basis.n * np.einsum("ij,kji->k", X, basis.elements)
    return np.trace(X), coords


def from_coords(trace, coords: np.ndarray, basis: SUBasis) -> np.ndarray:
    """Inverse of :func:`operator_coords`."""
    n = basis.n
    return (trace * np.eye(n) + np.tensordot(coords, basis.elements, axes=1)) / n


def to_bloch(rho: np.ndarray, basis: SUBasis | None = None) -> np.ndarray:
    rho = np.asarray(rho)
    if basis is None:
        basis = su_basis(rho.shape[0])
    _check_square(rho, basis.n)
    return 0.5 * basis.n * np.einsum("ij,kji->k", rho, basis.elements).real


def from_bloch(x: np.ndarray, basis: SUBasis | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if basis is None:
        basis = su_basis(dim_to_n(x.shape[0]))
    if x.shape != (basis.dim,):
        raise DimensionError(f"Bloch vector of length {basis.dim} expected, got {x.shape}")
    n = basis.n
    return (np.eye(n) + np.tensordot(x, basis.elements, axes=1)) / n


def is_density_like(rho: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    """Hermitian with unit trace (positivity deliberately not required)."""
    rho = np.asarray(rho)
    return bool(np.allclose(rho, rho.conj().T, atol=tol) and abs(np.trace(rho) - 1) < tol)


def trace_distance(rho1: np.ndarray, rho2: np.ndarray) -> float:
    rho1, rho2 = np.asarray(rho1), np.asarray(rho2)
    if rho1.shape != rho2.shape:
        raise DimensionError(f"shape mismatch {rho1.shape} vs {rho2.shape}")
    return 0.5 * float(np.sum(np.linalg.svd(rho1 - rho2, compute_uv=False)))


def purity(x: np.ndarray, n: int | None = None) -> float:
    """Tr rho^2 = 1/n + (2/n^2)|x|^2 in the normalization above."""
    x = np.asarray(x, dtype=float)
    if n is None:
        n = dim_to_n(x.shape[-1])
    elif x.shape[-1] != n * n - 1:
        raise DimensionError(f"Bloch vector of length {n * n - 1} expected")
    return 1.0 / n + 2.0 / n**2 * float(x @ x)


def positivity_check(rho: np.ndarray, tol: float = POSITIVITY_TOL) -> tuple[bool, float]:
    """Diagnostic positivity test; returns ``(min_eig >= tol, min_eig)``."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"square matrix expected, got shape {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=1e-10):
        raise ValueError("positivity_check needs a Hermitian matrix")
    lam = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
    return lam >= tol, lam


def partial_trace(rho: np.ndarray, dims: tuple[int, int], keep: int = 0) -> np.ndarray:
    """Reduced state of a bipartite ``nA x nB`` system; ``keep`` is 0 (A) or 1 (B)."""
    rho = np.asarray(rho)
    na, nb = dims
    if rho.shape != (na * nb, na * nb):
        raise DimensionError(f"dims {dims} do not factor a matrix of shape {rho.shape}")
    r = rho.reshape(na, nb, na, nb)
    if keep == 0:
        return np.einsum("ijkj->ik", r)
    if keep == 1:
        return np.einsum("ijik->jk", r)
    raise ValueError(f"keep must be 0 or 1, got {keep!r}")


def ket_to_bloch(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return to_bloch(np.outer(psi, psi.conj()))
