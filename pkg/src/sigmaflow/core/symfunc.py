"""Elementary symmetric functions and derivatives of inverse sigma_k operators.

Every kernel accepts one spectrum or a batch of spectra stacked along the
leading axes (shape ``(..., n)``). Derivative formulas are evaluated at the
diagonal matrix ``A = diag(lam)``; general Hermitian matrices are diagonalized
first (see ``operators.spectrum_of``).

Indices in the public API follow the mathematical convention (1..n); the
``SymHessian`` arrays are indexed from 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Sequence, Tuple, Union

import numpy as np

from .validators import DomainError, RegionError, as_spectrum, assert_index_range, assert_positive


# Exact subset enumeration up to this size, product recursion above.
ENUMERATION_MAX_N = 12
FD_STEP = 1e-5


@dataclass(frozen=True)
class Spectrum:
    values: Tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise DomainError("Spectrum must have at least one entry.")
        if not all(np.isfinite(vals)):
            raise DomainError("Spectrum contains non-finite entries.")
        object.__setattr__(self, "values", vals)

    @classmethod
    def of(cls, *values: float) -> "Spectrum":
        if len(values) == 1 and not np.isscalar(values[0]):
            return cls(tuple(values[0]))
        return cls(tuple(values))

    @property
    def n(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def is_positive(self) -> bool:
        return all(v > 0 for v in self.values)

    def inverse(self) -> "Spectrum":
        assert_positive(self.array())
        return Spectrum(tuple(1.0 / v for v in self.values))


@dataclass(frozen=True)
class DeletionIndexSet:
    """Distinct 1-based indices whose eigenvalues are set to zero."""

    indices: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise DomainError(f"Duplicate deletion indices: {idx}")
        if any(i < 1 for i in idx):
            raise DomainError(f"Deletion indices are 1-based: {idx}")
        object.__setattr__(self, "indices", tuple(sorted(idx)))

    def zero_based(self) -> Tuple[int, ...]:
        return tuple(i - 1 for i in self.indices)


@dataclass(frozen=True)
class SymHessian:
    """Second derivatives of an inverse sigma operator at a diagonal matrix.

    ``diag_pairs[i, j]`` holds d_ii d_jj F (the diagonal i == j is d_ii d_ii F),
    ``swap_pairs[i, j]`` holds d_ij d_ji F for i != j and is zero on the diagonal.
    Every other entry of the rank-4 array vanishes.
    """

    diag_pairs: np.ndarray
    swap_pairs: np.ndarray

    @property
    def n(self) -> int:
        return int(self.diag_pairs.shape[-1])

    def entry(self, i: int, j: int, r: int, s: int):
        if i == j and r == s:
            return self.diag_pairs[..., i, r]
        if i != j and r == j and s == i:
            return self.swap_pairs[..., i, j]
        return np.zeros(self.diag_pairs.shape[:-2]) if self.diag_pairs.ndim > 2 else 0.0

    def dense(self) -> np.ndarray:
        n = self.n
        out = np.zeros(self.diag_pairs.shape[:-2] + (n, n, n, n))
        for i in range(n):
            for j in range(n):
                out[..., i, i, j, j] = self.diag_pairs[..., i, j]
                if i != j:
                    out[..., i, j, j, i] = self.swap_pairs[..., i, j]
        return out

    def __add__(self, other: "SymHessian") -> "SymHessian":
        return SymHessian(self.diag_pairs + other.diag_pairs, self.swap_pairs + other.swap_pairs)

    def scaled(self, factor) -> "SymHessian":
        factor = np.asarray(factor, dtype=float)[..., None, None]
        return SymHessian(self.diag_pairs * factor, self.swap_pairs * factor)


@dataclass(frozen=True)
class SymDerivative:
    gradient: np.ndarray
    hessian: SymHessian


WeightsLike = Union[Sequence[float], np.ndarray, object]


@lru_cache(maxsize=None)
def _subsets(n: int, k: int) -> np.ndarray:
    return np.array(list(combinations(range(n), k)), dtype=np.intp)


def _esym_recursive(lam: np.ndarray) -> np.ndarray:
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for j in range(n):
        e[..., 1 : j + 2] = e[..., 1 : j + 2] + lam[..., j : j + 1] * e[..., 0 : j + 1]
    return e


def _esym(lam: np.ndarray, k: int) -> np.ndarray:
    n = lam.shape[-1]
    if k < 0 or k > n:
        return np.zeros(lam.shape[:-1])
    if k == 0:
        return np.ones(lam.shape[:-1])
    if n <= ENUMERATION_MAX_N:
        return np.prod(lam[..., _subsets(n, k)], axis=-1).sum(axis=-1)
    return _esym_recursive(lam)[..., k]


def _zeroed(lam: np.ndarray, idx: Sequence[int]) -> np.ndarray:
    out = np.array(lam, dtype=float, copy=True)
    for i in idx:
        out[..., i] = 0.0
    return out


def _deleted_one(lam: np.ndarray, m: int) -> np.ndarray:
    """S_{m;i}(lam) for every i, shape (..., n)."""
    n = lam.shape[-1]
    return np.stack([_esym(_zeroed(lam, (i,)), m) for i in range(n)], axis=-1)


def _deleted_two(lam: np.ndarray, m: int) -> np.ndarray:
    """S_{m;i,j}(lam) for i != j, zero on the diagonal, shape (..., n, n)."""
    n = lam.shape[-1]
    out = np.zeros(lam.shape[:-1] + (n, n))
    for i in range(n):
        for j in range(i + 1, n):
            val = _esym(_zeroed(lam, (i, j)), m)
            out[..., i, j] = val
            out[..., j, i] = val
    return out


def _scalar(x):
    arr = np.asarray(x)
    return float(arr) if arr.ndim == 0 else arr


def _check_k(k: int, n: int) -> None:
    if k < -1 or k > n:
        raise DomainError(f"Degree k={k} outside -1..{n}.")


def elem_sym(k: int, lam) -> float:
    """S_k(lam); S_0 = 1 and S_{-1} = 0."""
    arr = as_spectrum(lam)
    _check_k(k, arr.shape[-1])
    return _scalar(_esym(arr, k))


def elem_sym_all(lam) -> np.ndarray:
    """(S_0, ..., S_n) along the last axis."""
    arr = as_spectrum(lam)
    n = arr.shape[-1]
    return np.stack([_esym(arr, k) for k in range(n + 1)], axis=-1)


def elem_sym_deleted(k: int, deleted, lam) -> float:
    """S_{k; i_1..i_l}(lam) with the listed (1-based) eigenvalues set to zero.

    A raw index list with repeated entries evaluates to 0.
    """
    arr = as_spectrum(lam)
    n = arr.shape[-1]
    _check_k(k, n)
    if isinstance(deleted, DeletionIndexSet):
        idx = deleted.indices
    else:
        idx = tuple(int(i) for i in deleted)
    assert_index_range(idx, n)
    if len(set(idx)) != len(idx):
        return _scalar(np.zeros(arr.shape[:-1]))
    return _scalar(_esym(_zeroed(arr, [i - 1 for i in idx]), k))


def _grad_diag(k: int, lam: np.ndarray) -> np.ndarray:
    n = lam.shape[-1]
    sn = _esym(lam, n)[..., None]
    return -_deleted_one(lam, n - k) / (lam * sn)


def _hessian(k: int, lam: np.ndarray) -> SymHessian:
    n = lam.shape[-1]
    m = n - k
    sn = _esym(lam, n)[..., None, None]
    one = _deleted_one(lam, m)
    two = _deleted_two(lam, m)
    two_lower = _deleted_two(lam, m - 1)
    outer = lam[..., :, None] * lam[..., None, :] * sn

    diag_pairs = two / outer
    eye = np.eye(n, dtype=bool)
    diag_pairs = np.where(eye, 2.0 * one[..., :, None] / outer, diag_pairs)

    swap_pairs = (one[..., :, None] + lam[..., :, None] * two_lower) / outer
    swap_pairs = np.where(eye, 0.0, swap_pairs)
    return SymHessian(diag_pairs=diag_pairs, swap_pairs=swap_pairs)


def _positive_spectrum(lam) -> np.ndarray:
    arr = as_spectrum(lam)
    assert_positive(arr)
    return arr


def grad_inverse_sigma(k: int, lam) -> np.ndarray:
    """Gradient of S_k(A^{-1}) at A = diag(lam) as an n x n (diagonal) matrix."""
    arr = _positive_spectrum(lam)
    n = arr.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"Degree k={k} outside 1..{n}.")
    g = _grad_diag(k, arr)
    return g[..., :, None] * np.eye(n)


def hessian_inverse_sigma(k: int, lam) -> SymHessian:
    arr = _positive_spectrum(lam)
    n = arr.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"Degree k={k} outside 1..{n}.")
    return _hessian(k, arr)


def derivative_inverse_sigma(k: int, lam) -> SymDerivative:
    return SymDerivative(gradient=grad_inverse_sigma(k, lam), hessian=hessian_inverse_sigma(k, lam))


def weight_vector(weights: WeightsLike, n: int) -> np.ndarray:
    """Weights (w_0, ..., w_n) on S_k(A^{-1}).

    Accepts an object exposing ``weights_vector(n)`` (``OperatorSpec``), a
    length n+1 sequence or a length n sequence (c_1..c_n).
    """
    if hasattr(weights, "weights_vector"):
        return np.asarray(weights.weights_vector(n), dtype=float)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size == n:
        return np.concatenate([[0.0], w])
    if w.size == n + 1:
        return w
    raise DomainError(f"Expected {n} or {n + 1} weights, got {w.size}.")


def weighted_value(w: np.ndarray, lam: np.ndarray) -> np.ndarray:
    inv = 1.0 / lam
    total = np.zeros(lam.shape[:-1])
    for k, wk in enumerate(w):
        if wk != 0.0:
            total = total + wk * _esym(inv, k)
    return total


def weighted_gradient(w: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Diagonal of the gradient of sum_k w_k S_k(A^{-1}), shape (..., n)."""
    total = np.zeros(lam.shape)
    for k in range(1, lam.shape[-1] + 1):
        if w[k] != 0.0:
            total = total + w[k] * _grad_diag(k, lam)
    return total


def weighted_hessian(w: np.ndarray, lam: np.ndarray) -> SymHessian:
    n = lam.shape[-1]
    zeros = np.zeros(lam.shape[:-1] + (n, n))
    total = SymHessian(zeros, zeros.copy())
    for k in range(1, n + 1):
        if w[k] != 0.0:
            total = total + _hessian(k, lam).scaled(w[k])
    return total


def _split_complex(B) -> np.ndarray:
    if isinstance(B, tuple) and len(B) == 2:
        return np.asarray(B[0], dtype=float) + 1j * np.asarray(B[1], dtype=float)
    return np.asarray(B, dtype=complex)


def convexity_form(weights: WeightsLike, lam, B) -> float:
    """Second variation of F(A) = sum_k w_k S_k(A^{-1}) along a Hermitian B.

    Returns sum B_rs conj(B_qp) d_pq d_rs F + sum |B_ij|^2 d_ii F / lam_j.
    ``B`` is a complex matrix or a (real, imaginary) pair; batches broadcast.
    """
    arr = _positive_spectrum(lam)
    n = arr.shape[-1]
    region = getattr(weights, "region", None)
    if region is not None and not np.all(region.contains(arr)):
        bad = arr[~np.asarray(region.contains(arr))] if arr.ndim > 1 else arr
        raise RegionError(f"Spectrum outside validity region {region.describe()}.", np.asarray(bad).reshape(-1, n)[0])

    Bc = _split_complex(B)
    if Bc.shape[-2:] != (n, n):
        raise DomainError(f"B must be {n}x{n}, got {Bc.shape[-2:]}.")
    if not np.allclose(Bc, np.conj(np.swapaxes(Bc, -1, -2)), atol=1e-12):
        raise DomainError("B must be Hermitian.")

    w = weight_vector(weights, n)
    grad = weighted_gradient(w, arr)
    hess = weighted_hessian(w, arr)

    diag = np.diagonal(Bc, axis1=-2, axis2=-1)
    mod2 = np.abs(Bc) ** 2
    # pattern (pp)(rr)
    first = np.real(np.einsum("...p,...pr,...r->...", np.conj(diag), hess.diag_pairs, diag))
    # pattern (pq)(qp), p != q
    second = np.einsum("...qp,...pq->...", mod2, hess.swap_pairs)
    third = np.einsum("...ij,...i,...j->...", mod2, grad, 1.0 / arr)
    return _scalar(first + second + third)


def deletion_matrix(k: int, lam) -> np.ndarray:
    """M_ij = S_{n-k;i,j} + delta_ij S_{n-k;i}."""
    arr = as_spectrum(lam)
    n = arr.shape[-1]
    m = n - k
    one = _deleted_one(arr, m)
    return _deleted_two(arr, m) + one[..., :, None] * np.eye(n)


def deletion_matrix_from_subsets(k: int, lam) -> np.ndarray:
    """sum over |I| = n-k of lam_I E_I, (E_I)_ij = 1 when i, j are outside I."""
    arr = as_spectrum(lam)
    n = arr.shape[-1]
    m = n - k
    out = np.zeros(arr.shape[:-1] + (n, n))
    for subset in combinations(range(n), m):
        mask = np.ones(n)
        mask[list(subset)] = 0.0
        weight = np.prod(arr[..., list(subset)], axis=-1) if subset else np.ones(arr.shape[:-1])
        out = out + weight[..., None, None] * np.outer(mask, mask)
    return out


def inverse_sigma_of_matrix(k: int, A: np.ndarray) -> float:
    """S_k(A^{-1}) for an arbitrary invertible matrix, via the characteristic polynomial."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    coeffs = np.real(np.poly(A))
    s = [(-1) ** m * coeffs[m] for m in range(n + 1)]
    return float(s[n - k] / s[n])


def fd_gradient(k: int, lam, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of S_k(A^{-1}) at diag(lam), full n x n matrix."""
    arr = _positive_spectrum(lam)
    n = arr.shape[-1]
    base = np.diag(arr)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            E = np.zeros((n, n))
            E[i, j] = step
            out[i, j] = (inverse_sigma_of_matrix(k, base + E) - inverse_sigma_of_matrix(k, base - E)) / (2 * step)
    return out


def fd_hessian_entry(k: int, lam, first: Tuple[int, int], second: Tuple[int, int], step: float = FD_STEP) -> float:
    arr = _positive_spectrum(lam)
    n = arr.shape[-1]
    base = np.diag(arr)
    E1 = np.zeros((n, n))
    E1[first] = step
    E2 = np.zeros((n, n))
    E2[second] = step

    def f(X):
        return inverse_sigma_of_matrix(k, X)

    return (f(base + E1 + E2) - f(base + E1 - E2) - f(base - E1 + E2) + f(base - E1 - E2)) / (4 * step * step)


def fd_hessian(k: int, lam, step: float = FD_STEP) -> SymHessian:
    """Finite-difference estimate of the pattern entries of ``hessian_inverse_sigma``."""
    arr = _positive_spectrum(lam)
    n = arr.shape[-1]
    diag_pairs = np.zeros((n, n))
    swap_pairs = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            diag_pairs[i, j] = fd_hessian_entry(k, arr, (i, i), (j, j), step)
            if i != j:
                swap_pairs[i, j] = fd_hessian_entry(k, arr, (i, j), (j, i), step)
    return SymHessian(diag_pairs, swap_pairs)
