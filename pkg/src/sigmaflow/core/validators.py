from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


class DomainError(ValueError):
    pass


class RegionError(DomainError):
    """Spectrum outside the validity region of an operator."""

    def __init__(self, message: str, spectrum: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.spectrum = None if spectrum is None else [float(x) for x in spectrum]


def as_spectrum(values, n: Optional[int] = None) -> np.ndarray:
    """Coerce a Spectrum, sequence or batch of spectra to a float array (..., n)."""
    raw = getattr(values, "values", values)
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] < 1:
        raise DomainError("Spectrum must have at least one entry.")
    if n is not None and arr.shape[-1] != n:
        raise DomainError(f"Spectrum length {arr.shape[-1]} does not match dimension {n}.")
    if not np.all(np.isfinite(arr)):
        raise DomainError("Spectrum contains non-finite entries.")
    return arr


def assert_positive(lam: np.ndarray, what: str = "spectrum") -> None:
    if np.any(lam <= 0):
        bad = lam[np.any(lam <= 0, axis=-1)] if lam.ndim > 1 else lam
        raise DomainError(f"Nonpositive eigenvalue in {what}: {np.asarray(bad).reshape(-1, lam.shape[-1])[0].tolist()}")


def assert_index_range(indices: Sequence[int], n: int) -> None:
    for i in indices:
        if int(i) != i or not 1 <= int(i) <= n:
            raise DomainError(f"Index {i} outside 1..{n}.")


def assert_spd(mats: np.ndarray, what: str = "matrix") -> None:
    """Every symmetric matrix in the stack (..., n, n) must be positive definite."""
    mats = np.asarray(mats, dtype=float)
    if mats.shape[-1] != mats.shape[-2]:
        raise DomainError(f"{what} must be square, got shape {mats.shape[-2:]}.")
    if not np.allclose(mats, np.swapaxes(mats, -1, -2), atol=1e-12, rtol=1e-12):
        raise DomainError(f"{what} must be symmetric.")
    low = np.linalg.eigvalsh(mats)[..., 0]
    if np.any(low <= 0):
        where = np.unravel_index(int(np.argmin(low)), low.shape) if low.ndim else ()
        raise DomainError(f"{what} is not positive definite at {tuple(int(i) for i in where)} (min eigenvalue {float(np.min(low)):.3e}).")
