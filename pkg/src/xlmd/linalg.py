"""Dense symmetric positive definite linear algebra for small latent dimensions.

All functions accept either an :class:`SpdMatrix` or a plain array. Plain
arrays may carry leading batch dimensions (``(..., n, n)``); this is what the
integrators use in their inner loops.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import AsymmetricMatrix, DimensionMismatch, NotPositiveDefinite

SYMMETRY_RTOL = 1e-12
_TINY = np.finfo(float).tiny


def _symmetrized(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionMismatch(f"expected square matrix, got shape {a.shape}")
    at = np.swapaxes(a, -1, -2)
    if a.size == 0:
        return a
    scale = max(float(np.abs(a).max()), _TINY)
    if np.abs(a - at).max() > SYMMETRY_RTOL * scale:
        raise AsymmetricMatrix("matrix is not symmetric to 1e-12 relative")
    return 0.5 * (a + at)


def _entries(a) -> np.ndarray:
    if isinstance(a, SpdMatrix):
        return a.entries
    return _symmetrized(a)


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """Immutable symmetric positive definite matrix.

    Construction symmetrizes by averaging with the transpose and rejects
    inputs that are asymmetric beyond roundoff or fail Cholesky.
    """

    entries: np.ndarray

    def __post_init__(self):
        a = _symmetrized(self.entries)
        if a.ndim != 2:
            raise DimensionMismatch("SpdMatrix holds a single matrix")
        _cholesky(a)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __repr__(self):
        return f"SpdMatrix(dim={self.dim})"


def _cholesky(a: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    # LAPACK lets NaN pivots through.
    if not np.all(np.isfinite(L)):
        raise NotPositiveDefinite("non-finite Cholesky factor")
    return L


def cholesky_factor(A) -> np.ndarray:
    """Lower triangular ``L`` with ``L @ L.T == A``.

    Raises NotPositiveDefinite if any pivot is not strictly positive.
    """
    return _cholesky(_entries(A))


def spd_solve(A, rhs) -> np.ndarray:
    """Solve ``A x = rhs`` through a Cholesky factorization."""
    a = _entries(A)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != a.shape[:-1]:
        raise DimensionMismatch(
            f"rhs shape {rhs.shape} incompatible with matrix shape {a.shape}")
    L = _cholesky(a)
    if a.ndim == 2:
        return cho_solve((L, True), rhs, check_finite=False)
    # Item-wise so batched and unbatched solves agree bit for bit.
    out = np.empty_like(rhs)
    for idx in np.ndindex(a.shape[:-2]):
        out[idx] = cho_solve((L[idx], True), rhs[idx], check_finite=False)
    return out


def sqrt_spd(A) -> SpdMatrix | np.ndarray:
    """Principal square root via symmetric eigendecomposition.

    Returns an SpdMatrix for single-matrix input and a plain array for batched
    input.
    """
    a = _entries(A)
    w, V = np.linalg.eigh(a)
    if np.any(w <= 0):
        raise NotPositiveDefinite(f"eigenvalue {w.min():g} <= 0")
    K = (V * np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)
    K = 0.5 * (K + np.swapaxes(K, -1, -2))
    if K.ndim == 2:
        return SpdMatrix(K)
    return K


def max_eigenvalue(A) -> float:
    return float(np.linalg.eigvalsh(_entries(A))[..., -1].max())


def min_eigenvalue(A) -> float:
    return float(np.linalg.eigvalsh(_entries(A))[..., 0].min())
