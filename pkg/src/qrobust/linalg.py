"""Dense complex linear algebra kernel.

Everything operates on plain numpy arrays (complex128, row-major). The
routines add the contract checks the rest of the package relies on:
finite entries, Hermiticity tolerances, descending eigenvalue order,
and Loewner-order tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NotHermitianError

TAU_HERM = 1e-9
TAU_EIG = 1e-10
TAU_ORTH = 1e-9
PSD_TOL = 1e-9


def matrix(entries) -> np.ndarray:
    """Coerce to a 2-d complex matrix, rejecting non-finite entries."""
    a = np.asarray(entries, dtype=complex)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a.real)) or not np.all(np.isfinite(a.imag)):
        raise DimensionError("matrix has non-finite entries")
    return a


def dagger(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return np.asarray(a).conj().T


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    return a @ b


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(np.asarray(a), np.asarray(b))


def herm(a: np.ndarray) -> np.ndarray:
    """Hermitian part (a + a†)/2."""
    return (a + dagger(a)) / 2


def is_hermitian(a: np.ndarray, tol: float = TAU_HERM) -> bool:
    a = np.asarray(a)
    return a.shape[0] == a.shape[1] and np.abs(a - dagger(a)).max() <= tol


def _require_hermitian(a: np.ndarray, tol: float, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{what}: expected a square matrix, got {a.shape}")
    dev = np.abs(a - dagger(a)).max() if a.size else 0.0
    if dev > tol:
        raise NotHermitianError(f"{what}: |A - A†|_max = {dev:.3e} > {tol:.1e}")
    return herm(a)


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, orthonormal within TAU_ORTH


def hermitian_eig(a: np.ndarray, tol: float = TAU_HERM) -> Spectrum:
    """Eigendecomposition of a Hermitian matrix.

    Raises NotHermitianError if the input deviates from Hermiticity by
    more than ``tol`` in max-norm.
    """
    a = _require_hermitian(a, tol, "hermitian_eig")
    vals, vecs = np.linalg.eigh(a)
    order = np.argsort(vals)[::-1]
    return Spectrum(vals[order], vecs[:, order])


def trace_norm(a: np.ndarray, tol: float = TAU_HERM) -> float:
    """Sum of absolute eigenvalues of a Hermitian matrix."""
    a = _require_hermitian(a, tol, "trace_norm")
    return float(np.abs(np.linalg.eigvalsh(a)).sum())


def min_eig(a: np.ndarray, tol: float = TAU_HERM) -> float:
    a = _require_hermitian(a, tol, "min_eig")
    return float(np.linalg.eigvalsh(a)[0])


def loewner_leq(a: np.ndarray, b: np.ndarray, tol: float = PSD_TOL) -> bool:
    """True iff a ⊑ b, i.e. the least eigenvalue of b - a is >= -tol."""
    a = _require_hermitian(a, TAU_HERM, "loewner_leq lhs")
    b = _require_hermitian(b, TAU_HERM, "loewner_leq rhs")
    if a.shape != b.shape:
        raise DimensionError(f"loewner_leq: {a.shape} vs {b.shape}")
    return float(np.linalg.eigvalsh(b - a)[0]) >= -tol


def is_psd(a: np.ndarray, tol: float = PSD_TOL) -> bool:
    a = _require_hermitian(a, TAU_HERM, "is_psd")
    return bool(a.size == 0 or np.linalg.eigvalsh(a)[0] >= -tol)


def partial_trace(a: np.ndarray, dims: list[int], keep) -> np.ndarray:
    """Reduce ``a`` to the subsystems in ``keep`` (indices into ``dims``)."""
    a = np.asarray(a, dtype=complex)
    dims = list(dims)
    total = int(np.prod(dims))
    if a.shape != (total, total):
        raise DimensionError(f"partial_trace: dims {dims} do not match shape {a.shape}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise DimensionError(f"partial_trace: keep={keep} out of range for {len(dims)} subsystems")
    n = len(dims)
    t = a.reshape(dims + dims)
    # trace out the discarded subsystems from highest axis index down, so the
    # row axis of every remaining subsystem keeps its original position
    removed = 0
    for sub in sorted((i for i in range(n) if i not in keep), reverse=True):
        t = np.trace(t, axis1=sub, axis2=sub + (n - removed))
        removed += 1
    d_keep = int(np.prod([dims[k] for k in keep])) if keep else 1
    return t.reshape(d_keep, d_keep)
