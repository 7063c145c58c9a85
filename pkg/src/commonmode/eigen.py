"""Deterministic symmetric eigendecomposition and two-class whitening."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_SWEEPS = 100
OFF_DIAGONAL_TOL = 1e-12


class ConvergenceError(ArithmeticError):
    """Raised when an iterative numerical routine fails to converge."""


class NotPSDError(ValueError):
    """Raised when a matrix expected to be positive semidefinite is not."""


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues sorted descending with unit eigenvectors as columns."""

    values: np.ndarray
    vectors: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, EigenSystem):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(
            self.vectors, other.vectors
        )

    __hash__ = None


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # argmax returns the lowest index among ties
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eig_symmetric(m) -> EigenSystem:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Pivots are visited row by row, ``(0,1), (0,2), ..., (n-2,n-1)``, so the
    result is a deterministic function of the input. Sweeps stop once the
    off-diagonal Frobenius mass drops below ``1e-12 * ||m||_F``. Eigenvalues
    are sorted descending (ties keep pivot order) and every eigenvector has
    its largest-magnitude entry positive.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite values")
    n = a.shape[0]
    scale = float(np.linalg.norm(a))
    if scale > 0 and np.linalg.norm(a - a.T) > 1e-8 * scale:
        raise ValueError("matrix is not symmetric")
    a = (a + a.T) / 2
    v = np.eye(n)
    threshold = OFF_DIAGONAL_TOL * scale

    sweeps = 0
    while _off_norm(a) > threshold:
        if sweeps == MAX_SWEEPS:
            raise ConvergenceError(
                f"Jacobi did not converge in {MAX_SWEEPS} sweeps "
                f"(off-diagonal {_off_norm(a):.3e}, target {threshold:.3e})"
            )
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return EigenSystem(values=values[order], vectors=_fix_signs(v[:, order]))


@dataclass
class WhiteningTransform:
    """Per-mode whitening matrices ``Z_n`` and the eigensystems they came from."""

    matrices: list[np.ndarray]
    eigensystems: list[EigenSystem]
    epsilon: float
    clipped: list[bool] = field(default_factory=list)

    @property
    def n_modes(self) -> int:
        return len(self.matrices)

    def __eq__(self, other):
        if not isinstance(other, WhiteningTransform):
            return NotImplemented
        return (
            len(self.matrices) == len(other.matrices)
            and all(np.array_equal(a, b) for a, b in zip(self.matrices, other.matrices))
            and self.eigensystems == other.eigensystems
            and self.epsilon == other.epsilon
            and list(self.clipped) == list(other.clipped)
        )


def build_whitening(r1, r2, epsilon: float = 1e-10):
    """Whitening ``Z = diag(lambda)^(-1/2) V^T`` of the pooled scatter ``r1 + r2``.

    Eigenvalues below ``epsilon * lambda_max`` are raised to that floor
    before inversion. Returns ``(Z, eigensystem, clipped)``.
    """
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    if r1.shape != r2.shape:
        raise ValueError(f"scatter shapes differ: {r1.shape} vs {r2.shape}")
    eig = eig_symmetric(r1 + r2)
    lam_max = float(eig.values[0])
    if lam_max <= 0.0:
        raise NotPSDError("pooled scatter is zero or negative definite; nothing to whiten")
    if eig.values[-1] < -1e-8 * lam_max:
        raise NotPSDError(
            f"pooled scatter has eigenvalue {eig.values[-1]:.3e} < 0 (largest {lam_max:.3e})"
        )
    floor = epsilon * lam_max
    clipped = bool(np.any(eig.values < floor))
    lam = np.maximum(eig.values, floor)
    z = eig.vectors.T / np.sqrt(lam)[:, None]
    return z, eig, clipped
