"""Common Mode Patterns (supervised) and MPCA (unsupervised) tensor subspaces.

Both learners produce one orthonormal projection matrix ``U_n`` per mode; a
sample ``A`` is reduced to ``A x_1 U_1^T x_2 U_2^T ... x_N U_N^T``. CMP first
whitens every mode with the pooled two-class scatter, then keeps, per mode,
the eigenvectors of the first class's scatter with the largest and with the
smallest eigenvalues. After whitening those are respectively the directions
most expressive for the first class and for the second.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .eigen import EigenSystem, WhiteningTransform, build_whitening, eig_symmetric
from .tensor_core import (
    as_stack,
    average_total_scatter,
    mode_scatter_matrix,
    multi_mode_product,
    sandwiched_scatter,
)

logger = logging.getLogger(__name__)


@dataclass
class FitOptions:
    tol: float = 1e-6
    max_iter: int = 5
    epsilon: float = 1e-10
    # "class" centers the first-class scatter on its own mean, "global" on the pooled mean
    phi_mean: str = "class"
    # explicit (largest, smallest) eigenvector counts per mode; needed for odd output extents
    per_class_counts: Optional[Sequence[tuple[int, int]]] = None


@dataclass
class FitReport:
    iterations: int
    scatter: list[float]
    converged: bool
    mode_updates: list[float] = field(default_factory=list)
    eigenvalues: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "scatter": list(self.scatter),
            "converged": self.converged,
            "mode_updates": list(self.mode_updates),
            "eigenvalues": [list(v) for v in self.eigenvalues],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        return cls(
            iterations=int(d["iterations"]),
            scatter=[float(v) for v in d["scatter"]],
            converged=bool(d["converged"]),
            mode_updates=[float(v) for v in d.get("mode_updates", [])],
            eigenvalues=[[float(x) for x in v] for v in d.get("eigenvalues", [])],
        )


@dataclass
class ProjectionBasis:
    """One ``I_n x P_n`` matrix per mode."""

    matrices: list[np.ndarray]

    @property
    def input_dims(self) -> tuple[int, ...]:
        return tuple(u.shape[0] for u in self.matrices)

    @property
    def output_dims(self) -> tuple[int, ...]:
        return tuple(u.shape[1] for u in self.matrices)

    def __eq__(self, other):
        if not isinstance(other, ProjectionBasis):
            return NotImplemented
        return len(self.matrices) == len(other.matrices) and all(
            np.array_equal(a, b) for a, b in zip(self.matrices, other.matrices)
        )


@dataclass(eq=False)
class CmpModel:
    whitening: WhiteningTransform
    basis: ProjectionBasis
    per_class_counts: list[tuple[int, int]]
    class_means: tuple[np.ndarray, np.ndarray]
    fit_report: FitReport
    class_labels: tuple = (0, 1)
    phi_mean: str = "class"

    def __eq__(self, other):
        if not isinstance(other, CmpModel):
            return NotImplemented
        return (
            self.whitening == other.whitening
            and self.basis == other.basis
            and [tuple(c) for c in self.per_class_counts] == [tuple(c) for c in other.per_class_counts]
            and all(np.array_equal(a, b) for a, b in zip(self.class_means, other.class_means))
            and self.fit_report == other.fit_report
            and tuple(self.class_labels) == tuple(other.class_labels)
            and self.phi_mean == other.phi_mean
        )

    def transform(self, X) -> np.ndarray:
        return project_stack(self.basis, X, self.whitening)


@dataclass(eq=False)
class MpcaModel:
    basis: ProjectionBasis
    global_mean: np.ndarray
    fit_report: FitReport

    def __eq__(self, other):
        if not isinstance(other, MpcaModel):
            return NotImplemented
        return (
            self.basis == other.basis
            and np.array_equal(self.global_mean, other.global_mean)
            and self.fit_report == other.fit_report
        )

    def transform(self, X) -> np.ndarray:
        return project_stack(self.basis, X)


def _split_classes(X, y, classes=None):
    X = as_stack(X)
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise ValueError(f"{X.shape[0]} samples but {y.shape} labels")
    if classes is None:
        classes = np.unique(y)
    if len(classes) != 2 or not set(np.unique(y)) <= set(classes):
        raise ValueError(f"binary labels required, got classes {np.unique(y).tolist()}")
    groups = [X[y == c] for c in classes]
    return X, y, tuple(classes), groups


def normalize(X, y, epsilon: float = 1e-10, classes=None):
    """Whiten every mode with the summed per-class scatter.

    Returns the :class:`WhiteningTransform` and the transformed samples
    ``B x_1 Z_1 ... x_N Z_N``; sample order and labels are unchanged.
    """
    X, y, classes, groups = _split_classes(X, y, classes)
    for c, g in zip(classes, groups):
        if g.shape[0] < 2:
            raise ValueError(f"class {c!r} has {g.shape[0]} sample(s); at least 2 are needed")
    ndim = X.ndim - 1
    matrices, eigs, clipped = [], [], []
    for n in range(1, ndim + 1):
        r1 = mode_scatter_matrix(groups[0], n, groups[0].mean(axis=0))
        r2 = mode_scatter_matrix(groups[1], n, groups[1].mean(axis=0))
        z, eig, was_clipped = build_whitening(r1, r2, epsilon)
        if was_clipped:
            logger.warning("mode %d: pooled scatter is rank deficient; eigenvalues floored", n)
        matrices.append(z)
        eigs.append(eig)
        clipped.append(was_clipped)
    whitening = WhiteningTransform(matrices, eigs, float(epsilon), clipped)
    return whitening, multi_mode_product(X, matrices, offset=1)


def class_phi(samples, mean, mode: int, basis) -> np.ndarray:
    """Partner-projected scatter of one class along ``mode``.

    ``(1/M) sum (A_(n),m - mean_(n)) K K^T (A_(n),m - mean_(n))^T`` where
    ``K`` is the Kronecker chain of the other modes' projection matrices.
    """
    matrices = basis.matrices if isinstance(basis, ProjectionBasis) else basis
    return sandwiched_scatter(samples, mode, mean, matrices)


def _projected_scatter(X, matrices) -> float:
    return average_total_scatter(multi_mode_product(X, matrices, transpose=True, offset=1))


def _counts(output_dims, input_dims, per_class_counts):
    if len(output_dims) != len(input_dims):
        raise ValueError(f"output dims {tuple(output_dims)} vs {len(input_dims)}-way samples")
    counts = []
    for n, (p, i) in enumerate(zip(output_dims, input_dims)):
        if per_class_counts is not None:
            large, small = (int(v) for v in per_class_counts[n])
            if large + small != p:
                raise ValueError(f"mode {n + 1}: counts {large}+{small} != output extent {p}")
        elif p % 2:
            raise ValueError(
                f"mode {n + 1}: odd output extent {p}; pass per_class_counts explicitly"
            )
        else:
            large = small = p // 2
        if not 1 <= p <= i or large < 0 or small < 0:
            raise ValueError(f"mode {n + 1}: output extent {p} invalid for input extent {i}")
        counts.append((large, small))
    return counts


def _relative_change(new: float, old: float) -> float:
    return abs(new - old) / max(abs(old), np.finfo(float).tiny)


def fit_cmp(X, y, output_dims: Sequence[int], options: Optional[FitOptions] = None, classes=None) -> CmpModel:
    """Fit Common Mode Patterns on binary-labelled tensor samples.

    The first entry of ``classes`` (default: the smaller label) plays the
    role of the first class, whose scatter alone drives the eigenproblems.
    During the alternating sweeps every ``U_n`` holds all of its
    eigenvectors; truncation to the extreme blocks happens once at the end.
    """
    opts = options or FitOptions()
    if opts.phi_mean not in ("class", "global"):
        raise ValueError(f"phi_mean must be 'class' or 'global', got {opts.phi_mean!r}")
    X, y, classes, _ = _split_classes(X, y, classes)
    dims = X.shape[1:]
    counts = _counts(output_dims, dims, opts.per_class_counts)

    whitening, A = normalize(X, y, opts.epsilon, classes)
    first = A[y == classes[0]]
    second = A[y == classes[1]]
    means = (first.mean(axis=0), second.mean(axis=0))
    phi_center = means[0] if opts.phi_mean == "class" else A.mean(axis=0)

    U = [np.eye(d) for d in dims]
    eigs: list[EigenSystem] = [None] * len(dims)
    scatter = [_projected_scatter(first, U)]
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        for n in range(1, len(dims) + 1):
            phi = class_phi(first, phi_center, n, U)
            eigs[n - 1] = eig_symmetric(phi)
            U[n - 1] = eigs[n - 1].vectors
        scatter.append(_projected_scatter(first, U))
        if _relative_change(scatter[-1], scatter[-2]) < opts.tol:
            converged = True
            break

    selected = []
    for eig, (large, small) in zip(eigs, counts):
        cols = list(range(large)) + list(range(eig.vectors.shape[1] - small, eig.vectors.shape[1]))
        selected.append(np.ascontiguousarray(eig.vectors[:, cols]))
    report = FitReport(
        iterations=it,
        scatter=scatter,
        converged=converged,
        eigenvalues=[e.values.tolist() for e in eigs],
    )
    return CmpModel(
        whitening=whitening,
        basis=ProjectionBasis(selected),
        per_class_counts=counts,
        class_means=means,
        fit_report=report,
        class_labels=tuple(c.item() if hasattr(c, "item") else c for c in classes),
        phi_mean=opts.phi_mean,
    )


def fit_mpca(X, output_dims: Sequence[int], options: Optional[FitOptions] = None) -> MpcaModel:
    """Multilinear PCA by alternating per-mode eigenproblems on pooled scatter."""
    opts = options or FitOptions()
    X = as_stack(X)
    dims = X.shape[1:]
    if len(output_dims) != len(dims):
        raise ValueError(f"output dims {tuple(output_dims)} vs {len(dims)}-way samples")
    for n, (p, i) in enumerate(zip(output_dims, dims)):
        if not 1 <= p <= i:
            raise ValueError(f"mode {n + 1}: output extent {p} invalid for input extent {i}")
    mean = X.mean(axis=0)

    U = []
    for n, p in enumerate(output_dims, start=1):
        U.append(eig_symmetric(mode_scatter_matrix(X, n, mean)).vectors[:, :p])
    scatter = [_projected_scatter(X, U)]
    half_steps = [scatter[0]]
    eigvals = [None] * len(dims)
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        for n, p in enumerate(output_dims, start=1):
            eig = eig_symmetric(sandwiched_scatter(X, n, mean, U))
            U[n - 1] = np.ascontiguousarray(eig.vectors[:, :p])
            eigvals[n - 1] = eig.values.tolist()
            half_steps.append(_projected_scatter(X, U))
        scatter.append(half_steps[-1])
        if _relative_change(scatter[-1], scatter[-2]) < opts.tol:
            converged = True
            break

    report = FitReport(
        iterations=it,
        scatter=scatter,
        converged=converged,
        mode_updates=half_steps,
        eigenvalues=eigvals if it else [],
    )
    return MpcaModel(basis=ProjectionBasis(U), global_mean=mean, fit_report=report)


def identity_model(dims: Sequence[int]) -> MpcaModel:
    """Pass-through reducer: identity bases, zero mean, no iterations."""
    dims = tuple(int(d) for d in dims)
    return MpcaModel(
        basis=ProjectionBasis([np.eye(d) for d in dims]),
        global_mean=np.zeros(dims),
        fit_report=FitReport(iterations=0, scatter=[], converged=True),
    )


def project(basis: ProjectionBasis, t, whitening: Optional[WhiteningTransform] = None) -> np.ndarray:
    """Project a single tensor, whitening it first when a transform is given."""
    t = np.asarray(t, dtype=np.float64)
    if t.shape != basis.input_dims:
        raise ValueError(f"tensor shape {t.shape} does not match basis input {basis.input_dims}")
    if whitening is not None:
        t = multi_mode_product(t, whitening.matrices)
    return multi_mode_product(t, basis.matrices, transpose=True)


def project_stack(basis: ProjectionBasis, X, whitening: Optional[WhiteningTransform] = None) -> np.ndarray:
    """Project every sample of a ``(M, I_1, ..., I_N)`` stack."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != basis.input_dims:
        raise ValueError(f"sample shape {X.shape[1:]} does not match basis input {basis.input_dims}")
    if whitening is not None:
        X = multi_mode_product(X, whitening.matrices, offset=1)
    return multi_mode_product(X, basis.matrices, transpose=True, offset=1)


class CMP(TransformerMixin, BaseEstimator):
    """Common Mode Patterns transformer for binary tensor classification.

    Parameters
    ----------
    output_dims : sequence of int
        Reduced extent ``P_n`` for every mode.
    per_class_counts : sequence of (int, int), default=None
        Explicit (largest, smallest) eigenvector counts per mode. Required
        whenever some ``P_n`` is odd; otherwise ``P_n`` is split evenly.
    tol : float, default=1e-6
        Relative change of the first class's projected scatter below which
        the alternating sweeps stop.
    max_iter : int, default=5
    epsilon : float, default=1e-10
        Relative eigenvalue floor in the whitening inverse square root.
    phi_mean : {"class", "global"}, default="class"

    Attributes
    ----------
    model_ : CmpModel
    classes_ : ndarray of shape (2,)
        ``classes_[0]`` is the class whose scatter is decomposed.
    """

    def __init__(self, output_dims=(2,), per_class_counts=None, tol=1e-6, max_iter=5,
                 epsilon=1e-10, phi_mean="class"):
        self.output_dims = output_dims
        self.per_class_counts = per_class_counts
        self.tol = tol
        self.max_iter = max_iter
        self.epsilon = epsilon
        self.phi_mean = phi_mean

    def fit(self, X, y):
        X = check_array(X, allow_nd=True, ensure_2d=False)
        self.classes_ = np.unique(y)
        opts = FitOptions(self.tol, self.max_iter, self.epsilon, self.phi_mean, self.per_class_counts)
        self.model_ = fit_cmp(X, y, self.output_dims, opts, classes=self.classes_)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, allow_nd=True, ensure_2d=False)
        return self.model_.transform(X)


class MPCA(TransformerMixin, BaseEstimator):
    """Multilinear principal component analysis transformer.

    Parameters
    ----------
    output_dims : sequence of int
    tol : float, default=1e-6
    max_iter : int, default=5
    """

    def __init__(self, output_dims=(1,), tol=1e-6, max_iter=5):
        self.output_dims = output_dims
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_array(X, allow_nd=True, ensure_2d=False)
        self.model_ = fit_mpca(X, self.output_dims, FitOptions(self.tol, self.max_iter))
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, allow_nd=True, ensure_2d=False)
        return self.model_.transform(X)
