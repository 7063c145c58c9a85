"""Dense tensor primitives: matricization, n-mode products, scatter.

Tensors are plain float64 ``numpy`` arrays in C (row-major) order. Modes are
1-based everywhere in this module's public functions.

The mode-n matricization orders its columns cyclically: the remaining indices
are visited as ``n+1, ..., N, 1, ..., n-1`` with ``n+1`` varying slowest. With
that ordering the matricized projection of a tensor is

    S_(n) = U_n^T . A_(n) . (U_{n+1} kron ... kron U_N kron U_1 kron ... kron U_{n-1})

exactly, with no permutation matrices involved.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


def as_tensor(t, name: str = "tensor") -> np.ndarray:
    """Validate ``t`` as a dense finite tensor and return it as float64."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim < 1:
        raise ValueError(f"{name} must have at least one mode")
    if 0 in arr.shape:
        raise ValueError(f"{name} has an empty extent: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_stack(samples, name: str = "samples") -> np.ndarray:
    """Stack equal-shape samples into a ``(M, I_1, ..., I_N)`` array."""
    if isinstance(samples, np.ndarray):
        arr = np.asarray(samples, dtype=np.float64)
    else:
        samples = list(samples)
        if not samples:
            raise ValueError(f"{name} is empty")
        shapes = {np.shape(s) for s in samples}
        if len(shapes) != 1:
            raise ValueError(f"{name} have mismatched shapes: {sorted(shapes)}")
        arr = np.stack([np.asarray(s, dtype=np.float64) for s in samples])
    if arr.ndim < 2 or arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contain non-finite values")
    return arr


def _check_mode(mode: int, ndim: int) -> int:
    if not 1 <= mode <= ndim:
        raise ValueError(f"mode {mode} out of range for a {ndim}-way tensor")
    return mode - 1


def cyclic_order(mode: int, ndim: int) -> list[int]:
    """0-based axis order ``n, n+1, ..., N, 1, ..., n-1`` for 1-based ``mode``."""
    k = _check_mode(mode, ndim)
    return [(k + j) % ndim for j in range(ndim)]


def matricize(t, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of ``t`` with cyclic column order."""
    t = np.asarray(t, dtype=np.float64)
    order = cyclic_order(mode, t.ndim)
    return np.ascontiguousarray(t.transpose(order)).reshape(t.shape[order[0]], -1)


def dematricize(m, mode: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`matricize` for a tensor of extents ``dims``."""
    m = np.asarray(m, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    order = cyclic_order(mode, len(dims))
    expected = (dims[order[0]], int(np.prod(dims)) // dims[order[0]])
    if m.shape != expected:
        raise ValueError(f"matrix shape {m.shape} does not match {expected} for dims {dims}")
    permuted = m.reshape([dims[a] for a in order])
    return np.ascontiguousarray(permuted.transpose(np.argsort(order)))


def mode_product(t, m, mode: int) -> np.ndarray:
    """n-mode product ``t x_mode m``; ``m`` has shape ``(J, I_mode)``."""
    t = np.asarray(t, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    k = _check_mode(mode, t.ndim)
    if m.ndim != 2 or m.shape[1] != t.shape[k]:
        raise ValueError(
            f"matrix of shape {m.shape} cannot multiply mode {mode} of extent {t.shape[k]}"
        )
    out = np.tensordot(m, t, axes=([1], [k]))
    return np.ascontiguousarray(np.moveaxis(out, 0, k))


def multi_mode_product(t, matrices: Sequence, transpose: bool = False, offset: int = 0) -> np.ndarray:
    """Apply one matrix per mode (``t x_1 M_1 x_2 M_2 ...``).

    With ``transpose=True`` the transposes are applied, which is how a
    projection basis ``{U_n}`` maps a tensor onto its subspace. ``offset``
    skips leading axes, so a sample stack ``(M, I_1, ..., I_N)`` can be
    projected with ``offset=1``.
    """
    out = np.asarray(t, dtype=np.float64)
    for n, mat in enumerate(matrices):
        mat = np.asarray(mat, dtype=np.float64)
        if transpose:
            mat = mat.T
        axis = n + offset
        if mat.shape[1] != out.shape[axis]:
            raise ValueError(f"mode {n + 1}: matrix {mat.shape} vs extent {out.shape[axis]}")
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [axis])), 0, axis)
    return np.ascontiguousarray(out)


def kron_chain(matrices: Sequence, mode: int) -> np.ndarray:
    """``U_{n+1} kron ... kron U_N kron U_1 kron ... kron U_{n-1}``.

    Returns the 1x1 identity when there is only one mode.
    """
    mats = [np.asarray(u, dtype=np.float64) for u in matrices]
    order = cyclic_order(mode, len(mats))
    out = np.ones((1, 1))
    for a in order[1:]:
        out = np.kron(out, mats[a])
    return out


def scalar_product(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def frobenius_norm(t) -> float:
    return float(np.sqrt(scalar_product(t, t)))


def average_total_scatter(samples) -> float:
    """Mean squared Frobenius distance of the samples from their mean."""
    x = as_stack(samples)
    centered = x - x.mean(axis=0)
    return float(np.einsum("i,i->", centered.ravel(), centered.ravel()) / x.shape[0])


def mode_scatter_matrix(samples, mode: int, mean=None) -> np.ndarray:
    """Average mode-n scatter ``(1/M) sum (A_(n),m - mean_(n)) (...)^T``.

    ``mean`` defaults to the sample mean.
    """
    x = as_stack(samples)
    mean = x.mean(axis=0) if mean is None else np.asarray(mean, dtype=np.float64)
    if mean.shape != x.shape[1:]:
        raise ValueError(f"mean shape {mean.shape} does not match samples {x.shape[1:]}")
    k = _check_mode(mode, x.ndim - 1)
    # column order is irrelevant for D D^T, so a plain axis move suffices
    d = np.moveaxis(x - mean, k + 1, 0).reshape(x.shape[k + 1], -1)
    r = d @ d.T / x.shape[0]
    return (r + r.T) / 2


def sandwiched_scatter(samples, mode: int, mean, matrices: Sequence) -> np.ndarray:
    """``(1/M) sum D_(n),m K K^T D_(n),m^T`` with ``K = kron_chain(matrices, mode)``.

    ``D_m = A_m - mean``. Computed by projecting every mode except ``mode``
    with its matrix, which is algebraically the Kronecker sandwich without
    ever forming the Kronecker product.
    """
    x = as_stack(samples)
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != x.shape[1:]:
        raise ValueError(f"mean shape {mean.shape} does not match samples {x.shape[1:]}")
    ndim = x.ndim - 1
    k = _check_mode(mode, ndim)
    if len(matrices) != ndim:
        raise ValueError(f"need {ndim} matrices, got {len(matrices)}")
    d = x - mean
    for a, mat in enumerate(matrices):
        if a == k:
            continue
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape[0] != x.shape[a + 1]:
            raise ValueError(f"mode {a + 1}: matrix {mat.shape} vs extent {x.shape[a + 1]}")
        d = np.moveaxis(np.tensordot(mat.T, d, axes=([1], [a + 1])), 0, a + 1)
    d = np.moveaxis(d, k + 1, 0).reshape(x.shape[k + 1], -1)
    phi = d @ d.T / x.shape[0]
    return (phi + phi.T) / 2


def identity_basis(dims: Iterable[int]) -> list[np.ndarray]:
    return [np.eye(int(d)) for d in dims]
