"""Seeded synthetic datasets with known generative structure.

Every generator returns ``(dataset, params)`` where ``params`` records the
generative parameters (JSON-serializable) needed to reproduce or reason
about the data.
"""

from __future__ import annotations

import numpy as np

from .dataio import CubeDataset, LabeledDataset
from .tensor_core import multi_mode_product


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _orthogonal(rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _ids(n: int) -> list[str]:
    return [f"s{i:05d}" for i in range(n)]


def csp_vectors(seed: int = 0, n_per_class: int = 200, dim: int = 8):
    """Zero-mean Gaussian vectors sharing a mixing basis, with mirrored variances.

    Class 0 has variances ``10 * 0.5**k`` along the columns of a random
    orthogonal matrix, class 1 the same sequence reversed, so the ratios of
    class-0 to pooled variance are well separated.
    """
    rng = _rng(seed)
    q = _orthogonal(rng, dim)
    var0 = 10.0 * 0.5 ** np.arange(dim)
    var1 = var0[::-1].copy()
    x0 = (rng.standard_normal((n_per_class, dim)) * np.sqrt(var0)) @ q.T
    x1 = (rng.standard_normal((n_per_class, dim)) * np.sqrt(var1)) @ q.T
    data = LabeledDataset(
        samples=np.concatenate([x0, x1]),
        labels=np.repeat([0, 1], n_per_class),
        ids=_ids(2 * n_per_class),
        class_names=("class0", "class1"),
    )
    params = {
        "kind": "csp-vectors",
        "seed": seed,
        "n_per_class": n_per_class,
        "dim": dim,
        "variances_class0": var0.tolist(),
        "variances_class1": var1.tolist(),
        "mixing": q.tolist(),
    }
    return data, params


def low_variance_discriminant(
    seed: int = 42,
    n_per_class: int = 300,
    dims=(6, 6, 8),
    nuisance_std: float = 1.0,
    low_std: float = 0.05,
    signal_mean: float = 1.0,
    signal_std: float = 0.3,
):
    """Classes told apart only inside low-variance directions.

    Per mode a random orthogonal basis is drawn; its first two columns
    ``a_n`` and ``b_n`` are the discriminative directions. Shared
    Kronecker-structured noise has standard deviation ``nuisance_std`` on
    every other direction and ``low_std`` on ``a_n``, ``b_n``. Class 0 adds
    ``alpha * a_1 o ... o a_N`` and class 1 adds ``beta * b_1 o ... o b_N``
    with ``alpha, beta ~ N(signal_mean, signal_std**2)``: class 0 varies
    along the ``a`` atom, class 1 along the ``b`` atom, and their means
    differ only there.
    """
    rng = _rng(seed)
    dims = tuple(int(d) for d in dims)
    bases = [_orthogonal(rng, d) for d in dims]
    mixers = []
    for q, d in zip(bases, dims):
        std = np.full(d, nuisance_std)
        std[:2] = low_std
        mixers.append((q * std) @ q.T)

    def atom(col):
        out = np.ones(())
        for q in bases:
            out = np.multiply.outer(out, q[:, col])
        return out

    a, b = atom(0), atom(1)
    noise = multi_mode_product(rng.standard_normal((2 * n_per_class,) + dims), mixers, offset=1)
    coef = rng.normal(signal_mean, signal_std, size=2 * n_per_class)
    labels = np.repeat([0, 1], n_per_class)
    signal = np.where(labels[:, None], 0.0, coef[:, None]) * a.ravel() + np.where(
        labels[:, None], coef[:, None], 0.0
    ) * b.ravel()
    samples = noise + signal.reshape(noise.shape)

    # share of pooled scatter (about the global mean) inside the discriminative core
    centered = samples - samples.mean(axis=0)
    core = multi_mode_product(centered, [q[:, :2] for q in bases], transpose=True, offset=1)
    fraction = float(np.sum(core**2) / np.sum(centered**2))

    data = LabeledDataset(
        samples=samples,
        labels=labels,
        ids=_ids(2 * n_per_class),
        class_names=("class0", "class1"),
    )
    params = {
        "kind": "low-variance-discriminant",
        "seed": seed,
        "n_per_class": n_per_class,
        "dims": list(dims),
        "nuisance_std": nuisance_std,
        "low_std": low_std,
        "signal_mean": signal_mean,
        "signal_std": signal_std,
        "discriminative_variance_fraction": fraction,
        "discriminative_directions": [[q[:, 0].tolist(), q[:, 1].tolist()] for q in bases],
    }
    return data, params


def rank1_planted(seed: int = 0, n_samples: int = 400, dims=(5, 4), margin: float = 0.5):
    """Standard normal tensors labelled by the sign of a planted rank-1 score.

    Samples whose score magnitude falls below ``margin`` are rejected.
    """
    rng = _rng(seed)
    dims = tuple(int(d) for d in dims)
    factors = []
    for d in dims:
        f = rng.standard_normal(d)
        factors.append(f / np.linalg.norm(f))
    weight = np.ones(())
    for f in factors:
        weight = np.multiply.outer(weight, f)
    kept = []
    while sum(len(k) for k in kept) < n_samples:
        x = rng.standard_normal((n_samples,) + dims)
        score = np.tensordot(x, weight, axes=len(dims))
        kept.append(x[np.abs(score) >= margin])
    samples = np.concatenate(kept)[:n_samples]
    labels = (np.tensordot(samples, weight, axes=len(dims)) > 0).astype(np.int64)
    data = LabeledDataset(samples, labels, _ids(n_samples), ("negative", "positive"))
    params = {
        "kind": "rank1-planted",
        "seed": seed,
        "n_samples": n_samples,
        "dims": list(dims),
        "margin": margin,
        "factors": [f.tolist() for f in factors],
    }
    return data, params


def gaussian_blobs(seed: int = 0, n_per_class: int = 100, dims=(4, 4), separation: float = 10.0):
    """Two isotropic unit-variance blobs whose means are ``separation`` apart."""
    rng = _rng(seed)
    dims = tuple(int(d) for d in dims)
    direction = rng.standard_normal(dims)
    direction /= np.linalg.norm(direction)
    x0 = rng.standard_normal((n_per_class,) + dims)
    x1 = rng.standard_normal((n_per_class,) + dims) + separation * direction
    data = LabeledDataset(
        np.concatenate([x0, x1]),
        np.repeat([0, 1], n_per_class),
        _ids(2 * n_per_class),
        ("class0", "class1"),
    )
    params = {
        "kind": "gaussian-blobs",
        "seed": seed,
        "n_per_class": n_per_class,
        "dims": list(dims),
        "separation": separation,
        "direction": direction.tolist(),
    }
    return data, params


def hyperspectral_cube(seed: int = 0, height: int = 40, width: int = 40, bands: int = 30,
                       n_classes: int = 6, unlabeled_fraction: float = 0.2):
    """Piecewise-constant scene of ``n_classes`` materials with noisy spectra.

    Regions are the Voronoi cells of ``2 * n_classes`` random sites; every
    material has a smooth random reflectance curve. Materials 1 and 2 form
    the positive group.
    """
    rng = _rng(seed)
    sites = rng.uniform(0, [height, width], size=(2 * n_classes, 2))
    site_class = np.concatenate([np.arange(1, n_classes + 1)] * 2)
    rr, cc = np.mgrid[0:height, 0:width]
    d2 = (rr[..., None] - sites[:, 0]) ** 2 + (cc[..., None] - sites[:, 1]) ** 2
    gt = site_class[np.argmin(d2, axis=-1)]
    gt = np.where(rng.uniform(size=gt.shape) < unlabeled_fraction, 0, gt)

    grid = np.linspace(0, 1, bands)
    spectra = np.zeros((n_classes + 1, bands))
    for k in range(n_classes + 1):
        centers = rng.uniform(0, 1, 3)
        heights = rng.uniform(0.2, 1.0, 3)
        spectra[k] = sum(h * np.exp(-((grid - c) / 0.15) ** 2) for h, c in zip(heights, centers))
    material = np.where(gt == 0, site_class[np.argmin(d2, axis=-1)], gt)
    cube = spectra[material] * rng.uniform(0.8, 1.2, size=(height, width, 1))
    cube += rng.normal(0, 0.05, size=cube.shape)

    names = {k: f"material-{k}" for k in range(1, n_classes + 1)}
    params = {
        "kind": "hyperspectral-cube",
        "seed": seed,
        "height": height,
        "width": width,
        "bands": bands,
        "n_classes": n_classes,
        "unlabeled_fraction": unlabeled_fraction,
        "positive_ids": [1, 2],
    }
    return CubeDataset(cube, gt, names), params


GENERATORS = {
    "csp-vectors": csp_vectors,
    "low-variance-discriminant": low_variance_discriminant,
    "rank1-planted": rank1_planted,
    "gaussian-blobs": gaussian_blobs,
    "hyperspectral-cube": hyperspectral_cube,
}
