"""Tensor files, labelled datasets, hyperspectral patch extraction and splits.

TDF layout (all little-endian)::

    b"TDF1" | dtype u8 (0 = f64) | ndim u8 | 2 zero bytes | ndim x u32 extents
    | payload f64, row-major | CRC32 (u32) of every preceding byte
"""

from __future__ import annotations

import csv
import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ChecksumError, DataError, FormatError, TruncationError

logger = logging.getLogger(__name__)

TDF_MAGIC = b"TDF1"
DTYPE_F64 = 0

# Pavia University ground-truth ids for the man-made materials
PRESETS = {
    "pavia-man-made": {
        "names": ["asphalt", "metal sheets", "bricks", "bitumen"],
        "ids": [1, 5, 7, 8],
    },
}

PAVIA_CLASS_NAMES = {
    1: "asphalt",
    2: "meadows",
    3: "gravel",
    4: "trees",
    5: "painted metal sheets",
    6: "bare soil",
    7: "bitumen",
    8: "self-blocking bricks",
    9: "shadows",
}


def encode_tdf(t) -> bytes:
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim < 1 or arr.ndim > 255:
        raise FormatError(f"cannot store a {arr.ndim}-way tensor")
    header = TDF_MAGIC + struct.pack("<BBH", DTYPE_F64, arr.ndim, 0)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    body = header + np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_tdf(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise TruncationError("file shorter than the TDF header")
    if buf[:4] != TDF_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {TDF_MAGIC!r}")
    dtype, ndim, reserved = struct.unpack_from("<BBH", buf, 4)
    if dtype != DTYPE_F64:
        raise FormatError(f"unsupported dtype code {dtype}")
    if reserved != 0:
        raise FormatError("reserved header bytes are not zero")
    if ndim == 0:
        raise FormatError("tensor has no modes")
    head = 8 + 4 * ndim
    if len(buf) < head + 4:
        raise TruncationError("file shorter than its extent table")
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    payload = len(buf) - head - 4
    expected = int(np.prod(dims)) * 8
    if payload != expected:
        raise TruncationError(f"payload has {payload} bytes, extents {dims} need {expected}")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ChecksumError("CRC32 mismatch")
    arr = np.frombuffer(buf, dtype="<f8", count=int(np.prod(dims)), offset=head)
    return arr.astype(np.float64).reshape(dims)


def save_tensor_file(path, t) -> None:
    Path(path).write_bytes(encode_tdf(t))


def load_tensor_file(path) -> np.ndarray:
    return decode_tdf(Path(path).read_bytes())


@dataclass
class LabeledDataset:
    """Equal-shape tensor samples with {0, 1} labels.

    ``class_names[0]`` names label 0, which is the class whose scatter CMP
    decomposes. ``groups`` optionally keeps the original (multi-class) ids
    and ``coords`` the pixel position each patch was centred on.
    """

    samples: np.ndarray
    labels: np.ndarray
    ids: list[str]
    class_names: tuple[str, str] = ("class0", "class1")
    groups: Optional[np.ndarray] = None
    coords: Optional[list[tuple[int, int]]] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = [str(i) for i in self.ids]
        n = len(self.ids)
        if self.samples.shape[0] != n or self.labels.shape != (n,):
            raise DataError(
                f"{self.samples.shape[0]} samples, {self.labels.shape[0]} labels, {n} ids"
            )
        if len(set(self.ids)) != n:
            raise DataError("sample ids are not unique")
        if not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        if n and not np.all(np.isfinite(self.samples)):
            raise DataError("samples contain non-finite values")
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=np.int64)
        self.class_names = tuple(self.class_names)

    def __len__(self):
        return len(self.ids)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.samples.shape[1:])

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(
            samples=self.samples[index],
            labels=self.labels[index],
            ids=[self.ids[i] for i in index],
            class_names=self.class_names,
            groups=None if self.groups is None else self.groups[index],
            coords=None if self.coords is None else [self.coords[i] for i in index],
        )

    def select_ids(self, ids: Sequence[str]) -> "LabeledDataset":
        pos = {k: i for i, k in enumerate(self.ids)}
        missing = [k for k in ids if k not in pos]
        if missing:
            raise DataError(f"{len(missing)} ids not in dataset, e.g. {missing[0]!r}")
        return self.subset([pos[k] for k in ids])


@dataclass
class CubeDataset:
    """Hyperspectral image ``H x W x C`` with an integer ground-truth grid."""

    cube: np.ndarray
    ground_truth: np.ndarray
    class_id_names: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cube = np.asarray(self.cube, dtype=np.float64)
        gt = np.asarray(self.ground_truth)
        if self.cube.ndim != 3:
            raise DataError(f"cube must be H x W x C, got shape {self.cube.shape}")
        if gt.shape != self.cube.shape[:2]:
            raise DataError(f"ground truth {gt.shape} vs cube {self.cube.shape[:2]}")
        if np.any(gt != np.round(gt)) or np.any(gt < 0):
            raise DataError("ground-truth ids must be nonnegative integers")
        if not np.all(np.isfinite(self.cube)):
            raise DataError("cube contains non-finite values")
        self.ground_truth = gt.astype(np.int64)
        self.class_id_names = {int(k): str(v) for k, v in self.class_id_names.items()}


def resolve_positive_ids(preset: str, class_id_names: dict) -> list[int]:
    """Map a named preset to ground-truth ids, by name when names are known."""
    if preset not in PRESETS:
        raise DataError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
    preset_def = PRESETS[preset]
    if not class_id_names:
        return list(preset_def["ids"])
    ids = []
    for want in preset_def["names"]:
        hits = [k for k, v in class_id_names.items() if want in v.lower()]
        if len(hits) != 1:
            raise DataError(f"preset name {want!r} matches {len(hits)} classes in {class_id_names}")
        ids.append(int(hits[0]))
    return sorted(ids)


def extract_patches(
    cube: CubeDataset,
    s: int,
    positive_ids,
    class_names: Sequence[str] = ("other", "positive"),
) -> LabeledDataset:
    """Cut an ``s x s x C`` patch around every labelled pixel with a full window.

    Pixels closer than ``s // 2`` to a border are skipped. The label is 1
    when the centre pixel's ground-truth id is in ``positive_ids``. Ids are
    ``"{row}_{col}"`` and emission order is row-major.
    """
    if s < 1 or s % 2 == 0:
        raise DataError(f"patch size must be odd and positive, got {s}")
    H, W, _ = cube.cube.shape
    if s > min(H, W):
        raise DataError(f"patch size {s} exceeds image size {H}x{W}")
    positive = {int(p) for p in positive_ids}
    if not positive:
        raise DataError("positive class id set is empty")
    present = set(np.unique(cube.ground_truth).tolist())
    absent = sorted(positive - present)
    if absent:
        logger.warning("positive ids %s do not occur in the ground truth", absent)

    h = s // 2
    gt = cube.ground_truth
    inner = np.zeros_like(gt, dtype=bool)
    inner[h:H - h, h:W - h] = True
    rows, cols = np.nonzero((gt > 0) & inner)
    # windows[r, c] is the patch whose top-left corner is (r, c), laid out C x s x s
    windows = sliding_window_view(cube.cube, (s, s), axis=(0, 1))
    patches = windows[rows - h, cols - h].transpose(0, 2, 3, 1)
    groups = gt[rows, cols]
    return LabeledDataset(
        samples=np.ascontiguousarray(patches),
        labels=np.isin(groups, list(positive)).astype(np.int64),
        ids=[f"{r}_{c}" for r, c in zip(rows, cols)],
        class_names=tuple(class_names),
        groups=groups,
        coords=[(int(r), int(c)) for r, c in zip(rows, cols)],
    )


def split_train_test(data: LabeledDataset, per_class: int = 200, seed: int = 0, by: str = "label"):
    """Draw ``per_class`` training samples from every class, uniformly without replacement.

    ``by="group"`` stratifies on the original ground-truth ids instead of
    the binary labels. Each stratum gets its own Philox stream keyed by
    ``(seed, stratum)``, so adding a class never perturbs another's draw.
    """
    if by == "label":
        strata = data.labels
    elif by == "group":
        strata = data.groups if data.groups is not None else data.labels
    else:
        raise ValueError(f"by must be 'label' or 'group', got {by!r}")
    if per_class < 0:
        raise DataError("per_class must be nonnegative")
    train = []
    for value in np.unique(strata):
        members = np.flatnonzero(strata == value)
        if members.size < per_class:
            raise DataError(f"class {value} has {members.size} samples, {per_class} requested")
        if members.size == per_class:
            logger.warning("class %s: every sample goes to training, none left for testing", value)
        gen = np.random.Generator(np.random.Philox(key=np.array([seed, value], dtype=np.uint64)))
        train.append(members[gen.choice(members.size, size=per_class, replace=False)])
    train_idx = np.sort(np.concatenate(train)) if train else np.array([], dtype=np.int64)
    test_idx = np.setdiff1d(np.arange(len(data)), train_idx)
    return data.subset(train_idx), data.subset(test_idx)


# --- directory archives: index.csv + dataset.json + tensors/<id>.tdf -------------

INDEX_FIELDS = ["id", "label", "x", "y", "group"]


def write_archive(path, data: LabeledDataset, meta: Optional[dict] = None) -> None:
    root = Path(path)
    (root / "tensors").mkdir(parents=True, exist_ok=True)
    with open(root / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INDEX_FIELDS)
        for i, sid in enumerate(data.ids):
            x, y = data.coords[i] if data.coords is not None else ("", "")
            group = "" if data.groups is None else int(data.groups[i])
            writer.writerow([sid, int(data.labels[i]), x, y, group])
    for sid, sample in zip(data.ids, data.samples):
        save_tensor_file(root / "tensors" / f"{sid}.tdf", sample)
    info = {
        "class_names": list(data.class_names),
        "dims": list(data.dims),
        "count": len(data),
        "meta": meta or {},
    }
    (root / "dataset.json").write_text(json.dumps(info, indent=2) + "\n")


def read_archive(path) -> LabeledDataset:
    root = Path(path)
    if not (root / "index.csv").is_file():
        raise DataError(f"{root} is not a dataset archive (no index.csv)")
    info = json.loads((root / "dataset.json").read_text())
    ids, labels, coords, groups = [], [], [], []
    with open(root / "index.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["id"])
            labels.append(int(row["label"]))
            coords.append((int(row["x"]), int(row["y"])) if row["x"] != "" else None)
            groups.append(int(row["group"]) if row["group"] != "" else None)
    samples = [load_tensor_file(root / "tensors" / f"{sid}.tdf") for sid in ids]
    dims = tuple(info.get("dims", ()))
    if samples:
        stack = np.stack(samples)
    else:
        stack = np.zeros((0,) + dims)
    return LabeledDataset(
        samples=stack,
        labels=np.asarray(labels, dtype=np.int64),
        ids=ids,
        class_names=tuple(info["class_names"]),
        groups=None if any(g is None for g in groups) else np.asarray(groups),
        coords=None if any(c is None for c in coords) else coords,
    )


def load_manifest(path):
    """Read a dataset manifest and the cube it points to.

    Returns ``(cube_dataset, manifest_dict)``; relative paths resolve
    against the manifest's directory.
    """
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    for key in ("cube", "ground_truth"):
        if key not in manifest:
            raise DataError(f"manifest {path} lacks {key!r}")
    cube = load_tensor_file(base / manifest["cube"])
    gt = load_tensor_file(base / manifest["ground_truth"])
    return CubeDataset(cube, gt, manifest.get("class_id_names", {})), manifest


def write_manifest(path, cube: CubeDataset, positive_ids, class_names=("other", "positive")) -> None:
    """Write ``cube.tdf``, ``ground_truth.tdf`` and ``manifest.json`` into ``path``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    save_tensor_file(root / "cube.tdf", cube.cube)
    save_tensor_file(root / "ground_truth.tdf", cube.ground_truth.astype(np.float64))
    manifest = {
        "cube": "cube.tdf",
        "ground_truth": "ground_truth.tdf",
        "class_id_names": {str(k): v for k, v in sorted(cube.class_id_names.items())},
        "positive_ids": sorted(int(p) for p in positive_ids),
        "class_names": list(class_names),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
