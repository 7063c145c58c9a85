"""Binary container for fitted reducers and classifiers.

Layout (little-endian)::

    b"CMPM" | version u16 | kind u8 | n_modes u8
    | n_modes x u32 input extents | n_modes x u32 output extents
    | f64 arrays, row-major, in a fixed per-kind order
    | u32 length + UTF-8 JSON metadata
    | CRC32 (u32) of every preceding byte

Kinds: 0 MPCA, 1 CMP, 2 rank-1 classifier, 3 nearest-centroid classifier.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .classify import NearestCentroidTensor, Rank1TensorClassifier, TrainReport
from .eigen import EigenSystem, WhiteningTransform
from .errors import ChecksumError, FormatError, TruncationError
from .subspace import CMP, MPCA, CmpModel, FitReport, MpcaModel, ProjectionBasis

MAGIC = b"CMPM"
VERSION = 1
KIND_MPCA, KIND_CMP, KIND_RANK1, KIND_CENTROID = 0, 1, 2, 3


def _pack(arrays) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def _json_bytes(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()


def _label(v):
    return v.item() if hasattr(v, "item") else v


def encode_model(model) -> bytes:
    if isinstance(model, (CMP, MPCA)):
        model = model.model_
    if isinstance(model, MpcaModel):
        kind = KIND_MPCA
        in_dims, out_dims = model.basis.input_dims, model.basis.output_dims
        arrays = list(model.basis.matrices) + [model.global_mean]
        meta = {"fit_report": model.fit_report.to_dict()}
    elif isinstance(model, CmpModel):
        kind = KIND_CMP
        in_dims, out_dims = model.basis.input_dims, model.basis.output_dims
        w = model.whitening
        arrays = list(w.matrices)
        for e in w.eigensystems:
            arrays += [e.values, e.vectors]
        arrays += list(model.basis.matrices) + list(model.class_means)
        meta = {
            "fit_report": model.fit_report.to_dict(),
            "per_class_counts": [list(c) for c in model.per_class_counts],
            "class_labels": [_label(c) for c in model.class_labels],
            "phi_mean": model.phi_mean,
            "epsilon": w.epsilon,
            "clipped": list(w.clipped),
        }
    elif isinstance(model, Rank1TensorClassifier):
        kind = KIND_RANK1
        in_dims = model.input_dims_
        out_dims = (1,) * len(in_dims)
        arrays = list(model.factors_) + [np.array([model.scale_, model.bias_, model.input_scale_])]
        meta = {
            "classes": [_label(c) for c in model.classes_],
            "params": model.get_params(),
            "report": model.report_.to_dict(),
        }
    elif isinstance(model, NearestCentroidTensor):
        kind = KIND_CENTROID
        in_dims = model.input_dims_
        out_dims = (1,) * len(in_dims)
        arrays = [model.centroids_]
        meta = {"classes": [_label(c) for c in model.classes_]}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")

    n = len(in_dims)
    head = MAGIC + struct.pack("<HBB", VERSION, kind, n)
    head += struct.pack(f"<{2 * n}I", *in_dims, *out_dims)
    meta_bytes = _json_bytes(meta)
    body = head + _pack(arrays) + struct.pack("<I", len(meta_bytes)) + meta_bytes
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes, start: int, end: int):
        self.buf, self.pos, self.end = buf, start, end

    def take(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        if self.pos + 8 * count > self.end:
            raise TruncationError("array payload runs past the end of the file")
        arr = np.frombuffer(self.buf, dtype="<f8", count=count, offset=self.pos)
        self.pos += 8 * count
        return arr.astype(np.float64).reshape(shape)


def decode_model(buf: bytes):
    if len(buf) < 12:
        raise TruncationError("file shorter than the model header")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ChecksumError("CRC32 mismatch (file truncated or corrupt)")
    version, kind, n = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"model format version {version}, this build reads {VERSION}")
    dims = struct.unpack_from(f"<{2 * n}I", buf, 8)
    in_dims, out_dims = dims[:n], dims[n:]
    r = _Reader(buf, 8 + 8 * n, len(buf) - 4)

    if kind == KIND_MPCA:
        mats = [r.take((i, p)) for i, p in zip(in_dims, out_dims)]
        mean = r.take(in_dims)
    elif kind == KIND_CMP:
        z = [r.take((i, i)) for i in in_dims]
        eigs = [EigenSystem(r.take((i,)), r.take((i, i))) for i in in_dims]
        mats = [r.take((i, p)) for i, p in zip(in_dims, out_dims)]
        means = (r.take(in_dims), r.take(in_dims))
    elif kind == KIND_RANK1:
        factors = [r.take((i,)) for i in in_dims]
        scale, bias, input_scale = r.take((3,))
    elif kind == KIND_CENTROID:
        centroids = r.take((2,) + tuple(in_dims))
    else:
        raise FormatError(f"unknown model kind {kind}")

    if r.pos + 4 > r.end:
        raise TruncationError("metadata length missing")
    (mlen,) = struct.unpack_from("<I", buf, r.pos)
    if r.pos + 4 + mlen != r.end:
        raise FormatError("metadata length does not match file size")
    meta = json.loads(buf[r.pos + 4:r.end].decode())

    if kind == KIND_MPCA:
        return MpcaModel(ProjectionBasis(mats), mean, FitReport.from_dict(meta["fit_report"]))
    if kind == KIND_CMP:
        whitening = WhiteningTransform(z, eigs, float(meta["epsilon"]), [bool(c) for c in meta["clipped"]])
        return CmpModel(
            whitening=whitening,
            basis=ProjectionBasis(mats),
            per_class_counts=[tuple(c) for c in meta["per_class_counts"]],
            class_means=means,
            fit_report=FitReport.from_dict(meta["fit_report"]),
            class_labels=tuple(meta["class_labels"]),
            phi_mean=meta["phi_mean"],
        )
    if kind == KIND_RANK1:
        clf = Rank1TensorClassifier(**meta["params"])
        clf.classes_ = np.asarray(meta["classes"])
        clf.input_dims_ = tuple(in_dims)
        clf.factors_ = factors
        clf.scale_ = float(scale)
        clf.bias_ = float(bias)
        clf.input_scale_ = float(input_scale)
        clf.report_ = TrainReport(**meta["report"])
        return clf
    clf = NearestCentroidTensor()
    clf.classes_ = np.asarray(meta["classes"])
    clf.input_dims_ = tuple(in_dims)
    clf.centroids_ = centroids
    return clf


def save_model(model, path) -> None:
    Path(path).write_bytes(encode_model(model))


def load_model(path):
    return decode_model(Path(path).read_bytes())
