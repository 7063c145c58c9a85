"""Command-line pipeline: synth -> patches -> split -> fit -> transform/train -> eval.

Each subcommand reads an optional JSON ``--config`` file; flags override the
file, which overrides the built-in defaults. Exit codes: 0 success, 2
configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classify import NearestCentroidTensor, Rank1TensorClassifier, evaluate
from .dataio import (
    LabeledDataset,
    extract_patches,
    load_manifest,
    read_archive,
    resolve_positive_ids,
    split_train_test,
    write_archive,
    write_manifest,
)
from .eigen import ConvergenceError, NotPSDError
from .errors import ConfigError, DataError
from .modelio import load_model, save_model
from .subspace import CmpModel, FitOptions, MpcaModel, fit_cmp, fit_mpca, identity_model
from .synth import GENERATORS
from .tensor_core import average_total_scatter

logger = logging.getLogger("commonmode")

TOOL = "commonmode"

DEFAULTS = {
    "synth": {"kind": None, "seed": 0, "out": None},
    "patches": {"manifest": None, "patch_size": 7, "positive_preset": None, "positive_ids": None, "out": None},
    "split": {"data": None, "per_class": 200, "seed": 0, "per_class_basis": "original", "out": None},
    "fit": {
        "data": None,
        "split": None,
        "reducer": "cmp",
        "components": 13,
        "spatial": 5,
        "designated_mode": None,
        "output_dims": None,
        "tol": 1e-6,
        "max_iter": 5,
        "epsilon": 1e-10,
        "phi_mean": "class",
        "out": None,
        "report": None,
    },
    "transform": {"data": None, "model": None, "out": None},
    "train": {
        "data": None,
        "split": None,
        "model": None,
        "classifier": "rank1",
        "lr": 0.1,
        "reg_lambda": 1e-4,
        "inner_steps": 50,
        "epochs": 20,
        "out": None,
        "report": None,
    },
    "eval": {"data": None, "split": None, "model": None, "classifier": None, "out": None},
}

REQUIRED = {
    "synth": ["kind", "out"],
    "patches": ["manifest", "out"],
    "split": ["data", "out"],
    "fit": ["data", "out"],
    "transform": ["data", "model", "out"],
    "train": ["data", "out"],
    "eval": ["data", "classifier", "out"],
}

CHOICES = {
    "kind": sorted(GENERATORS),
    "per_class_basis": ["original", "binary"],
    "reducer": ["cmp", "mpca", "none"],
    "phi_mean": ["class", "global"],
    "classifier_kind": ["rank1", "centroid"],
}


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL, description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=S)
        p.add_argument("--config", help="JSON file of option values")
        return p

    p = cmd("synth", "generate a seeded synthetic dataset")
    p.add_argument("--kind", choices=CHOICES["kind"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = cmd("patches", "cut labelled s x s x C patches out of a hyperspectral cube")
    p.add_argument("--manifest")
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--positive-preset", dest="positive_preset")
    p.add_argument("--positive-ids", dest="positive_ids", type=_int_list)
    p.add_argument("--out")

    p = cmd("split", "seeded per-class train/test split")
    p.add_argument("--data")
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--per-class-basis", dest="per_class_basis", choices=CHOICES["per_class_basis"])
    p.add_argument("--out")

    p = cmd("fit", "fit a CMP / MPCA / pass-through reducer on the training split")
    p.add_argument("--data")
    p.add_argument("--split")
    p.add_argument("--reducer", choices=CHOICES["reducer"])
    p.add_argument("--components", type=int, help="CMP: per class; MPCA: total (designated mode)")
    p.add_argument("--spatial", type=int, help="output extent of every non-designated mode")
    p.add_argument("--designated-mode", dest="designated_mode", type=int)
    p.add_argument("--output-dims", dest="output_dims", type=_int_list)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--phi-mean", dest="phi_mean", choices=CHOICES["phi_mean"])
    p.add_argument("--out")
    p.add_argument("--report")

    p = cmd("transform", "project every sample of an archive with a fitted reducer")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--out")

    p = cmd("train", "train a classifier on the (optionally reduced) training split")
    p.add_argument("--data")
    p.add_argument("--split")
    p.add_argument("--model")
    p.add_argument("--classifier", choices=CHOICES["classifier_kind"])
    p.add_argument("--lr", type=float)
    p.add_argument("--reg-lambda", dest="reg_lambda", type=float)
    p.add_argument("--inner-steps", dest="inner_steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.add_argument("--report")

    p = cmd("eval", "score a trained classifier on the test split")
    p.add_argument("--data")
    p.add_argument("--split")
    p.add_argument("--model")
    p.add_argument("--classifier")
    p.add_argument("--out")
    return parser


def resolve_config(command: str, flags: dict) -> dict:
    config = dict(DEFAULTS[command])
    path = flags.pop("config", None)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        config.update({k: v for k, v in loaded.items() if k in config})
    config.update({k: v for k, v in flags.items() if k in config})
    missing = [k for k in REQUIRED[command] if config.get(k) is None]
    if missing:
        raise ConfigError(f"{command}: missing required option(s): {', '.join(missing)}")
    _validate(command, config)
    return config


def _validate(command: str, c: dict) -> None:
    def positive(key):
        if c.get(key) is not None and (not isinstance(c[key], (int, float)) or c[key] <= 0):
            raise ConfigError(f"{key} must be positive, got {c[key]!r}")

    for key in ("patch_size", "components", "spatial", "max_iter", "tol", "epsilon", "lr",
                "inner_steps", "epochs"):
        positive(key)
    if c.get("per_class") is not None and c["per_class"] < 0:
        raise ConfigError("per_class must be nonnegative")
    for key, allowed in (("kind", CHOICES["kind"]), ("per_class_basis", CHOICES["per_class_basis"]),
                         ("reducer", CHOICES["reducer"]), ("phi_mean", CHOICES["phi_mean"])):
        if key in c and c[key] is not None and c[key] not in allowed:
            raise ConfigError(f"{key} must be one of {allowed}, got {c[key]!r}")
    if command == "train" and c["classifier"] not in CHOICES["classifier_kind"]:
        raise ConfigError(f"classifier must be one of {CHOICES['classifier_kind']}")


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def _envelope(command: str, config: dict, **body) -> dict:
    return {"tool": TOOL, "version": __version__, "command": command, "config": config, **body}


def _read_split(path) -> dict[str, list[str]]:
    subsets = {"train": [], "test": []}
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                subsets.setdefault(row["subset"], []).append(row["id"])
    except (OSError, KeyError) as exc:
        raise DataError(f"cannot read split file {path}: {exc}") from exc
    return subsets


def _subset(data: LabeledDataset, split_path, which: str) -> LabeledDataset:
    if split_path is None:
        return data
    return data.select_ids(_read_split(split_path)[which])


def _load_reducer(path):
    if path is None:
        return None
    model = load_model(path)
    if not isinstance(model, (CmpModel, MpcaModel)):
        raise DataError(f"{path} holds a classifier, not a reducer")
    return model


def _reduce(model, X):
    if model is None:
        return X
    if X.shape[1:] != model.basis.input_dims:
        raise DataError(f"data dims {X.shape[1:]} do not match model input {model.basis.input_dims}")
    return model.transform(X)


# --- commands -----------------------------------------------------------------


def cmd_synth(c: dict) -> None:
    out = Path(c["out"])
    result, params = GENERATORS[c["kind"]](seed=c["seed"])
    if c["kind"] == "hyperspectral-cube":
        write_manifest(out, result, params["positive_ids"], class_names=("other", "positive"))
    else:
        write_archive(out, result, meta={"generator": params})
    _write_json(out / "params.json", _envelope("synth", c, params=params))


def cmd_patches(c: dict) -> None:
    cube, manifest = load_manifest(c["manifest"])
    if c["positive_ids"] is not None:
        positive = c["positive_ids"]
    elif c["positive_preset"] is not None:
        positive = resolve_positive_ids(c["positive_preset"], cube.class_id_names)
    elif manifest.get("positive_ids"):
        positive = manifest["positive_ids"]
    elif manifest.get("positive_preset"):
        positive = resolve_positive_ids(manifest["positive_preset"], cube.class_id_names)
    else:
        raise ConfigError("no positive class ids: pass --positive-ids or --positive-preset")
    names = manifest.get("class_names", ["other", "positive"])
    data = extract_patches(cube, c["patch_size"], positive, class_names=names)
    meta = {"patch_size": c["patch_size"], "positive_ids": sorted(int(p) for p in positive)}
    write_archive(c["out"], data, meta=meta)
    logger.info("wrote %d patches to %s", len(data), c["out"])


def cmd_split(c: dict) -> None:
    data = read_archive(c["data"])
    by = "group" if c["per_class_basis"] == "original" else "label"
    train, test = split_train_test(data, c["per_class"], c["seed"], by=by)
    out = Path(c["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    which = {sid: "train" for sid in train.ids}
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "subset"])
        for sid in data.ids:
            writer.writerow([sid, which.get(sid, "test")])
    logger.info("split: %d train, %d test", len(train), len(test))


def _output_dims(c: dict, dims: tuple[int, ...]):
    """Resolve output extents and CMP per-class counts from the config."""
    n = len(dims)
    mode = c["designated_mode"] or n
    if not 1 <= mode <= n:
        raise ConfigError(f"designated_mode {mode} out of range for {n}-way data")
    if c["output_dims"] is not None:
        out = [int(v) for v in c["output_dims"]]
        if len(out) != n:
            raise ConfigError(f"output_dims {out} vs {n}-way data")
    else:
        out = [min(c["spatial"], d) for d in dims]
        k = c["components"]
        out[mode - 1] = 2 * k if c["reducer"] == "cmp" else k
    for p, d in zip(out, dims):
        if not 1 <= p <= d:
            raise ConfigError(f"output dims {out} incompatible with input dims {list(dims)}")
    counts = [((p + 1) // 2, p // 2) for p in out]
    return out, counts


def cmd_fit(c: dict) -> None:
    data = _subset(read_archive(c["data"]), c["split"], "train")
    X, y = data.samples, data.labels
    if c["reducer"] == "none":
        model = identity_model(data.dims)
    else:
        out_dims, counts = _output_dims(c, data.dims)
        opts = FitOptions(tol=c["tol"], max_iter=c["max_iter"], epsilon=c["epsilon"],
                          phi_mean=c["phi_mean"], per_class_counts=counts)
        if c["reducer"] == "cmp":
            model = fit_cmp(X, y, out_dims, opts, classes=(0, 1))
        else:
            model = fit_mpca(X, out_dims, opts)
    Path(c["out"]).parent.mkdir(parents=True, exist_ok=True)
    save_model(model, c["out"])
    report = _envelope(
        "fit",
        c,
        class_names=list(data.class_names),
        n_train=len(data),
        input_dims=list(model.basis.input_dims),
        output_dims=list(model.basis.output_dims),
        input_scatter=average_total_scatter(X),
        projected_scatter=average_total_scatter(model.transform(X)),
        fit_report=model.fit_report.to_dict(),
    )
    _write_json(c["report"] or f"{c['out']}.json", report)


def cmd_transform(c: dict) -> None:
    data = read_archive(c["data"])
    model = _load_reducer(c["model"])
    reduced = LabeledDataset(_reduce(model, data.samples), data.labels, data.ids,
                             data.class_names, data.groups, data.coords)
    write_archive(c["out"], reduced, meta={"model": str(c["model"])})


def cmd_train(c: dict) -> None:
    data = _subset(read_archive(c["data"]), c["split"], "train")
    X = _reduce(_load_reducer(c["model"]), data.samples)
    if c["classifier"] == "rank1":
        clf = Rank1TensorClassifier(lr=c["lr"], reg_lambda=c["reg_lambda"],
                                    inner_steps=c["inner_steps"], epochs=c["epochs"])
    else:
        clf = NearestCentroidTensor()
    clf.fit(X, data.labels)
    Path(c["out"]).parent.mkdir(parents=True, exist_ok=True)
    save_model(clf, c["out"])
    body = {"n_train": len(data), "train_accuracy": float(clf.score(X, data.labels))}
    if isinstance(clf, Rank1TensorClassifier):
        body["training_report"] = clf.report_.to_dict()
    _write_json(c["report"] or f"{c['out']}.json", _envelope("train", c, **body))


def cmd_eval(c: dict) -> None:
    data = _subset(read_archive(c["data"]), c["split"], "test")
    X = _reduce(_load_reducer(c["model"]), data.samples)
    clf = load_model(c["classifier"])
    if isinstance(clf, (CmpModel, MpcaModel)):
        raise DataError(f"{c['classifier']} holds a reducer, not a classifier")
    if X.shape[1:] != clf.input_dims_:
        raise DataError(f"data dims {X.shape[1:]} do not match classifier input {clf.input_dims_}")
    report = evaluate(clf, X, data.labels, config=c).to_dict()
    config = report.pop("config")
    _write_json(c["out"], _envelope("eval", config, class_names=list(data.class_names),
                                    n_test=len(data), **report))


COMMANDS = {
    "synth": cmd_synth,
    "patches": cmd_patches,
    "split": cmd_split,
    "fit": cmd_fit,
    "transform": cmd_transform,
    "train": cmd_train,
    "eval": cmd_eval,
}


def _thread_limit():
    value = os.environ.get("CMP_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError as exc:
        raise ConfigError(f"CMP_THREADS must be an integer, got {value!r}") from exc
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(n, 1))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        config = resolve_config(args.command, flags)
        limiter = _thread_limit()
        try:
            COMMANDS[args.command](config)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ConfigError as exc:
        print(f"{TOOL} {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, NotPSDError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"{TOOL} {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 4
    except (DataError, OSError, ValueError) as exc:
        print(f"{TOOL} {args.command}: data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
