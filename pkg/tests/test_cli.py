import csv
import json
from pathlib import Path

import numpy as np
import pytest

from commonmode import __version__
from commonmode.cli import main
from commonmode.dataio import extract_patches, load_manifest, read_archive
from commonmode.modelio import load_model


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    assert run("synth", "--kind", "hyperspectral-cube", "--seed", 3, "--out", root / "scene") == 0
    assert run("patches", "--manifest", root / "scene" / "manifest.json", "--patch-size", 5,
               "--out", root / "patches") == 0
    assert run("split", "--data", root / "patches", "--per-class", 30, "--seed", 1,
               "--out", root / "split.csv") == 0
    return root


def read_json(path):
    return json.loads(Path(path).read_text())


class TestPipeline:
    def test_patch_archive_matches_extraction(self, scene):
        cube, manifest = load_manifest(scene / "scene" / "manifest.json")
        expected = extract_patches(cube, 5, manifest["positive_ids"])
        archive = read_archive(scene / "patches")
        assert archive.ids == expected.ids
        assert np.array_equal(archive.samples, expected.samples)
        rows = list(csv.DictReader(open(scene / "patches" / "index.csv")))
        assert len(rows) == len(expected)

    def test_split_counts_per_original_class(self, scene):
        archive = read_archive(scene / "patches")
        rows = list(csv.DictReader(open(scene / "split.csv")))
        assert [r["id"] for r in rows] == archive.ids
        train = {r["id"] for r in rows if r["subset"] == "train"}
        groups = [g for sid, g in zip(archive.ids, archive.groups) if sid in train]
        assert set(np.bincount(groups)[1:]) == {30}

    def test_cmp_components(self, scene):
        model = scene / "cmp13.cmpm"
        assert run("fit", "--data", scene / "patches", "--split", scene / "split.csv",
                   "--reducer", "cmp", "--components", 13, "--out", model) == 0
        basis = load_model(model).basis
        assert basis.output_dims == (5, 5, 26)
        report = read_json(f"{model}.json")
        assert report["tool"] == "commonmode" and report["version"] == __version__
        assert report["config"]["components"] == 13
        assert report["fit_report"]["iterations"] >= 1

    def test_mpca_full_extent_keeps_scatter(self, scene):
        out = scene / "mpca_full.cmpm"
        assert run("fit", "--data", scene / "patches", "--split", scene / "split.csv",
                   "--reducer", "mpca", "--output-dims", "5,5,30", "--out", out) == 0
        report = read_json(f"{out}.json")
        assert report["projected_scatter"] == pytest.approx(report["input_scatter"], abs=1e-9)

    def test_passthrough_centroid_on_separable_data(self, tmp_path):
        assert run("synth", "--kind", "gaussian-blobs", "--seed", 0, "--out", tmp_path / "blobs") == 0
        assert run("split", "--data", tmp_path / "blobs", "--per-class", 50,
                   "--per-class-basis", "binary", "--out", tmp_path / "split.csv") == 0
        assert run("fit", "--data", tmp_path / "blobs", "--reducer", "none", "--out", tmp_path / "id.cmpm") == 0
        assert run("train", "--data", tmp_path / "blobs", "--split", tmp_path / "split.csv",
                   "--model", tmp_path / "id.cmpm", "--classifier", "centroid",
                   "--out", tmp_path / "clf.cmpm") == 0
        assert run("eval", "--data", tmp_path / "blobs", "--split", tmp_path / "split.csv",
                   "--model", tmp_path / "id.cmpm", "--classifier", tmp_path / "clf.cmpm",
                   "--out", tmp_path / "eval.json") == 0
        report = read_json(tmp_path / "eval.json")
        assert report["overall_accuracy"] == 1.0
        assert report["n_test"] == 100
        assert report["config"]["classifier"] == str(tmp_path / "clf.cmpm")

    def test_train_eval_rank1_and_transform(self, scene):
        model = scene / "cmp2.cmpm"
        assert run("fit", "--data", scene / "patches", "--split", scene / "split.csv",
                   "--components", 2, "--spatial", 3, "--out", model) == 0
        assert run("train", "--data", scene / "patches", "--split", scene / "split.csv",
                   "--model", model, "--epochs", 5, "--out", scene / "r1.cmpm") == 0
        assert run("eval", "--data", scene / "patches", "--split", scene / "split.csv", "--model", model,
                   "--classifier", scene / "r1.cmpm", "--out", scene / "eval.json") == 0
        report = read_json(scene / "eval.json")
        assert 0.5 < report["overall_accuracy"] <= 1.0
        assert sum(map(sum, report["confusion"])) == report["n_test"]
        assert run("transform", "--data", scene / "patches", "--model", model, "--out", scene / "reduced") == 0
        assert read_archive(scene / "reduced").dims == (3, 3, 4)


class TestConfig:
    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"kind": "csp-vectors", "seed": 5, "out": str(tmp_path / "a")}))
        assert run("synth", "--config", cfg, "--seed", 9) == 0
        params = read_json(tmp_path / "a" / "params.json")
        assert params["config"]["seed"] == 9 and params["params"]["seed"] == 9

    def test_rerun_identical(self, tmp_path):
        for name in ("a", "b"):
            assert run("synth", "--kind", "csp-vectors", "--seed", 7, "--out", tmp_path / name) == 0
        for f in ("index.csv", "dataset.json", "tensors/s00000.tdf"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    @pytest.mark.parametrize("argv", [
        ["synth", "--kind", "csp-vectors"],
        ["fit", "--data", "x", "--out", "y", "--reducer", "pca"],
        ["fit", "--data", "x", "--out", "y", "--components", "0"],
        ["synth", "--config", "/nonexistent.json", "--kind", "csp-vectors", "--out", "z"],
    ])
    def test_config_errors_exit_2(self, argv, capsys):
        assert main(argv) == 2
        assert "error" in capsys.readouterr().err

    def test_bad_manifest_exit_3(self, tmp_path, capsys):
        assert run("patches", "--manifest", tmp_path / "missing.json", "--out", tmp_path / "p") == 3
        assert "manifest" in capsys.readouterr().err

    def test_dimension_mismatch_exit_3(self, scene, tmp_path):
        model = tmp_path / "m.cmpm"
        assert run("fit", "--data", scene / "patches", "--split", scene / "split.csv",
                   "--components", 1, "--spatial", 1, "--out", model) == 0
        assert run("synth", "--kind", "gaussian-blobs", "--out", tmp_path / "blobs") == 0
        assert run("transform", "--data", tmp_path / "blobs", "--model", model, "--out", tmp_path / "r") == 3

    def test_thread_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CMP_THREADS", "1")
        assert run("synth", "--kind", "csp-vectors", "--out", tmp_path / "a") == 0
        monkeypatch.setenv("CMP_THREADS", "many")
        assert run("synth", "--kind", "csp-vectors", "--out", tmp_path / "b") == 2
