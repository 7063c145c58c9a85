import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commonmode.dataio import (
    CubeDataset,
    LabeledDataset,
    PAVIA_CLASS_NAMES,
    decode_tdf,
    encode_tdf,
    extract_patches,
    load_manifest,
    load_tensor_file,
    read_archive,
    resolve_positive_ids,
    save_tensor_file,
    split_train_test,
    write_archive,
    write_manifest,
)
from commonmode.errors import ChecksumError, DataError, FormatError, TruncationError


def checkerboard_cube(h=10, w=10, c=3, seed=0):
    rng = np.random.default_rng(seed)
    gt = np.fromfunction(lambda r, q: ((r + q) % 2) * (1 + (r % 3)), (h, w), dtype=int)
    return CubeDataset(rng.normal(size=(h, w, c)), gt, {1: "a", 2: "b", 3: "c"})


def brute_patches(cube, gt, s, positive):
    h = s // 2
    out = []
    for r in range(cube.shape[0]):
        for q in range(cube.shape[1]):
            if gt[r, q] == 0:
                continue
            if r < h or q < h or r >= cube.shape[0] - h or q >= cube.shape[1] - h:
                continue
            patch = np.zeros((s, s, cube.shape[2]))
            for i in range(s):
                for j in range(s):
                    patch[i, j] = cube[r - h + i, q - h + j]
            out.append((f"{r}_{q}", int(gt[r, q] in positive), patch))
    return out


def dataset(n0=30, n1=20, dims=(2, 3), seed=0):
    rng = np.random.default_rng(seed)
    n = n0 + n1
    return LabeledDataset(
        rng.normal(size=(n,) + dims), np.repeat([0, 1], [n0, n1]), [f"id{i}" for i in range(n)]
    )


class TestTdf:
    @settings(max_examples=30, deadline=None)
    @given(shape=st.lists(st.integers(1, 5), min_size=1, max_size=4), seed=st.integers(0, 2**31))
    def test_round_trip_bitwise(self, shape, seed):
        t = np.random.default_rng(seed).normal(size=shape)
        back = decode_tdf(encode_tdf(t))
        assert back.shape == t.shape
        assert back.tobytes() == t.tobytes()

    def test_header_layout(self):
        buf = encode_tdf(np.zeros((2, 3)))
        assert buf[:4] == b"TDF1" and buf[4] == 0 and buf[5] == 2 and buf[6:8] == b"\0\0"
        assert int.from_bytes(buf[8:12], "little") == 2
        assert len(buf) == 8 + 8 + 6 * 8 + 4

    def test_file_round_trip(self, tmp_path):
        t = np.random.default_rng(1).normal(size=(2, 3, 4, 5))
        save_tensor_file(tmp_path / "t.tdf", t)
        assert np.array_equal(load_tensor_file(tmp_path / "t.tdf"), t)

    def test_bad_magic(self):
        buf = bytearray(encode_tdf(np.zeros(3)))
        buf[:4] = b"XXXX"
        with pytest.raises(FormatError, match="magic"):
            decode_tdf(bytes(buf))

    def test_bad_dtype(self):
        buf = bytearray(encode_tdf(np.zeros(3)))
        buf[4] = 7
        with pytest.raises(FormatError, match="dtype"):
            decode_tdf(bytes(buf))

    def test_truncated_payload(self):
        buf = encode_tdf(np.zeros((3, 3)))
        with pytest.raises(TruncationError):
            decode_tdf(buf[:-12])
        with pytest.raises(TruncationError):
            decode_tdf(buf[:6])

    def test_corrupted_payload(self):
        buf = bytearray(encode_tdf(np.ones(3)))
        buf[20] ^= 0xFF
        with pytest.raises(ChecksumError):
            decode_tdf(bytes(buf))


class TestLabeledDataset:
    def test_validation(self):
        with pytest.raises(DataError):
            LabeledDataset(np.zeros((2, 3)), [0, 1, 1], ["a", "b"])
        with pytest.raises(DataError):
            LabeledDataset(np.zeros((2, 3)), [0, 1], ["a", "a"])
        with pytest.raises(DataError):
            LabeledDataset(np.zeros((2, 3)), [0, 2], ["a", "b"])
        with pytest.raises(DataError):
            LabeledDataset(np.full((2, 3), np.nan), [0, 1], ["a", "b"])

    def test_select_ids(self):
        d = dataset()
        sub = d.select_ids(["id3", "id1"])
        assert sub.ids == ["id3", "id1"]
        assert np.array_equal(sub.samples[1], d.samples[1])
        with pytest.raises(DataError):
            d.select_ids(["nope"])


class TestPatches:
    def test_checkerboard_against_loop_oracle(self):
        cube = checkerboard_cube()
        data = extract_patches(cube, 3, [2])
        oracle = brute_patches(cube.cube, cube.ground_truth, 3, {2})
        assert len(data) == len(oracle)
        for i, (sid, label, patch) in enumerate(oracle):
            assert data.ids[i] == sid
            assert data.labels[i] == label
            assert np.array_equal(data.samples[i], patch)

    def test_single_pixel(self):
        cube = checkerboard_cube()
        data = extract_patches(cube, 1, [1])
        labeled = np.argwhere(cube.ground_truth > 0)
        assert len(data) == len(labeled)
        r, c = labeled[0]
        assert np.array_equal(data.samples[0], cube.cube[r, c][None, None, :])
        assert data.coords[0] == (r, c)

    def test_patch_equals_image(self):
        rng = np.random.default_rng(2)
        gt = np.zeros((7, 7), dtype=int)
        cube = CubeDataset(rng.normal(size=(7, 7, 2)), gt, {})
        assert len(extract_patches(cube, 7, [1])) == 0
        gt[3, 3] = 1
        data = extract_patches(CubeDataset(cube.cube, gt, {}), 7, [1])
        assert data.ids == ["3_3"]
        assert np.array_equal(data.samples[0], cube.cube)

    def test_translation_consistency(self):
        cube = checkerboard_cube(seed=3)
        rng = np.random.default_rng(3)
        shifted = CubeDataset(
            np.concatenate([rng.normal(size=(1, 10, 3)), cube.cube]),
            np.concatenate([np.zeros((1, 10), dtype=int), cube.ground_truth]),
            cube.class_id_names,
        )
        a, b = extract_patches(cube, 3, [1]), extract_patches(shifted, 3, [1])
        index = {sid: i for i, sid in enumerate(b.ids)}
        for i, (r, c) in enumerate(a.coords):
            j = index[f"{r + 1}_{c}"]
            assert np.array_equal(a.samples[i], b.samples[j])
            assert a.labels[i] == b.labels[j]
        # only the row that left the border band is new
        extra = {b.coords[j][0] for j in range(len(b)) if b.ids[j] not in {f"{r + 1}_{c}" for r, c in a.coords}}
        assert extra <= {1}

    def test_errors(self, caplog):
        cube = checkerboard_cube()
        with pytest.raises(DataError):
            extract_patches(cube, 4, [1])
        with pytest.raises(DataError):
            extract_patches(cube, 11, [1])
        with pytest.raises(DataError):
            extract_patches(cube, 3, [])
        with caplog.at_level(logging.WARNING):
            extract_patches(cube, 3, [9])
        assert "do not occur" in caplog.text

    def test_cube_validation(self):
        with pytest.raises(DataError):
            CubeDataset(np.zeros((3, 3)), np.zeros((3, 3), dtype=int), {})
        with pytest.raises(DataError):
            CubeDataset(np.zeros((3, 3, 2)), np.zeros((3, 4), dtype=int), {})
        with pytest.raises(DataError):
            CubeDataset(np.zeros((3, 3, 2)), -np.ones((3, 3), dtype=int), {})

    def test_preset_resolution(self):
        assert resolve_positive_ids("pavia-man-made", PAVIA_CLASS_NAMES) == [1, 5, 7, 8]
        assert resolve_positive_ids("pavia-man-made", {}) == [1, 5, 7, 8]
        as_loaded = {str(k): v for k, v in PAVIA_CLASS_NAMES.items()}
        assert resolve_positive_ids("pavia-man-made", as_loaded) == [1, 5, 7, 8]
        with pytest.raises(DataError):
            resolve_positive_ids("unknown", {})


class TestSplit:
    def test_partition_and_counts(self):
        d = dataset(n0=500, n1=500)
        train, test = split_train_test(d, 200, seed=1)
        assert set(train.ids).isdisjoint(test.ids)
        assert set(train.ids) | set(test.ids) == set(d.ids)
        assert np.bincount(train.labels).tolist() == [200, 200]
        assert np.bincount(test.labels).tolist() == [300, 300]

    def test_deterministic_and_seed_dependent(self):
        d = dataset(n0=500, n1=500)
        a, _ = split_train_test(d, 200, seed=1)
        b, _ = split_train_test(d, 200, seed=1)
        c, _ = split_train_test(d, 200, seed=2)
        assert a.ids == b.ids
        assert a.ids != c.ids

    def test_full_class_leaves_empty_test(self, caplog):
        d = dataset(n0=5, n1=8)
        with caplog.at_level(logging.WARNING):
            train, test = split_train_test(d, 5, seed=0)
        assert np.bincount(test.labels, minlength=2).tolist() == [0, 3]
        assert "none left" in caplog.text

    def test_insufficient(self):
        with pytest.raises(DataError):
            split_train_test(dataset(n0=5, n1=8), 6)

    def test_group_strata(self):
        d = dataset(n0=30, n1=30)
        d.groups = np.repeat([1, 2, 3], 20)
        train, _ = split_train_test(d, 10, by="group")
        assert np.bincount(train.groups).tolist() == [0, 10, 10, 10]
        with pytest.raises(ValueError):
            split_train_test(d, 10, by="pixel")


class TestArchive:
    def test_round_trip(self, tmp_path):
        data = extract_patches(checkerboard_cube(), 3, [1, 2])
        write_archive(tmp_path / "arc", data, {"s": 3})
        back = read_archive(tmp_path / "arc")
        assert back.ids == data.ids
        assert back.samples.tobytes() == data.samples.tobytes()
        assert np.array_equal(back.labels, data.labels)
        assert np.array_equal(back.groups, data.groups)
        assert back.coords == data.coords
        assert json.loads((tmp_path / "arc" / "dataset.json").read_text())["meta"] == {"s": 3}
        header = (tmp_path / "arc" / "index.csv").read_text().splitlines()[0]
        assert header == "id,label,x,y,group"

    def test_not_an_archive(self, tmp_path):
        with pytest.raises(DataError):
            read_archive(tmp_path)

    def test_manifest_round_trip(self, tmp_path):
        cube = checkerboard_cube()
        write_manifest(tmp_path, cube, [2, 1])
        loaded, manifest = load_manifest(tmp_path / "manifest.json")
        assert np.array_equal(loaded.cube, cube.cube)
        assert np.array_equal(loaded.ground_truth, cube.ground_truth)
        assert manifest["positive_ids"] == [1, 2]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            load_manifest(tmp_path / "none.json")
