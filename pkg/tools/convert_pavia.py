"""Convert the published Pavia University .mat files into a TDF cube and manifest.

Usage::

    python3 tools/convert_pavia.py PaviaU.mat PaviaU_gt.mat out_dir

Then run the pipeline with ``--manifest out_dir/manifest.json`` (or set
``PAVIA_MANIFEST`` for the optional acceptance check).
"""

import argparse

import numpy as np
from scipy.io import loadmat

from commonmode.dataio import PAVIA_CLASS_NAMES, PRESETS, CubeDataset, write_manifest


def _array(path, preferred):
    contents = loadmat(path)
    if preferred in contents:
        return contents[preferred]
    keys = [k for k in contents if not k.startswith("__")]
    if len(keys) != 1:
        raise SystemExit(f"{path}: cannot tell which variable to use among {keys}")
    return contents[keys[0]]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("cube")
    parser.add_argument("ground_truth")
    parser.add_argument("out")
    args = parser.parse_args()

    cube = _array(args.cube, "paviaU").astype(np.float64)
    gt = _array(args.ground_truth, "paviaU_gt").astype(np.int64)
    data = CubeDataset(cube, gt, dict(PAVIA_CLASS_NAMES))
    write_manifest(args.out, data, PRESETS["pavia-man-made"]["ids"], class_names=("other", "man-made"))
    print(f"wrote {cube.shape} cube with {int((gt > 0).sum())} labelled pixels to {args.out}")


if __name__ == "__main__":
    main()
