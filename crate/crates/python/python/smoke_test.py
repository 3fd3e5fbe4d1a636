"""Smoke test for the dermtriage_py extension.

Build and install first:  pip install maturin && maturin develop -m crates/python/Cargo.toml
"""

import json
import math
import pathlib
import tempfile

import dermtriage_py as dt


def main():
    # One positive ranked below one negative out of four pairs.
    assert math.isclose(dt.auc([0.9, 0.4, 0.6, 0.1], [True, True, False, False]), 0.75)
    assert 0.0 <= dt.average_precision([0.9, 0.4, 0.6, 0.1], [True, True, False, False]) <= 1.0
    assert math.isclose(dt.iou((5, 5, 10, 10), (10, 5, 10, 10)), 1 / 3)
    assert dt.aggregate([0.3], "noisy_or") == 0.3
    assert math.isclose(dt.aggregate([0.5, 0.5], "noisy_or"), 0.75)
    assert dt.aggregate([0.2, 0.7], "max") == 0.7

    try:
        dt.aggregate([], "average")
    except ValueError:
        pass
    else:
        raise AssertionError("empty aggregation should raise")

    with tempfile.TemporaryDirectory() as tmp:
        n = dt.generate_synthetic(tmp, images=5, seed=3)
        manifest = json.loads((pathlib.Path(tmp) / "manifest.json").read_text())
        assert n == 5 and len(manifest["images"]) == 5

    print("dermtriage_py smoke test passed")


if __name__ == "__main__":
    main()
