"""Smoke test for the `impress` Python module.

Build first:
    cargo build -p impress-py --release --features extension-module
then run `python3 python/smoke_test.py`. If `impress` is not importable the
script loads target/release/libimpress.so directly.
"""

import importlib.util
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    try:
        import impress

        return impress
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = os.path.join(ROOT, "target", profile, "libimpress.so")
        if os.path.exists(lib):
            tmp = tempfile.mkdtemp()
            dst = os.path.join(tmp, "impress.so")
            shutil.copy(lib, dst)
            spec = importlib.util.spec_from_file_location("impress", dst)
            mod = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(mod)
            return mod
    sys.exit("impress module not found; build crates/py first")


def main():
    im = load_module()
    side = im.IMAGE_SIDE

    face = im.render_face([0.0] * 12)
    assert len(face) == side * side
    assert all(0.0 <= v <= 1.0 for v in face)
    assert 0.0 < im.truth_score([0.0] * 12, "trust") < 1.0

    faces = im.sample_faces(3, seed=4)
    assert len(faces) == 3 and len(faces[0]["params"]) == 12 and len(faces[0]["scores"]) == 3

    assert abs(im.identity_similarity([([1.0, 0.0], [1.0, 1.0])]) - 0.707107) < 1e-6
    assert abs(im.frechet_distance([0.0], [1.0], [1.0], [1.0]) - 1.0) < 1e-9
    assert abs(im.adas([0.5, 0.7], [0.6, 0.7]) - 0.05) < 1e-12
    assert im.run_command(["frobnicate"]) == 2

    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "data")
        bundle_path = os.path.join(tmp, "b.bundle")
        steps = [
            ["gen-data", "--n", "60", "--seed", "2", "--identity-threshold", "-1", "--out", data],
            ["train-attr", "--attr", "trust", "--data", data, "--iters", "20", "--encoder-iters", "40",
             "--corrector-iters", "10", "--corrector-pool", "30", "--out", bundle_path],
            ["train-mapper", "--attr", "trust", "--data", data, "--iters", "3", "--hidden", "8", "--blocks", "1",
             "--out", bundle_path],
        ]
        for argv in steps:
            assert im.run_command(argv) == 0, argv

        b = im.Bundle.load(bundle_path)
        assert b.attributes() == [("trustworthiness", True)]
        assert len(b.config_hash) == 64
        x = faces[0]["image"]
        w = b.encode(x)
        s = b.predict("trust", x)
        assert 0.0 <= s <= 1.0
        z = b.reverse("trust", w, s)
        back = b.forward("trust", z, s)
        assert max(abs(a - c) for a, c in zip(back, w)) < 1e-6
        assert math.isfinite(b.log_density("trust", w, s))
        out = b.edit("trust", x, 0.1)
        assert len(out["image"]) == side * side and out["target_score"] == min(1.0, out["original_score"] + 0.1)
        spec = b.spectrum("trust", x, -0.2, 0.2, 0.1)
        assert len(spec["images"]) == 5 and len(spec["added"]) == 4
        try:
            b.predict("age", x)
            raise AssertionError("unknown attribute accepted")
        except ValueError:
            pass

    print("python smoke test passed")


if __name__ == "__main__":
    main()
