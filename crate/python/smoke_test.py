"""Smoke test for the Python bindings.

Build first with `cargo build -p segan-py` (or `maturin develop` with the
`extension-module` feature), then run `python python/smoke_test.py`.
Set SEGAN_PY_LIB to point at a specific shared library.
"""

import json
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_segan():
    try:
        import segan_py  # installed wheel

        return segan_py
    except ImportError:
        pass
    candidates = [os.environ.get("SEGAN_PY_LIB")] + [
        ROOT / "target" / profile / "libsegan_py.so" for profile in ("release", "debug")
    ]
    lib = next((Path(c) for c in candidates if c and Path(c).exists()), None)
    if lib is None:
        sys.exit("libsegan_py.so not found; run `cargo build -p segan-py` first")
    tmp = Path(tempfile.mkdtemp())
    shutil.copy(lib, tmp / "segan_py.so")
    sys.path.insert(0, str(tmp))
    import segan_py

    return segan_py


def main():
    sg = import_segan()
    print("segan_py", sg.__version__)

    rep = sg.iou([0, 0, 1, 1], [0, 1, 1, 1], 2)
    assert rep["per_class_iou"] == [0.5, 2 / 3], rep
    assert math.isclose(rep["miou"], (0.5 + 2 / 3) / 2)
    assert sg.stability_index([0.5] * 15) == 0.0

    unit = {"s": [1] * 5, "b": [1] * 5, "rho": [1] * 5, "w": 2, "x_norm": 1, "epsilon": 1}
    b = sg.bound_report(json.dumps(unit))
    assert math.isclose(b["log_cover"], 125 * math.log(8), rel_tol=1e-12), b
    assert sg.bound_report(json.dumps(unit), "proof-final-line")["log_cover"] < b["log_cover"]

    with tempfile.TemporaryDirectory() as d:
        data = Path(d) / "data"
        cfg = {"height": 32, "width": 32, "n_source": 8, "n_target": 8}
        sev = sg.generate_dataset(str(data), seed=1, config_json=json.dumps(cfg))
        assert sev["appearance_gap"] > 0
        info = sg.dataset_info(str(data))
        assert (info["n_source"], info["classes"]) == (8, 4), info

        ckpt = Path(d) / "run.sgck"
        train_cfg = json.dumps({"maxiter": 12, "eval_interval": 4, "eval_images": 4})
        r = sg.train(str(data), "at", config_json=train_cfg, checkpoint=str(ckpt))
        assert len(r["miou_curve"]) == 3 and 0 <= r["metrics"]["miou"] <= 1
        again = sg.evaluate(str(ckpt), str(data))
        assert again == r["metrics"], (again, r["metrics"])

        try:
            sg.train(str(data), "nope")
        except ValueError as e:
            assert "nope" in str(e)
        else:
            raise AssertionError("unknown mode accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
