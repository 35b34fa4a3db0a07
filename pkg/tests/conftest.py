import json

import numpy as np
import pytest

from flexti2v.tensors import LatentVideo, write_ltn, write_ppm


@pytest.fixture
def workdir(tmp_path):
    """Temp directory with two 8x8 condition images and a base config."""
    rng = np.random.default_rng(2024)
    for name in ("cond_a.ppm", "cond_b.ppm"):
        write_ppm(rng.uniform(-1, 1, (3, 8, 8)).astype(np.float32), tmp_path / name)
    base = {
        "prompt": "a person is mixing ingredients",
        "conditions": [
            {"path": "cond_a.ppm", "position": 0, "format": "ppm"},
            {"path": "cond_b.ppm", "position": 15, "format": "ppm"},
        ],
        "estimator": "dummy",
        "output_dir": "out",
        "emit": {"frames": True, "latents": True, "metrics": True, "timing": False},
    }
    (tmp_path / "run.json").write_text(json.dumps(base))
    return tmp_path


def write_config(path, **overrides):
    doc = json.loads(path.read_text())
    doc.update(overrides)
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def oracle_workdir(tmp_path):
    """Config whose oracle target equals its own LTN conditions."""
    rng = np.random.default_rng(7)
    target = LatentVideo(rng.standard_normal((16, 4, 8, 8)).astype(np.float32))
    write_ltn(target, tmp_path / "target.ltn")
    for n, p in enumerate((0, 15)):
        write_ltn(
            LatentVideo(target.data[p : p + 1].copy()), tmp_path / f"cond_{n}.ltn"
        )
    doc = {
        "prompt": "recover the target",
        "conditions": [
            {"path": "cond_0.ltn", "position": 0, "format": "ltn"},
            {"path": "cond_1.ltn", "position": 15, "format": "ltn"},
        ],
        "estimator": "oracle:target.ltn",
        "output_dir": "out",
        "emit": {"frames": False, "latents": True, "metrics": True, "timing": False},
        "hard_replace_output": True,
    }
    (tmp_path / "run.json").write_text(json.dumps(doc))
    return tmp_path
