import json

import numpy as np
import pytest

from spectrascan import tensor_io


def make_run(tmp_path, steps, layer_matrices, run_id="toy", d_model=8, n_heads=2):
    """Write a CUSTOM-scheme checkpoint tree.

    layer_matrices: step -> {(layer, type_label): 2-D array}.
    Returns (root, manifest_path).
    """
    layers = 1 + max(l for per_step in layer_matrices.values() for (l, _) in per_step)
    root = tmp_path / "ckpt"
    root.mkdir(exist_ok=True)
    names = {
        "Q": "attn.q_proj",
        "K": "attn.k_proj",
        "V": "attn.v_proj",
        "O": "attn.o_proj",
        "MLP_UP": "mlp.up_proj",
        "MLP_DOWN": "mlp.down_proj",
    }
    for step in steps:
        d = root / f"step_{step}"
        d.mkdir(exist_ok=True)
        for (layer, label), mat in layer_matrices[step].items():
            tensor_io.write_npy(d / f"layers.{layer}.{names[label]}.weight.npy", mat, "<f8")
    manifest = {
        "run_id": run_id,
        "layers": layers,
        "d_model": d_model,
        "n_heads": n_heads,
        "scheme": "CUSTOM",
        "svd_interval": 0,
    }
    mpath = tmp_path / "run.json"
    mpath.write_text(json.dumps(manifest))
    return root, mpath


def diag_matrix(values, rows=None, cols=None):
    values = np.asarray(values, dtype=np.float64)
    k = values.size
    rows = rows or k
    cols = cols or k
    m = np.zeros((rows, cols))
    m[np.arange(k), np.arange(k)] = values
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
