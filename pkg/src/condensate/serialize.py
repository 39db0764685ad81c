"""ParameterSet on disk.

Binary layout: the arrays of every layer in order ``W_0, b_0, W_1, b_1, ...``
(absent biases skipped), each row-major, written as little-endian float64 with
no header.  A JSON sidecar ``<name>.json`` next to ``<name>.bin`` records the
layer shapes and, when known, the network config.
"""

import json
from pathlib import Path

import numpy as np

from .nn import NetworkConfig, ParameterSet


def sidecar_path(bin_path) -> Path:
    return Path(bin_path).with_suffix(".json")


def save_params(bin_path, params: ParameterSet, config: NetworkConfig = None, extra=None):
    bin_path = Path(bin_path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    params.flatten().astype("<f8").tofile(bin_path)
    meta = {
        "format": "float64-le",
        "layers": [
            {"weight": list(w.shape), "bias": None if b is None else list(b.shape)}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    if config is not None:
        meta["config"] = config.to_dict()
    if extra:
        meta.update(extra)
    sidecar_path(bin_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return bin_path


def load_params(bin_path):
    """Returns (params, config or None, metadata dict)."""
    bin_path = Path(bin_path)
    meta = json.loads(sidecar_path(bin_path).read_text())
    flat = np.fromfile(bin_path, dtype="<f8").astype(np.float64)
    weights, biases = [], []
    pos = 0
    for layer in meta["layers"]:
        shape = tuple(layer["weight"])
        size = int(np.prod(shape))
        weights.append(flat[pos:pos + size].reshape(shape))
        pos += size
        if layer["bias"] is None:
            biases.append(None)
        else:
            size = int(np.prod(layer["bias"]))
            biases.append(flat[pos:pos + size].copy())
            pos += size
    if pos != flat.size:
        raise ValueError(f"{bin_path}: {flat.size} values on disk, sidecar describes {pos}")
    params = ParameterSet(weights, biases)
    config = NetworkConfig.from_dict(meta["config"]) if "config" in meta else None
    if config is not None:
        params.check(config)
    return params, config, meta


def write_matrix_csv(path, matrix, header=None, fmt="%.17g"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w", newline="\n") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in matrix:
            fh.write(",".join(fmt % v for v in row) + "\n")
    return path


def read_matrix_csv(path) -> np.ndarray:
    """Read a numeric CSV (one row per neuron); a non-numeric first line is skipped as a header."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty CSV")
    try:
        [float(v) for v in lines[0].split(",")]
    except ValueError:
        lines = lines[1:]
    rows = [[float(v) for v in ln.split(",")] for ln in lines]
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged rows")
    return np.array(rows, dtype=np.float64)


def export_params_csv(directory, params: ParameterSet, prefix="layer"):
    """One CSV per matrix: ``layer{i}_weight.csv`` and ``layer{i}_bias.csv``."""
    directory = Path(directory)
    paths = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        paths.append(write_matrix_csv(directory / f"{prefix}{i}_weight.csv", w))
        if b is not None:
            paths.append(write_matrix_csv(directory / f"{prefix}{i}_bias.csv", b[:, None]))
    return paths
