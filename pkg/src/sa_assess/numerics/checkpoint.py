"""Versioned JSON checkpoints of named parameter arrays.

Floats are written with ``repr`` precision so a save/load round trip is
bit-exact and repeated saves of the same weights are byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

FORMAT_VERSION = 1


def checkpoint_dict(params: dict[str, np.ndarray], hyperparameters: dict[str, Any], kind: str) -> dict:
    dtypes = {str(np.asarray(a).dtype) for a in params.values()}
    dtype = dtypes.pop() if len(dtypes) == 1 else "float64"
    return {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "dtype": dtype,
        "hyperparameters": hyperparameters,
        "params": {
            name: {"shape": list(np.shape(a)), "data": [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]}
            for name, a in sorted(params.items())
        },
    }


def save_checkpoint(path, params: dict[str, np.ndarray], hyperparameters: dict[str, Any], kind: str) -> None:
    doc = checkpoint_dict(params, hyperparameters, kind)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, Any], str]:
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format_version {version!r}")
    dtype = np.dtype(doc.get("dtype", "float64"))
    params = {
        name: np.asarray(entry["data"], dtype=np.float64).astype(dtype).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    return params, doc["hyperparameters"], doc["kind"]
