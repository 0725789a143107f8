"""Checkpoint container: spec JSON + named weight arrays in one .npz file.

Layout (format tag ``mfseg-checkpoint-v1``):
  __format__   tag string
  __spec__     ModelSpec as JSON
  param.<name> parameter arrays
  buffer.<name> batch-norm running statistics
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_TAG = "mfseg-checkpoint-v1"


def save_checkpoint(model, path: str | Path) -> Path:
    path = Path(path)
    arrays = {f"param.{k}": t.data for k, t in model.parameters().items()}
    arrays.update({f"buffer.{k}": v for k, v in model.buffers().items()})
    with open(path, "wb") as fh:
        np.savez(fh, __format__=np.array(FORMAT_TAG),
                 __spec__=np.array(json.dumps(model.spec.to_dict(), sort_keys=True)), **arrays)
    return path


def load_checkpoint(path: str | Path):
    """Rebuild the model from its spec and restore every array."""
    from . import ModelSpec, build_model

    with np.load(Path(path)) as data:
        tag = str(data["__format__"])
        if tag != FORMAT_TAG:
            raise ValueError(f"unsupported checkpoint format {tag!r} (expected {FORMAT_TAG!r})")
        spec = ModelSpec.from_dict(json.loads(str(data["__spec__"])))
        model = build_model(spec)
        params = model.parameters()
        buffers = model.buffers()
        for key in data.files:
            if key.startswith("param."):
                name = key[len("param."):]
                if name not in params:
                    raise ValueError(f"checkpoint parameter {name!r} not present in rebuilt model")
                if params[name].data.shape != data[key].shape:
                    raise ValueError(f"checkpoint parameter {name!r} has shape {data[key].shape}, "
                                     f"model expects {params[name].data.shape}")
                params[name].data = data[key].copy()
            elif key.startswith("buffer."):
                name = key[len("buffer."):]
                if name not in buffers:
                    raise ValueError(f"checkpoint buffer {name!r} not present in rebuilt model")
                buffers[name][...] = data[key]
    return model


def load_named_arrays(model, path: str | Path, prefix: str = "encoder.") -> int:
    """Optional weight-loading hook: copy matching ``param.<name>`` arrays.

    Intended for injecting externally trained backbone weights; absent by
    default everywhere. Returns the number of arrays loaded.
    """
    params = model.parameters()
    loaded = 0
    with np.load(Path(path)) as data:
        for key in data.files:
            if not key.startswith("param."):
                continue
            name = key[len("param."):]
            if name.startswith(prefix) and name in params:
                if params[name].data.shape != data[key].shape:
                    raise ValueError(f"array {name!r} shape mismatch: "
                                     f"{data[key].shape} vs {params[name].data.shape}")
                params[name].data = data[key].copy()
                loaded += 1
    return loaded
