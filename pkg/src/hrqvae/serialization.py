"""Versioned JSON documents holding named numeric arrays.

Floats are written with 17 significant digits so every finite double
round-trips exactly. Output is deterministic: keys are sorted and arrays are
row-major.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .exceptions import FormatError, InputError

FORMAT_NAME = "hrqvae-arrays"
FORMAT_VERSION = 1

__all__ = [
    "FORMAT_NAME",
    "FORMAT_VERSION",
    "dumps_arrays",
    "loads_arrays",
    "save_arrays",
    "load_arrays",
    "save_codebook",
    "load_codebook",
    "CHECKPOINT_VERSION",
    "dumps_checkpoint",
    "loads_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


def _format_float(x):
    return "%.17g" % x


def _encode_array(arr):
    arr = np.asarray(arr)
    if arr.dtype.kind in "iub":
        dtype = "int64"
        body = ", ".join(str(int(v)) for v in arr.ravel())
    else:
        arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise InputError("only finite values can be serialized")
        dtype = "float64"
        body = ", ".join(_format_float(v) for v in arr.ravel())
    shape = json.dumps(list(arr.shape))
    return f'{{"dtype": "{dtype}", "shape": {shape}, "data": [{body}]}}'


def dumps_arrays(kind, arrays, meta=None):
    """Serialize ``arrays`` (name -> ndarray) and JSON-able ``meta`` to text."""
    lines = [
        "{",
        f'  "format": "{FORMAT_NAME}",',
        f'  "version": {FORMAT_VERSION},',
        f'  "kind": {json.dumps(kind)},',
        f'  "meta": {json.dumps(meta or {}, sort_keys=True)},',
        '  "arrays": {',
    ]
    names = sorted(arrays)
    for i, name in enumerate(names):
        sep = "," if i < len(names) - 1 else ""
        lines.append(f"    {json.dumps(name)}: {_encode_array(arrays[name])}{sep}")
    lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


def loads_arrays(text, kind=None):
    """Parse a document; returns ``(kind, arrays, meta)``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"not a valid array document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise FormatError("missing or unknown format tag")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {doc.get('version')!r}")
    if kind is not None and doc.get("kind") != kind:
        raise FormatError(f"expected a {kind!r} document, got {doc.get('kind')!r}")
    arrays = {}
    for name, entry in doc["arrays"].items():
        dtype = np.int64 if entry["dtype"] == "int64" else np.float64
        data = np.array(entry["data"], dtype=dtype)
        arrays[name] = data.reshape(entry["shape"])
    return doc["kind"], arrays, doc.get("meta", {})


def save_arrays(path, kind, arrays, meta=None):
    Path(path).write_text(dumps_arrays(kind, arrays, meta), encoding="utf-8")


def load_arrays(path, kind=None):
    return loads_arrays(Path(path).read_text(encoding="utf-8"), kind)


def save_codebook(path, codebook):
    meta = {
        "depth": codebook.depth,
        "codes_per_level": codebook.codes_per_level,
        "dim": codebook.dim,
    }
    save_arrays(path, "codebook", {"embeddings": codebook.embeddings}, meta)


def load_codebook(path):
    from .quantizer import Codebook

    _, arrays, meta = load_arrays(path, "codebook")
    cb = Codebook(arrays["embeddings"])
    if (cb.depth, cb.codes_per_level, cb.dim) != (meta["depth"], meta["codes_per_level"], meta["dim"]):
        raise FormatError("codebook header disagrees with embedding shape")
    return cb


def dumps_checkpoint(result):
    """Text form of a :class:`~hrqvae.model.TrainResult` (history excluded)."""
    adam = result.adam
    arrays = {f"param/{k}": v for k, v in result.params.arrays.items()}
    arrays.update({f"adam_m/{k}": v for k, v in adam.first_moment.items()})
    arrays.update({f"adam_v/{k}": v for k, v in adam.second_moment.items()})
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": result.params.config.to_dict(),
        "step": int(result.step),
        "adam": {
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
            "step_count": adam.step_count,
        },
    }
    return dumps_arrays("checkpoint", arrays, meta)


def loads_checkpoint(text):
    from .autodiff import AdamState
    from .model import ModelParams, TrainConfig, TrainResult

    _, arrays, meta = loads_arrays(text, "checkpoint")
    version = meta.get("checkpoint_version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version!r}")
    try:
        config = TrainConfig.from_dict(meta["config"])
        step = int(meta["step"])
        adam_meta = meta["adam"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"checkpoint header is incomplete: {exc}") from exc

    def group(prefix):
        return {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}

    params = ModelParams(config, group("param/"))
    adam = AdamState(
        first_moment=group("adam_m/"),
        second_moment=group("adam_v/"),
        **adam_meta,
    )
    return TrainResult(params, [], adam, step)


def save_checkpoint(path, result):
    Path(path).write_text(dumps_checkpoint(result), encoding="utf-8")


def load_checkpoint(path):
    return loads_checkpoint(Path(path).read_text(encoding="utf-8"))
