"""Versioned .npz checkpoint container for LM and DKT parameters.

The container stores a JSON metadata block (format version, model kind,
config, vocab hash) next to the parameter arrays. Loading verifies the
format version and, when the caller supplies one, the vocabulary hash.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from ..errors import CheckpointError
from .lora import LoraAdapter
from .model import LmConfig, LmParams

FORMAT_VERSION = 1


def _atomic_savez(path, **arrays):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz.tmp")
    os.close(fd)
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def save_checkpoint(
    path,
    params: LmParams,
    vocab_hash: str,
    adapter: LoraAdapter | None = None,
    extra_meta: dict | None = None,
) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": "tiny-lm",
        "config": params.config.to_dict(),
        "vocab_hash": vocab_hash,
        "adapter": None,
        "extra": extra_meta or {},
    }
    arrays = {f"p/{k}": v for k, v in params.tensors.items()}
    if adapter is not None:
        meta["adapter"] = {"rank": adapter.rank, "alpha": adapter.alpha, "targets": sorted(adapter.matrices)}
        for name, (a, b) in adapter.matrices.items():
            arrays[f"a/{name}#A"] = a
            arrays[f"a/{name}#B"] = b
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    _atomic_savez(path, **arrays)


def load_checkpoint(path, expect_vocab_hash: str | None = None):
    """Returns (params, adapter-or-None, meta)."""
    try:
        data = np.load(path)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if "__meta__" not in data:
        raise CheckpointError(f"{path}: not a ktlab checkpoint (missing metadata)")
    meta = json.loads(bytes(data["__meta__"]).decode())
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {meta.get('format_version')!r}"
        )
    if expect_vocab_hash is not None and meta.get("vocab_hash") != expect_vocab_hash:
        raise CheckpointError(
            f"{path}: vocabulary hash mismatch (checkpoint was built for a different vocabulary)"
        )
    config = LmConfig(**meta["config"])
    tensors = {k[2:]: data[k] for k in data.files if k.startswith("p/")}
    params = LmParams(config, tensors)
    adapter = None
    if meta.get("adapter"):
        matrices = {}
        for name in meta["adapter"]["targets"]:
            matrices[name] = (data[f"a/{name}#A"], data[f"a/{name}#B"])
        adapter = LoraAdapter(
            rank=int(meta["adapter"]["rank"]),
            alpha=float(meta["adapter"]["alpha"]),
            matrices=matrices,
        )
    return params, adapter, meta


def save_array_checkpoint(path, kind: str, config: dict, arrays: dict[str, np.ndarray], extra_meta: dict | None = None) -> None:
    """Generic variant used by the DKT tracer."""
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "vocab_hash": None,
        "extra": extra_meta or {},
    }
    payload = {f"p/{k}": v for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    _atomic_savez(path, **payload)


def load_array_checkpoint(path, expect_kind: str | None = None):
    try:
        data = np.load(path)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if "__meta__" not in data:
        raise CheckpointError(f"{path}: not a ktlab checkpoint (missing metadata)")
    meta = json.loads(bytes(data["__meta__"]).decode())
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('format_version')!r}")
    if expect_kind is not None and meta.get("kind") != expect_kind:
        raise CheckpointError(f"{path}: expected a {expect_kind!r} checkpoint, found {meta.get('kind')!r}")
    arrays = {k[2:]: data[k] for k in data.files if k.startswith("p/")}
    return meta, arrays
