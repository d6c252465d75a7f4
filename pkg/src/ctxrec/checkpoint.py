"""Bit-exact checkpoint container.

A checkpoint is a directory with two files:

  manifest.json  format version, model-config echo, domain ids, dtype,
                 ordered entries [{name, shape, offset}] (offsets in bytes,
                 names in lexicographic order), and the sha256 of the blob
  params.bin     raw little-endian float array, entries concatenated in
                 manifest order

Round-tripping a store through save/load is bitwise identity; equal
checkpoints have equal blob hashes, which is what the transfer semantics
tests diff.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ParameterStore
from .errors import ConfigError, TransferError
from .model import ModelConfig, Recommender

FORMAT_VERSION = 1
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


@dataclass
class Checkpoint:
    config: dict
    domains: list
    arrays: dict  # name -> ndarray
    dtype: str
    blob_sha256: str

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.arrays if n.startswith(prefix)]


def save_checkpoint(store: ParameterStore, path, config: dict, domains) -> str:
    """Write store contents; returns the blob hash."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = sorted(store.names())
    if not names:
        raise ConfigError("refusing to write an empty checkpoint")
    dtype = store[names[0]].tensor.dtype
    code = {np.dtype("float32"): "f4", np.dtype("float64"): "f8"}[dtype]
    le = _DTYPES[code]

    entries = []
    blob = bytearray()
    for name in names:
        arr = store[name].tensor.astype(le, copy=False)  # 0-d scalar shapes survive
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(blob)})
        blob.extend(arr.tobytes(order="C"))
    digest = hashlib.sha256(bytes(blob)).hexdigest()

    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": code,
        "config": config,
        "domains": sorted(domains),
        "entries": entries,
        "blob_sha256": digest,
    }
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    with open(path / "params.bin", "wb") as fh:
        fh.write(bytes(blob))
    return digest


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format {manifest.get('format_version')}")
    dtype = _DTYPES[manifest["dtype"]]
    blob = (path / "params.bin").read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["blob_sha256"]:
        raise ConfigError("checkpoint blob hash mismatch; file corrupted")
    arrays = {}
    for e in manifest["entries"]:
        size = int(np.prod(e["shape"])) if e["shape"] else 1
        flat = np.frombuffer(blob, dtype=dtype, count=size, offset=e["offset"])
        arrays[e["name"]] = flat.reshape(e["shape"]).copy()
    return Checkpoint(
        config=manifest["config"],
        domains=manifest["domains"],
        arrays=arrays,
        dtype=manifest["dtype"],
        blob_sha256=digest,
    )


def checkpoint_hash(path) -> str:
    return hashlib.sha256((Path(path) / "params.bin").read_bytes()).hexdigest()


def save_model(model: Recommender, path) -> str:
    return save_checkpoint(model.store, path, model.config.to_dict(),
                           sorted(model.domains))


def restore_model(ckpt: Checkpoint | str | Path) -> Recommender:
    """Rebuild a Recommender (embeddings, adapters, regularizers) from disk."""
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    config = ModelConfig.from_dict(ckpt.config)
    model = Recommender(config)
    for dom in ckpt.domains:
        users = ckpt.arrays.get(f"m2.{dom}.users")
        items = ckpt.arrays.get(f"m2.{dom}.items")
        if users is None or items is None:
            raise TransferError(f"checkpoint lacks embedding tables for domain {dom!r}")
        model.add_domain(dom, users.shape[0], items.shape[0])
    for name, arr in ckpt.arrays.items():
        if name in model.store:
            if model.store[name].tensor.shape != arr.shape:
                raise TransferError(
                    f"checkpoint entry {name} has shape {arr.shape}, "
                    f"model expects {model.store[name].tensor.shape}"
                )
            np.copyto(model.store[name].tensor, arr.astype(model.store[name].tensor.dtype))
        else:
            model.store.add(name, arr)  # adapters, regularizers, extra domains
    return model
