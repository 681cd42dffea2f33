"""Checkpoint container: one archive of named arrays plus a JSON manifest.

Layout: an 8-byte magic, a little-endian uint64 manifest length, the
manifest JSON, then the raw array payload. Arrays are little-endian,
row-major, float32 unless noted, each described in the manifest by
name, dtype, shape, and byte offset. The manifest carries a SHA-256 of
the payload; loading verifies it, so a save/load round trip is
bit-exact or fails loudly.
"""

import hashlib
import json
import struct

import numpy as np

MAGIC = b"TXWCAR1\n"


class CheckpointError(IOError):
    pass


def write_container(path, meta, arrays):
    """Write named numpy arrays plus a JSON-serializable meta block."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dtype = arr.dtype.newbyteorder("<")
        blob = arr.astype(dtype, copy=False).tobytes()
        entries.append({
            "name": name,
            "dtype": dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    manifest = {
        "format": "texweave-container",
        "version": 1,
        "meta": meta,
        "arrays": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    manifest_bytes = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(manifest_bytes)))
        f.write(manifest_bytes)
        f.write(payload)


def read_container(path):
    """Read back (meta, arrays); verifies structure and payload hash."""
    with open(path, "rb") as f:
        head = f.read(len(MAGIC))
        if head != MAGIC:
            raise CheckpointError(f"{path}: not a texweave container")
        raw_len = f.read(8)
        if len(raw_len) != 8:
            raise CheckpointError(f"{path}: truncated before manifest")
        (mlen,) = struct.unpack("<Q", raw_len)
        manifest_bytes = f.read(mlen)
        if len(manifest_bytes) != mlen:
            raise CheckpointError(f"{path}: truncated manifest")
        manifest = json.loads(manifest_bytes)
        payload = f.read()

    arrays = {}
    for entry in manifest["arrays"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise CheckpointError(
                f"{path}: truncated payload; array {entry['name']!r} "
                f"needs bytes [{lo}, {hi}) of {len(payload)}")
        arr = np.frombuffer(payload[lo:hi], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()

    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest["payload_sha256"]:
        raise CheckpointError(
            f"{path}: payload hash mismatch (corrupt checkpoint)")
    return manifest["meta"], arrays


# ---------------------------------------------------------------------------
# Model-level save/load


def model_arrays(model):
    """Flatten a model state dict into the container array namespace."""
    out = {}
    for key, tensor in model.state_dict().items():
        out["model/" + key] = tensor.detach().cpu().numpy()
    return out


def save_model_checkpoint(path, model, step=0, train_meta=None,
                          optimizer_arrays=None, rng_states=None):
    meta = {
        "kind": "texweave-checkpoint",
        "config": model.config.to_dict(),
        "resolution": model.resolution,
        "fade": model.fade,
        "step": step,
        "train": train_meta or {},
        "rng": rng_states or {},
    }
    arrays = model_arrays(model)
    if optimizer_arrays:
        arrays.update(optimizer_arrays)
    write_container(path, meta, arrays)


def load_model_checkpoint(path, map_dtype=None):
    """Rebuild a TextureModel (grown to its saved stage) from a container.

    Returns (model, meta, arrays); arrays retain the raw optimizer and
    RNG payload for the trainer's resume path.
    """
    import torch

    from .models import ModelConfig, build_model

    meta, arrays = read_container(path)
    if meta.get("kind") != "texweave-checkpoint":
        raise CheckpointError(f"{path}: container is not a model checkpoint")
    config = ModelConfig(**meta["config"])
    model = build_model(config)
    res = config.start_resolution
    while res < meta["resolution"]:
        res *= 2
        model.grow(res)
    model.fade = float(meta["fade"])

    state = model.state_dict()
    loaded = {}
    for key, tensor in state.items():
        name = "model/" + key
        if name not in arrays:
            raise CheckpointError(f"{path}: missing array {name!r}")
        arr = arrays[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: checkpoint "
                f"{tuple(arr.shape)} vs model {tuple(tensor.shape)}")
        t = torch.from_numpy(np.ascontiguousarray(arr))
        loaded[key] = t.to(tensor.dtype) if map_dtype is None \
            else t.to(map_dtype)
    model.load_state_dict(loaded)
    return model, meta, arrays
