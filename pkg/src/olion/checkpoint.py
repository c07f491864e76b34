"""Versioned checkpoints: ``manifest.json`` plus a raw ``payload.bin``.

Layout (version 1)
------------------
A checkpoint is a directory holding two files.

``payload.bin``
    Concatenated little-endian float64 arrays, no header.  For each block in
    manifest order: X (parameters), then M (momentum), then V (second moment,
    only when ``has_v`` is true), each row-major with ``rows * cols`` entries.

``manifest.json``
    UTF-8 JSON with sorted keys and 2-space indent::

        {"format": "olion-checkpoint", "version": 1,
         "step": <next step index>, "optimizer_step_count": <int>,
         "config": <canonical run config>,
         "blocks": [{"name", "rows", "cols", "has_v", "state_step",
                     "offset": <first float index>}],
         "payload": {"file": "payload.bin", "bytes": <int>, "sha256": <hex>},
         "extra": {...}}

Floats in the manifest use Python's shortest round-trip repr, so
save -> load -> save reproduces both files byte for byte.
"""

import hashlib
import json
import os

import numpy as np

from .errors import CorruptCheckpoint, VersionMismatch
from .optimizers import BlockState, OptimizerState

FORMAT = "olion-checkpoint"
VERSION = 1
_DTYPE = np.dtype("<f8")


def save_checkpoint(path, step, params, opt_state, config, extra=None):
    os.makedirs(path, exist_ok=True)
    chunks = []
    blocks = []
    offset = 0
    for name, X in params.items():
        X = np.asarray(X, dtype=np.float64)
        st = opt_state.blocks.get(name) or BlockState.zeros(X.shape)
        arrays = [X, st.m] + ([st.v] if st.v is not None else [])
        blocks.append({
            "name": name,
            "rows": int(X.shape[0]),
            "cols": int(X.shape[1]),
            "has_v": st.v is not None,
            "state_step": int(st.step),
            "offset": offset,
        })
        for a in arrays:
            chunks.append(np.ascontiguousarray(a, dtype=_DTYPE).tobytes())
            offset += a.size
    payload = b"".join(chunks)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "step": int(step),
        "optimizer_step_count": int(opt_state.step_count),
        "config": config,
        "blocks": blocks,
        "payload": {"file": "payload.bin", "bytes": len(payload),
                    "sha256": hashlib.sha256(payload).hexdigest()},
        "extra": extra or {},
    }
    with open(os.path.join(path, "payload.bin"), "wb") as fh:
        fh.write(payload)
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path):
    """Return ``(manifest, params, OptimizerState)``."""
    try:
        with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read manifest in {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CorruptCheckpoint(f"not an {FORMAT} manifest")
    if manifest.get("version") != VERSION:
        raise VersionMismatch(f"checkpoint version {manifest.get('version')} != supported {VERSION}")
    try:
        with open(os.path.join(path, manifest["payload"]["file"]), "rb") as fh:
            payload = fh.read()
    except (OSError, KeyError) as exc:
        raise CorruptCheckpoint(f"cannot read payload: {exc}") from exc
    if len(payload) != manifest["payload"]["bytes"] or \
            hashlib.sha256(payload).hexdigest() != manifest["payload"]["sha256"]:
        raise CorruptCheckpoint("payload checksum mismatch")
    flat = np.frombuffer(payload, dtype=_DTYPE).astype(np.float64)
    params = {}
    state = OptimizerState(step_count=int(manifest["optimizer_step_count"]))
    for b in manifest["blocks"]:
        shape = (b["rows"], b["cols"])
        n = shape[0] * shape[1]
        pos = b["offset"]
        X = flat[pos:pos + n].reshape(shape).copy()
        M = flat[pos + n:pos + 2 * n].reshape(shape).copy()
        V = flat[pos + 2 * n:pos + 3 * n].reshape(shape).copy() if b["has_v"] else None
        params[b["name"]] = X
        state.blocks[b["name"]] = BlockState(M, V, int(b["state_step"]))
    return manifest, params, state
