"""Array container: one-line JSON manifest followed by a float32 payload.

Both checkpoint files and precomputed-embedding files use this envelope.
The manifest's array entries carry ``offset`` as an element index (not
bytes) into the payload, which is raw little-endian 32-bit floats in
row-major order.
"""

from __future__ import annotations

import json

import numpy as np

FORMAT_VERSION = 1


def write_container(path, manifest: dict, arrays: list[np.ndarray]) -> None:
    """Write manifest + concatenated arrays.

    ``manifest`` must already contain per-array entries (with offsets) in
    the same order as ``arrays``; see the writers in embeddings/encoder.
    """
    payload = (
        np.concatenate([np.ascontiguousarray(a, dtype="<f4").reshape(-1) for a in arrays])
        if arrays
        else np.zeros(0, dtype="<f4")
    )
    header = dict(manifest)
    header.setdefault("format_version", FORMAT_VERSION)
    with open(path, "wb") as f:
        f.write(json.dumps(header, ensure_ascii=False).encode("utf-8"))
        f.write(b"\n")
        f.write(payload.tobytes())


def read_container(path) -> tuple[dict, np.ndarray]:
    """Return (manifest, flat float32 payload)."""
    with open(path, "rb") as f:
        header_line = f.readline()
        manifest = json.loads(header_line.decode("utf-8"))
        payload = np.frombuffer(f.read(), dtype="<f4")
    return manifest, payload


def slice_array(payload: np.ndarray, offset: int, shape) -> np.ndarray:
    n = int(np.prod(shape)) if shape else 1
    return payload[offset : offset + n].reshape(shape).copy()
