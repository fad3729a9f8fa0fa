"""Binary tensor container.

Layout: the magic ``b"BEATX1"`` followed by records until end of file. Each
record is ``u32 name_len | name (utf-8) | u32 rank | u32 dim * rank |
float32 payload``, all little-endian, payload row-major.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"BEATX1"


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4", order="C")  # ascontiguousarray would promote 0-d to 1-d
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a BEATX1 container (bad magic)")
    out: dict[str, np.ndarray] = {}
    pos = len(MAGIC)
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            end = pos + 4 * count
            if end > len(blob):
                raise CheckpointError(f"record {name!r} truncated")
            out[name] = np.frombuffer(blob[pos:end], dtype="<f4").reshape(dims).astype(np.float32)
            pos = end
    except struct.error as exc:
        raise CheckpointError(f"truncated record header: {exc}") from exc
    return out


def save(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def save_model(path, state: dict[str, np.ndarray], config: dict) -> None:
    save(path, state)
    sidecar_path(path).write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")


def load_model_files(path) -> tuple[dict[str, np.ndarray], dict]:
    side = sidecar_path(path)
    if not side.exists():
        raise CheckpointError(f"missing config sidecar {side}")
    return load(path), json.loads(side.read_text())
