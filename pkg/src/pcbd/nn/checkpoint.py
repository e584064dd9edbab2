"""Shared checkpoint format.

Layout: the magic line b"PCBD1", a length-prefixed JSON metadata block
(architecture id, array names and shapes, rng seed, epoch, free-form
extras), then the raw little-endian float64 arrays concatenated in the
declared order.  Writing is byte-deterministic for identical contents.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"PCBD1\n"


def save_checkpoint(
    path,
    architecture: str,
    arrays: dict[str, np.ndarray],
    rng_seed: int | None = None,
    epoch: int | None = None,
    extra: dict | None = None,
) -> None:
    meta = {
        "architecture": architecture,
        "arrays": [
            {"name": name, "shape": list(np.asarray(a).shape)}
            for name, a in arrays.items()
        ],
        "rng_seed": rng_seed,
        "epoch": epoch,
        "extra": extra or {},
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"meta {len(blob)}\n".encode("ascii"))
        fh.write(blob)
        fh.write(b"\n")
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray], dict]:
    """Returns (architecture, arrays, metadata)."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ParseError(f"{path}: not a PCBD1 checkpoint")
        header = fh.readline().decode("ascii").split()
        if len(header) != 2 or header[0] != "meta":
            raise ParseError(f"{path}: malformed metadata header")
        meta = json.loads(fh.read(int(header[1])).decode("ascii"))
        if fh.read(1) != b"\n":
            raise ParseError(f"{path}: missing metadata terminator")
        arrays = {}
        for spec in meta["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ParseError(f"{path}: truncated array {spec['name']!r}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return meta["architecture"], arrays, meta
