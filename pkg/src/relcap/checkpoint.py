"""Checkpoint container.

Layout::

    RELCAP-CKPT <version>\\n
    <header byte length>\\n
    <JSON header>            manifest + free-form metadata
    <payload>                little-endian raw arrays, back to back

Each manifest entry records ``name``, ``section``, ``shape``, ``dtype``,
``offset`` and ``nbytes`` (offset relative to the start of the payload).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = "RELCAP-CKPT"
FORMAT_VERSION = 1

_DTYPES = {"f8": "<f8", "f4": "<f4", "i8": "<i8", "i4": "<i4"}


class CheckpointError(ValueError):
    pass


def _dtype_code(arr: np.ndarray) -> str:
    code = f"{arr.dtype.kind}{arr.dtype.itemsize}"
    if code not in _DTYPES:
        raise CheckpointError(f"unsupported dtype {arr.dtype}")
    return code


def save(
    path: str | Path,
    arrays: Mapping[str, np.ndarray],
    sections: Mapping[str, str] | None = None,
    metadata: Mapping[str, Any] | None = None,
) -> None:
    """Write ``arrays`` (name -> array) with optional per-name section tags."""
    sections = sections or {}
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append(
            {
                "name": name,
                "section": sections.get(name, "model"),
                "shape": list(arr.shape),
                "dtype": code,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"version": FORMAT_VERSION, "tensors": entries, "metadata": dict(metadata or {})},
        indent=1,
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {FORMAT_VERSION}\n{len(header)}\n".encode("ascii"))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load(path: str | Path, section: str | None = None) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read a container; returns ``(arrays, metadata)``.

    With ``section`` set, only tensors carrying that tag are returned.
    """
    blob = Path(path).read_bytes()
    first = blob.find(b"\n")
    second = blob.find(b"\n", first + 1)
    if first < 0 or second < 0:
        raise CheckpointError(f"{path}: truncated header")
    magic, _, version = blob[:first].decode("ascii", "replace").partition(" ")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if int(version) != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    hlen = int(blob[first + 1 : second])
    start = second + 1
    header = json.loads(blob[start : start + hlen].decode("utf-8"))
    payload = memoryview(blob)[start + hlen :]
    arrays = {}
    for e in header["tensors"]:
        if section is not None and e["section"] != section:
            continue
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"{path}: payload for {e['name']} truncated")
        arr = np.frombuffer(payload[e["offset"] : end], dtype=_DTYPES[e["dtype"]])
        arrays[e["name"]] = arr.reshape(e["shape"]).copy()
    return arrays, header.get("metadata", {})


def sections_of(path: str | Path) -> dict[str, str]:
    blob = Path(path).read_bytes()
    first = blob.find(b"\n")
    second = blob.find(b"\n", first + 1)
    hlen = int(blob[first + 1 : second])
    header = json.loads(blob[second + 1 : second + 1 + hlen].decode("utf-8"))
    return {e["name"]: e["section"] for e in header["tensors"]}
