"""
Container files for named float64 arrays (checkpoints and visual features).

Layout:

    AVDKF-CONTAINER 1\\n
    <header length in bytes>\\n
    <JSON header: {"kind": ..., "meta": {...}, "arrays": [{"name", "shape", "offset"}, ...]}>
    <raw little-endian float64 data, arrays back to back>

Offsets are relative to the start of the data section. Arrays round-trip bitwise.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"AVDKF-CONTAINER 1\n"
DTYPE = np.dtype("<f8")


class ContainerError(ValueError):
    """Malformed, truncated or mismatched container file."""


@dataclass
class Container:
    kind: str
    meta: dict = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def write_container(path: Path | str, container: Container) -> None:
    path = Path(path)
    entries = []
    offset = 0
    blobs = []
    for name, array in container.arrays.items():
        data = np.ascontiguousarray(array, dtype=DTYPE)
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps(
        {"kind": container.kind, "meta": container.meta, "arrays": entries},
        sort_keys=True,
    ).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(f"{len(header)}\n".encode())
        f.write(header)
        for blob in blobs:
            f.write(blob)
    logger.debug(f"Wrote {container.kind} container with {len(entries)} arrays to {path}")


def read_container(path: Path | str, kind: str | None = None) -> Container:
    """Reads a container, checking its kind when given."""
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()

    if not raw.startswith(MAGIC):
        raise ContainerError(f"{path}: not a container file (bad magic)")
    rest = raw[len(MAGIC) :]
    newline = rest.find(b"\n")
    if newline < 0:
        raise ContainerError(f"{path}: truncated header length")
    try:
        header_len = int(rest[:newline])
    except ValueError:
        raise ContainerError(f"{path}: malformed header length") from None
    header_start = newline + 1
    header_bytes = rest[header_start : header_start + header_len]
    if len(header_bytes) != header_len:
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(header_bytes)
        entries = header["arrays"]
        file_kind = header["kind"]
        meta = header.get("meta", {})
    except (ValueError, KeyError, TypeError) as e:
        raise ContainerError(f"{path}: malformed header ({e})") from None

    if kind is not None and file_kind != kind:
        raise ContainerError(f"{path}: expected a {kind} container, got {file_kind}")

    data = rest[header_start + header_len :]
    arrays: dict[str, np.ndarray] = {}
    for entry in entries:
        try:
            name, shape, offset = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        except (KeyError, TypeError) as e:
            raise ContainerError(f"{path}: malformed array entry ({e})") from None
        nbytes = int(np.prod(shape, dtype=np.int64)) * DTYPE.itemsize
        if offset < 0 or offset + nbytes > len(data):
            raise ContainerError(f"{path}: truncated data for array '{name}'")
        if nbytes == 0:
            arrays[name] = np.zeros(shape, dtype=DTYPE)
            continue
        arrays[name] = (
            np.frombuffer(data, dtype=DTYPE, count=nbytes // DTYPE.itemsize, offset=offset)
            .reshape(shape)
            .copy()
        )
    return Container(kind=file_kind, meta=meta, arrays=arrays)
