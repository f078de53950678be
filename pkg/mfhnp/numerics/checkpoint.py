"""Byte-deterministic container for parameter arrays.

Layout: magic line, header length line, JSON header (sorted keys), then
every array as raw little-endian float64 in declaration order. Identical
content always produces identical bytes.
"""

import json
import logging

import numpy as np

from typing import List, Sequence, Tuple

from ..exceptions import DatasetFormatError
from ..helpers import atomic_write_bytes
from .constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .mlp import Mlp


def checkpoint_bytes(header: dict, arrays: Sequence[np.ndarray]) -> bytes:
    arrays = [np.ascontiguousarray(a, dtype="<f8") for a in arrays]
    meta = {"version": CHECKPOINT_VERSION, "header": header, "shapes": [list(a.shape) for a in arrays]}
    head = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(a.tobytes() for a in arrays)
    return CHECKPOINT_MAGIC + f"{len(head)}\n".encode("ascii") + head + payload


def parse_checkpoint(data: bytes) -> Tuple[dict, List[np.ndarray]]:
    if not data.startswith(CHECKPOINT_MAGIC):
        raise DatasetFormatError("not an mfhnp checkpoint")
    rest = data[len(CHECKPOINT_MAGIC) :]
    length_line, sep, rest = rest.partition(b"\n")
    try:
        head_length = int(length_line)
        meta = json.loads(rest[:head_length].decode("utf-8"))
    except ValueError as e:
        raise DatasetFormatError(f"unreadable checkpoint header: {e}")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise DatasetFormatError(f"checkpoint version {meta.get('version')} is not {CHECKPOINT_VERSION}")
    payload = rest[head_length:]
    arrays, offset = [], 0
    for shape in meta["shapes"]:
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + n_bytes > len(payload):
            raise DatasetFormatError("checkpoint payload is truncated")
        arrays.append(np.frombuffer(payload[offset : offset + n_bytes], dtype="<f8").reshape(shape).astype(np.float64))
        offset += n_bytes
    if offset != len(payload):
        raise DatasetFormatError(f"checkpoint has {len(payload) - offset} trailing bytes")
    return meta["header"], arrays


def write_checkpoint(path: str, header: dict, arrays: Sequence[np.ndarray]) -> None:
    atomic_write_bytes(path, checkpoint_bytes(header, arrays))
    logging.info(f"wrote checkpoint with {len(arrays)} arrays to {path}")


def read_checkpoint(path: str) -> Tuple[dict, List[np.ndarray]]:
    with open(path, "rb") as fp:
        return parse_checkpoint(fp.read())


def write_mlp(path: str, mlp: Mlp) -> None:
    """Persist one network: layer dims, activation and parameters in declaration order."""
    write_checkpoint(path, {"mlp": mlp.header()}, [p.value for p in mlp.parameters()])


def read_mlp(path: str) -> Mlp:
    header, arrays = read_checkpoint(path)
    if "mlp" not in header:
        raise DatasetFormatError(f"{path} does not hold a single network")
    return Mlp.from_arrays(header["mlp"], arrays)
