"""Binary field snapshots.

Layout (little endian): b"TCF1", u16 version, u16 m, u32 n_axis, then the
field as n_axis^(2m) float64 values in row-major order.
"""
import os
import struct

import numpy as np

from .errors import DataValidityError

MAGIC = b"TCF1"
VERSION = 1
_HEADER = struct.Struct("<4sHHI")


def encode(phi, m):
    phi = np.asarray(phi)
    n_axis = phi.shape[0]
    if phi.ndim != 2 * m or any(d != n_axis for d in phi.shape):
        raise DataValidityError(f"field of shape {phi.shape} is not a 2m={2 * m} cube")
    if phi.dtype != np.float64 and not np.can_cast(phi.dtype, np.float64, "safe"):
        raise DataValidityError(f"field dtype {phi.dtype} cannot be stored as float64")
    payload = np.ascontiguousarray(phi, dtype="<f8").tobytes(order="C")
    return _HEADER.pack(MAGIC, VERSION, m, n_axis) + payload


def decode(data):
    """(phi, m) from snapshot bytes."""
    if len(data) < _HEADER.size:
        raise DataValidityError("snapshot shorter than its header")
    magic, version, m, n_axis = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataValidityError(f"bad snapshot magic {magic!r}")
    if version != VERSION:
        raise DataValidityError(f"unsupported snapshot version {version}")
    if m not in (1, 2) or n_axis < 1:
        raise DataValidityError(f"bad snapshot header m={m} n_axis={n_axis}")
    count = n_axis ** (2 * m)
    if len(data) - _HEADER.size != 8 * count:
        raise DataValidityError(
            f"payload holds {len(data) - _HEADER.size} bytes, expected {8 * count}")
    phi = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape((n_axis,) * (2 * m))
    return phi.astype(np.float64), m


def write(path, phi, m):
    data = encode(phi, m)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
