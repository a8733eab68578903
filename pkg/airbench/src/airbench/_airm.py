"""Reader/writer for the AIRM binary map format.

Format: 8-byte magic ``AIRMAP01``, u32 height, u32 width (little endian),
then height*width float32 values row-major.  This is an interchange format
of the engine, re-implemented here so the bindings never import it.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"AIRMAP01"


def write_airm(grid, path) -> None:
    arr = np.ascontiguousarray(np.asarray(grid, dtype=np.float64))
    if arr.ndim != 2:
        raise ValueError(f"AIRM grids are 2-D, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(arr.astype("<f4").tobytes(order="C"))


def read_airm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MAGIC:
        raise ValueError(f"{path}: not an AIRM file")
    h, w = struct.unpack("<II", data[8:16])
    if len(data) != 16 + 4 * h * w:
        raise ValueError(f"{path}: wrong payload size")
    return np.frombuffer(data[16:], dtype="<f4").reshape(h, w).astype(np.float64)
