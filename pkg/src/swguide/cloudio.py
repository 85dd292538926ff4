"""Point cloud serialization.

Binary layout (little-endian)::

    b"SWPC"  u32 n  u32 d  then n*d float64 values, row-major

CSV holds one point per line with full ``repr`` precision, so both formats
round-trip exactly.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import CorruptHeaderError, UnreadableFileError, UnsupportedFormatError
from .ot_core import as_cloud

MAGIC = b"SWPC"
_HEADER = struct.Struct("<4sII")


def write_swpc(path, points):
    pts = np.ascontiguousarray(as_cloud(points), dtype="<f8")
    n, d = pts.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, d))
        fh.write(pts.tobytes())


def read_swpc(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise CorruptHeaderError(f"{path}: missing SWPC header")
    _, n, d = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size:]
    if len(body) != 8 * n * d:
        raise CorruptHeaderError(
            f"{path}: header announces {n}x{d} values but body holds {len(body) // 8}"
        )
    pts = np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)
    return as_cloud(pts, str(path))


def write_csv(path, points):
    pts = as_cloud(points)
    with open(path, "w") as fh:
        for row in pts:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    rows = [line for line in text.splitlines() if line.strip() and not line.startswith("#")]
    try:
        pts = np.array([[float(v) for v in line.split(",")] for line in rows])
    except ValueError as exc:
        raise CorruptHeaderError(f"{path}: malformed CSV row ({exc})") from exc
    return as_cloud(pts, str(path))


def load_cloud(path):
    """Load a cloud by sniffing the SWPC magic, falling back to CSV for ``.csv``."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    if head == MAGIC:
        return read_swpc(path)
    if path.suffix.lower() == ".csv":
        return read_csv(path)
    raise UnsupportedFormatError(f"{path}: not an SWPC or CSV point cloud")


def save_cloud(path, points):
    if Path(path).suffix.lower() == ".csv":
        write_csv(path, points)
    else:
        write_swpc(path, points)
