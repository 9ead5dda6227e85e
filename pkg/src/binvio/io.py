"""On-disk formats: binary map RLE, gray frame blobs, CSV streams, manifests.

Binary maps are run-length encoded per row with little-endian u16 lengths,
alternating zero-run first, behind the magic header ``TCBM1``.  Gray frames
are a float64 timestamp followed by the raw 65536-byte row-major image.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .emulator import MAP_SIZE, BinaryMap, GrayFrame, MapKind

BINARY_MAP_MAGIC = b"TCBM1"
_KIND_CODE = {MapKind.CORNER: 0, MapKind.EDGE: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


class DatasetCorrupt(RuntimeError):
    """A dataset file failed to parse or is internally inconsistent."""


def encode_binary_map(bmap: BinaryMap) -> bytes:
    bits = bmap.bits
    flat = bits.ravel()
    # run boundaries: value changes, plus forced breaks at row starts
    change = np.nonzero(np.diff(flat.astype(np.int8)))[0] + 1
    row_starts = np.arange(1, MAP_SIZE) * MAP_SIZE
    bounds = np.unique(np.concatenate([[0], change, row_starts, [flat.size]]))
    lengths = np.diff(bounds).astype(np.uint16)
    starts = bounds[:-1]
    row_of_run = starts // MAP_SIZE
    runs_per_row = np.bincount(row_of_run, minlength=MAP_SIZE).astype(np.uint16)
    # a run of zeros is implied first; if a row starts with a one, emit a
    # zero-length zero run so parity always encodes the value
    first_vals = flat[starts]
    out = bytearray()
    out += BINARY_MAP_MAGIC
    out += struct.pack("<Bd", _KIND_CODE[bmap.kind], bmap.timestamp)
    out += struct.pack("<H", MAP_SIZE)
    idx = 0
    for r in range(MAP_SIZE):
        n = int(runs_per_row[r])
        row_lengths = lengths[idx:idx + n]
        leading_one = first_vals[idx] == 1
        idx += n
        if leading_one:
            row = np.concatenate([[0], row_lengths]).astype(np.uint16)
        else:
            row = row_lengths
        out += struct.pack("<H", len(row))
        out += row.astype("<u2").tobytes()
    return bytes(out)


def decode_binary_map(data: bytes) -> BinaryMap:
    if data[:5] != BINARY_MAP_MAGIC:
        raise DatasetCorrupt("bad binary map magic")
    kind_code, timestamp = struct.unpack_from("<Bd", data, 5)
    (nrows,) = struct.unpack_from("<H", data, 14)
    if nrows != MAP_SIZE or kind_code not in _CODE_KIND:
        raise DatasetCorrupt("bad binary map header")
    offset = 16
    all_lengths = []
    all_values = []
    for _ in range(MAP_SIZE):
        (n,) = struct.unpack_from("<H", data, offset)
        offset += 2
        row = np.frombuffer(data, dtype="<u2", count=n, offset=offset)
        offset += 2 * n
        if int(row.sum()) != MAP_SIZE:
            raise DatasetCorrupt("row runs do not sum to row width")
        all_lengths.append(row)
        all_values.append(np.arange(n) % 2)
    lengths = np.concatenate(all_lengths).astype(int)
    values = np.concatenate(all_values).astype(np.uint8)
    bits = np.repeat(values, lengths).reshape(MAP_SIZE, MAP_SIZE)
    return BinaryMap(bits, _CODE_KIND[kind_code], timestamp)


def save_binary_map(bmap: BinaryMap, path) -> None:
    Path(path).write_bytes(encode_binary_map(bmap))


def load_binary_map(path) -> BinaryMap:
    return decode_binary_map(Path(path).read_bytes())


def save_gray_frame(frame: GrayFrame, path) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<d", frame.timestamp))
        f.write(frame.pixels.tobytes())


def load_gray_frame(path) -> GrayFrame:
    data = Path(path).read_bytes()
    if len(data) != 8 + MAP_SIZE * MAP_SIZE:
        raise DatasetCorrupt(f"gray frame blob has wrong size {len(data)}")
    (timestamp,) = struct.unpack_from("<d", data, 0)
    pixels = np.frombuffer(data, dtype=np.uint8, offset=8).reshape(MAP_SIZE, MAP_SIZE)
    return GrayFrame(pixels.copy(), timestamp)


def write_imu_csv(samples, path) -> None:
    with open(path, "w") as f:
        f.write("t,wx,wy,wz,ax,ay,az\n")
        for s in samples:
            f.write(
                f"{s.t:.9f},{s.omega[0]:.9f},{s.omega[1]:.9f},{s.omega[2]:.9f},"
                f"{s.accel[0]:.9f},{s.accel[1]:.9f},{s.accel[2]:.9f}\n"
            )


def read_imu_csv(path):
    from .imu import ImuSample

    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as e:
        raise DatasetCorrupt(f"bad imu csv: {e}") from e
    return [ImuSample(row[0], row[1:4], row[4:7]) for row in data]


def write_pose_csv(rows, path, extra_header: str = "") -> None:
    """Rows of (t, position(3), quat_xyzw(4)[, extras...])."""
    with open(path, "w") as f:
        f.write("t,px,py,pz,qx,qy,qz,qw" + extra_header + "\n")
        for row in rows:
            f.write(",".join(f"{v:.9f}" for v in row) + "\n")


def read_pose_csv(path) -> np.ndarray:
    """Array with columns t, px, py, pz, qx, qy, qz, qw (extras dropped)."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (ValueError, OSError) as e:
        raise DatasetCorrupt(f"bad pose csv {path}: {e}") from e
    if data.shape[1] < 8:
        raise DatasetCorrupt(f"pose csv {path} needs 8 columns")
    return data[:, :8]


def write_manifest(entries: dict, path) -> None:
    with open(path, "w") as f:
        for k in sorted(entries):
            f.write(f"{k}={entries[k]}\n")


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DatasetCorrupt(f"bad manifest line: {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out
