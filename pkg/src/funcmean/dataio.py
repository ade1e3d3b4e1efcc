"""Binary dataset files, raw-payload ingest and image export.

Dataset container layout (all integers little-endian):

    magic   b"FMDS"
    u32     format version (currently 1)
    u32     d, number of grid axes
    u32[d]  axis sizes N_1..N_d
    u64     n, number of subjects
    u32     metadata byte length
    bytes   metadata, UTF-8 "key=value" lines
    u32     CRC-32 of every byte above
    f64[n*N] payload, little-endian, subject-major: subject i occupies
             one contiguous block of N values in grid linear order

The payload length is checked byte-exactly against n and the axis sizes
on every read.  Ingest streams the payload, so files larger than memory
are fine.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import ConfigError, DataFormatError
from .grid import Grid, build_grid
from .simulate import FunctionalDataset

__all__ = [
    "write_dataset",
    "read_dataset",
    "ingest_raw",
    "export_pgm",
]

_MAGIC = b"FMDS"
_VERSION = 1
_CHUNK = 8 << 20  # ingest copy block, bytes
_MMAP_THRESHOLD = 256 << 20  # payloads above this are memory-mapped


def _encode_meta(meta: dict) -> bytes:
    lines = []
    for key in sorted(meta):
        val = str(meta[key])
        if "=" in key or "\n" in key or "\n" in val:
            raise ConfigError(f"metadata key/value not encodable: {key!r}")
        lines.append(f"{key}={val}\n")
    return "".join(lines).encode("utf-8")


def _decode_meta(raw: bytes) -> dict:
    meta = {}
    text = raw.decode("utf-8")
    for line in text.splitlines():
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise DataFormatError(f"malformed metadata line {line!r}")
        meta[key] = val
    return meta


def _pack_header(dims, n: int, meta: dict) -> bytes:
    meta_raw = _encode_meta(meta)
    head = struct.pack("<4sII", _MAGIC, _VERSION, len(dims))
    head += struct.pack(f"<{len(dims)}I", *dims)
    head += struct.pack("<QI", n, len(meta_raw))
    head += meta_raw
    head += struct.pack("<I", zlib.crc32(head))
    return head


def write_dataset(path, dataset: FunctionalDataset) -> None:
    """Write a dataset to the binary container."""
    grid = dataset.grid
    n = dataset.n_subjects
    with open(path, "wb") as fh:
        fh.write(_pack_header(grid.dims, n, dataset.meta))
        fh.write(np.ascontiguousarray(dataset.values, dtype="<f8").tobytes())


def _read_header(fh, path):
    fixed = fh.read(12)
    if len(fixed) != 12:
        raise DataFormatError(f"{path}: truncated fixed header")
    magic, version, d = struct.unpack("<4sII", fixed)
    if magic != _MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported format version {version}")
    if not 1 <= d <= 255:
        raise DataFormatError(f"{path}: implausible axis count {d}")
    raw = fh.read(4 * d + 12)
    if len(raw) != 4 * d + 12:
        raise DataFormatError(f"{path}: truncated header")
    dims = struct.unpack(f"<{d}I", raw[: 4 * d])
    n, meta_len = struct.unpack("<QI", raw[4 * d:])
    meta_raw = fh.read(meta_len)
    if len(meta_raw) != meta_len:
        raise DataFormatError(f"{path}: truncated metadata")
    crc_raw = fh.read(4)
    if len(crc_raw) != 4:
        raise DataFormatError(f"{path}: missing header checksum")
    (crc_stored,) = struct.unpack("<I", crc_raw)
    crc_actual = zlib.crc32(fixed + raw + meta_raw)
    if crc_stored != crc_actual:
        raise DataFormatError(
            f"{path}: header checksum mismatch "
            f"(stored {crc_stored:#010x}, computed {crc_actual:#010x})"
        )
    if n < 1:
        raise DataFormatError(f"{path}: subject count must be >= 1, got {n}")
    for m in dims:
        if m < 1:
            raise DataFormatError(f"{path}: axis sizes must be >= 1, got {dims}")
    return dims, int(n), _decode_meta(meta_raw), fh.tell()


def read_dataset(path, mmap: bool | None = None) -> FunctionalDataset:
    """Read a dataset container.

    ``mmap`` True maps the payload read-only instead of loading it;
    None decides by payload size.  The file length must equal header
    plus exactly 8 * n * N bytes.
    """
    with open(path, "rb") as fh:
        dims, n, meta, offset = _read_header(fh, path)
        grid = build_grid(dims)
        want = 8 * n * grid.n_points
        fh.seek(0, 2)
        actual = fh.tell() - offset
        if actual != want:
            raise DataFormatError(
                f"{path}: payload is {actual} bytes, expected {want} "
                f"(n={n}, N={grid.n_points})"
            )
        if mmap is None:
            mmap = want > _MMAP_THRESHOLD
        if mmap:
            values = np.memmap(path, dtype="<f8", mode="r", offset=offset,
                               shape=(n, grid.n_points))
        else:
            fh.seek(offset)
            values = np.fromfile(fh, dtype="<f8", count=n * grid.n_points)
            values = values.reshape(n, grid.n_points)
    return FunctionalDataset(grid=grid, values=values, meta=meta)


def ingest_raw(raw_path, dims, n: int, out_path, meta: dict | None = None) -> None:
    """Wrap a headerless float64 little-endian payload in the container.

    The raw file must hold exactly 8 * n * prod(dims) bytes, subject-major
    in grid linear order; a mismatch means the declared dims/n are wrong
    for this payload, which is a configuration error.  Data is copied in
    chunks, never loaded whole.
    """
    grid = build_grid(dims)
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    want = 8 * n * grid.n_points
    full_meta = {"mean": "unknown", "kernel": "none", "sigma": "none",
                 "seed": "none", "source": "ingest"}
    if meta:
        full_meta.update(meta)
    with open(raw_path, "rb") as src:
        src.seek(0, 2)
        actual = src.tell()
        if actual != want:
            raise ConfigError(
                f"{raw_path}: payload is {actual} bytes, expected {want} "
                f"(n={n}, dims={tuple(grid.dims)})"
            )
        src.seek(0)
        with open(out_path, "wb") as dst:
            dst.write(_pack_header(grid.dims, n, full_meta))
            while True:
                block = src.read(_CHUNK)
                if not block:
                    break
                dst.write(block)


# ---------------------------------------------------------------------------
# PGM export


def export_pgm(values, grid: Grid, out_path) -> list:
    """Write grid values as 8-bit binary PGM images.

    Values are min-max scaled to 0..255 over the whole array; the
    scaling constants go to a text sidecar next to the image so the
    mapping is invertible.  A 1-d grid becomes a single-row image, a
    2-d grid one image with axis 1 as columns (its fastest-varying
    linear order matches PGM's row-major pixel order), and a 3-d grid
    one image per axis-3 slice, suffixed _slice001 upward.  Returns the
    image paths written.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_points,):
        raise ConfigError(
            f"values shape {values.shape} does not match grid with "
            f"{grid.n_points} points"
        )
    if grid.d > 3:
        raise ConfigError(f"PGM export supports up to 3 axes, got {grid.d}")
    if not np.all(np.isfinite(values)):
        raise ConfigError("values must be finite for image export")
    vmin = float(values.min())
    vmax = float(values.max())
    span = vmax - vmin
    if span == 0.0:
        scaled = np.zeros(values.shape, dtype=np.uint8)
    else:
        scaled = np.rint((values - vmin) / span * 255.0).astype(np.uint8)

    out_path = str(out_path)
    base = out_path[:-4] if out_path.endswith(".pgm") else out_path
    if grid.d == 1:
        width, height = grid.dims[0], 1
        planes = [scaled]
        names = [f"{base}.pgm"]
    elif grid.d == 2:
        width, height = grid.dims[0], grid.dims[1]
        planes = [scaled]
        names = [f"{base}.pgm"]
    else:
        width, height = grid.dims[0], grid.dims[1]
        plane_size = width * height
        planes = [
            scaled[k * plane_size:(k + 1) * plane_size]
            for k in range(grid.dims[2])
        ]
        names = [
            f"{base}_slice{k + 1:03d}.pgm" for k in range(grid.dims[2])
        ]
    for name, plane in zip(names, planes):
        with open(name, "wb") as fh:
            fh.write(f"P5 {width} {height} 255\n".encode("ascii"))
            fh.write(plane.tobytes())
    with open(f"{base}.scale.txt", "w") as fh:
        fh.write(f"vmin={vmin!r}\nvmax={vmax!r}\nlevels=256\n")
        fh.write(f"dims={','.join(str(m) for m in grid.dims)}\n")
    return names
