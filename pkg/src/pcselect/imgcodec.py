"""RGB sparsity-image encoding of a sparse matrix.

A matrix of order N is partitioned into an m x m grid of blocks of order
b = ceil(N/m) (trailing blocks may be smaller or empty). Each block becomes
one pixel:

  blue  - constant over the image, the matrix order normalized against the
          data-set-wide order range,
  green - the block's nonzero density, against the block's actual area,
  red   - the block mean of biased nonzero values (or of their base-2
          logarithms when the value range exceeds 255), normalized against
          the range of block means.

Degenerate normalization ranges map to 0; any channel value landing at 256
is clamped to 255.
"""

import csv
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .matio import SparseMatrix

SUPPORTED_RESOLUTIONS = (32, 64, 128, 256)

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass
class EncodingContext:
    """Data-set-wide order extremes used by the blue channel."""

    n_min: int
    n_max: int

    def __post_init__(self):
        if self.n_min > self.n_max:
            raise ValueError(f"n_min {self.n_min} > n_max {self.n_max}")


@dataclass
class SparsityImage:
    m: int
    pixels: np.ndarray  # (m, m, 3) uint8, channel order (R, G, B)
    block_order: int

    def channel(self, name):
        return self.pixels[:, :, "rgb".index(name)]


def block_partition(n, m):
    """m contiguous index intervals of width ceil(n/m) covering [0, n).

    Trailing intervals are clipped and may be empty when n < m * ceil(n/m).
    """
    b = -(-n // m)
    return [(min(i * b, n), min((i + 1) * b, n)) for i in range(m)]


def _clamped_byte_floor(x):
    """floor(x) clamped into [0, 255] (values at the max land on 256)."""
    return np.minimum(np.floor(x), 255.0).astype(np.uint8)


def encode_image(A: SparseMatrix, m, ctx: EncodingContext) -> SparsityImage:
    if not ctx.n_min <= A.n <= ctx.n_max:
        raise ValueError(f"matrix order {A.n} outside context [{ctx.n_min}, {ctx.n_max}]")
    n = A.n
    b = -(-n // m)

    if ctx.n_max == ctx.n_min:
        blue = 0
    else:
        blue = int(
            _clamped_byte_floor(
                np.array((n - ctx.n_min) / (ctx.n_max - ctx.n_min) * 255.0)
            )
        )

    rows = A.expanded_rows()
    bi = rows // b
    bj = A.col_idx // b
    flat = (bi * m + bj).astype(np.int64)
    counts = np.bincount(flat, minlength=m * m).reshape(m, m)

    # actual block areas (edge blocks may be smaller or empty)
    lengths = np.array([stop - start for start, stop in block_partition(n, m)],
                       dtype=np.float64)
    areas = np.outer(lengths, lengths)
    green = np.zeros((m, m), dtype=np.uint8)
    occupied = areas > 0
    green[occupied] = _clamped_byte_floor(
        counts[occupied] / areas[occupied] * 255.0
    )

    red = np.zeros((m, m), dtype=np.uint8)
    if A.nnz:
        vmin = float(A.values.min())
        vmax = float(A.values.max())
        biased = A.values - vmin + 1.0
        if vmax - vmin <= 255.0:
            weights = biased
        else:
            weights = np.log2(biased)
        sums = np.bincount(flat, weights=weights, minlength=m * m).reshape(m, m)
        nonempty = counts > 0
        gamma = np.zeros((m, m))
        gamma[nonempty] = sums[nonempty] / counts[nonempty]
        gmin = gamma[nonempty].min()
        gmax = gamma[nonempty].max()
        if gmax > gmin:
            red[nonempty] = _clamped_byte_floor(
                (gamma[nonempty] - gmin) / (gmax - gmin) * 255.0
            )

    pixels = np.zeros((m, m, 3), dtype=np.uint8)
    pixels[:, :, 0] = red
    pixels[:, :, 1] = green
    pixels[:, :, 2] = blue
    return SparsityImage(m=m, pixels=pixels, block_order=b)


def flatten(img: SparsityImage):
    """Row-major pixels, (R, G, B) within each pixel, as float64 in [0, 255]."""
    return img.pixels.reshape(-1).astype(np.float64)


# ---------------------------------------------------------------------------
# Minimal PNG writer/reader for 8-bit RGB, no alpha, no interlacing.


def _png_chunk(out, tag, payload):
    out.write(struct.pack(">I", len(payload)))
    out.write(tag)
    out.write(payload)
    out.write(struct.pack(">I", zlib.crc32(payload, zlib.crc32(tag)) & 0xFFFFFFFF))


def write_png(img: SparsityImage, path):
    """8-bit/channel RGB PNG, no alpha; filter type 0 on every scanline."""
    pixels = img.pixels
    h, w = pixels.shape[0], pixels.shape[1]
    raw = bytearray()
    for y in range(h):
        raw.append(0)
        raw.extend(pixels[y].tobytes())
    with open(path, "wb") as out:
        out.write(_PNG_SIGNATURE)
        _png_chunk(out, b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
        _png_chunk(out, b"IDAT", zlib.compress(bytes(raw), 9))
        _png_chunk(out, b"IEND", b"")


def read_png(path):
    """Decode an 8-bit RGB non-interlaced PNG into an (h, w, 3) uint8 array.

    Supports the five standard scanline filters, which is everything a
    conforming encoder of this subset may emit.
    """
    data = Path(path).read_bytes()
    if data[:8] != _PNG_SIGNATURE:
        raise ValueError(f"{path} is not a PNG file")
    pos = 8
    width = height = None
    idat = bytearray()
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        tag = data[pos + 4:pos + 8]
        payload = data[pos + 8:pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, depth, color, comp, filt, interlace = struct.unpack(
                ">IIBBBBB", payload
            )
            if (depth, color, comp, filt, interlace) != (8, 2, 0, 0, 0):
                raise ValueError(
                    f"unsupported PNG variant (depth={depth}, color={color}, "
                    f"interlace={interlace})"
                )
        elif tag == b"IDAT":
            idat.extend(payload)
        elif tag == b"IEND":
            break
    if width is None:
        raise ValueError(f"{path}: missing IHDR")
    raw = zlib.decompress(bytes(idat))
    stride = width * 3
    if len(raw) != height * (stride + 1):
        raise ValueError(f"{path}: unexpected IDAT size")
    out = np.empty((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int64)
    pos = 0
    for y in range(height):
        ftype = raw[pos]
        pos += 1
        line = np.frombuffer(raw[pos:pos + stride], dtype=np.uint8).astype(np.int64)
        pos += stride
        if ftype == 0:
            cur = line
        elif ftype == 1:  # Sub
            cur = line.copy()
            for x in range(3, stride):
                cur[x] = (cur[x] + cur[x - 3]) & 0xFF
        elif ftype == 2:  # Up
            cur = (line + prev) & 0xFF
        elif ftype == 3:  # Average
            cur = line.copy()
            for x in range(stride):
                left = cur[x - 3] if x >= 3 else 0
                cur[x] = (cur[x] + (left + prev[x]) // 2) & 0xFF
        elif ftype == 4:  # Paeth
            cur = line.copy()
            for x in range(stride):
                a = cur[x - 3] if x >= 3 else 0
                bb = prev[x]
                c = prev[x - 3] if x >= 3 else 0
                p = a + bb - c
                pa, pb, pc = abs(p - a), abs(p - bb), abs(p - c)
                if pa <= pb and pa <= pc:
                    pred = a
                elif pb <= pc:
                    pred = bb
                else:
                    pred = c
                cur[x] = (cur[x] + pred) & 0xFF
        else:
            raise ValueError(f"{path}: unknown filter type {ftype}")
        out[y] = cur.astype(np.uint8)
        prev = cur
    return out.reshape(height, width, 3)


# ---------------------------------------------------------------------------
# Dataset layout: <out>/<m>/<matrix_id>.png plus an index CSV.


def image_path(out_dir, m, matrix_id):
    return Path(out_dir) / str(m) / f"{matrix_id}.png"


def encode_dataset(matrices, m, out_dir, ctx=None):
    """Encode (matrix_id, SparseMatrix) pairs at resolution m.

    When no context is given, the order extremes of the batch are used.
    Returns the list of written paths; an index CSV maps id to file.
    """
    matrices = list(matrices)
    if ctx is None:
        orders = [A.n for _, A in matrices]
        ctx = EncodingContext(min(orders), max(orders))
    target = Path(out_dir) / str(m)
    target.mkdir(parents=True, exist_ok=True)
    written = []
    index_rows = []
    for matrix_id, A in matrices:
        img = encode_image(A, m, ctx)
        path = image_path(out_dir, m, matrix_id)
        write_png(img, path)
        written.append(path)
        index_rows.append((matrix_id, f"{m}/{matrix_id}.png"))
    with open(Path(out_dir) / f"index_{m}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["matrix_id", "file"])
        writer.writerows(index_rows)
    return written


def load_image_dataset(out_dir, m, ids):
    """Load PNGs for the given ids as one (len(ids), m, m, 3) uint8 array."""
    out = np.empty((len(ids), m, m, 3), dtype=np.uint8)
    for i, matrix_id in enumerate(ids):
        arr = read_png(image_path(out_dir, m, matrix_id))
        if arr.shape != (m, m, 3):
            raise ValueError(
                f"image for {matrix_id} has shape {arr.shape}, expected ({m}, {m}, 3)"
            )
        out[i] = arr
    return out
