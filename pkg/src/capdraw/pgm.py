"""Binary PGM (P5, 8-bit) reading and writing.

Values in [0, 1] map to 0..255 by round-half-up; the format is dependency
free and bit-exact to specify, which keeps golden-file tests portable.
"""

from __future__ import annotations

import numpy as np


def write_pgm(path, image: np.ndarray):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"write_pgm: expected a 2-D image, got shape {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("write_pgm: pixel values must lie in [0, 1]")
    h, w = image.shape
    payload = np.floor(image * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(payload.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":  # comment to end of line
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"read_pgm: unsupported magic {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"read_pgm: expected maxval 255, got {maxval}")
    pos += 1  # single whitespace after maxval
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise ValueError(f"read_pgm: truncated raster ({len(raster)} of {w * h} bytes)")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0
