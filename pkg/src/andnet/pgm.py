"""Minimal binary PGM (P5) image writing and reading."""

from __future__ import annotations

import numpy as np


def write_pgm(path, image):
    """Write a 2-D array as an 8-bit binary PGM.

    Float input is interpreted on [0, 1] and quantized; integer input is
    taken as raw 0..255 values.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    if np.issubdtype(img.dtype, np.floating):
        if img.size and (img.min() < 0.0 or img.max() > 1.0):
            raise ValueError("float image values must lie in [0, 1]")
        img = np.rint(img * 255.0).astype(np.uint8)
    else:
        if img.size and (img.min() < 0 or img.max() > 255):
            raise ValueError("integer image values must lie in 0..255")
        img = img.astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + img.tobytes())


def read_pgm(path):
    """Read an 8-bit binary PGM written by write_pgm; returns uint8 (h, w)."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(data[pos : pos + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(height, width)
