"""Grayscale image I/O: binary PGM (P5) read/write, PNG read via Pillow."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pgm(path, image: np.ndarray) -> None:
    """Write an 8-bit grayscale image as binary PGM (P5, maxval 255)."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError(f"PGM writer expects a 2-D image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"PGM writer expects uint8 pixels, got {arr.dtype}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def _read_pgm_token(fh) -> bytes:
    # skips whitespace and '#' comment lines between header tokens
    tok = b""
    while True:
        c = fh.read(1)
        if not c:
            raise ValueError("truncated PGM header")
        if c == b"#":
            while c and c != b"\n":
                c = fh.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) file into a uint8 (H, W) array."""
    with open(path, "rb") as fh:
        magic = _read_pgm_token(fh)
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM file (magic {magic!r})")
        w = int(_read_pgm_token(fh))
        h = int(_read_pgm_token(fh))
        maxval = int(_read_pgm_token(fh))
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
        data = fh.read(w * h)
        if len(data) != w * h:
            raise ValueError(f"{path}: truncated pixel data")
        return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def read_image(path) -> np.ndarray:
    """Decode a grayscale image from a .pgm or .png file as uint8 (H, W)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        from PIL import Image

        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.uint8)
    raise ValueError(f"unsupported image format: {path}")
