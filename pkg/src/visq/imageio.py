"""Binary PPM (P6) / PGM (P5) readers and writers, maxval 255.

The header is "P6\n<width> <height>\n255\n" followed by raw bytes; byte-level
determinism of these writers is what makes generated datasets re-runnable to
identical files.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"expected (H, W, 3) array, got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 2:
        raise ImageFormatError(f"expected (H, W) array, got {img.shape}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def _read_header(f) -> tuple[bytes, int, int, int]:
    def token() -> bytes:
        # skip whitespace and '#' comment lines between header fields
        t = b""
        while True:
            c = f.read(1)
            if not c:
                raise ImageFormatError("truncated header")
            if c == b"#":
                while c not in (b"\n", b""):
                    c = f.read(1)
                continue
            if c.isspace():
                if t:
                    return t
                continue
            t += c

    magic = token()
    w, h, maxval = int(token()), int(token()), int(token())
    return magic, w, h, maxval


def read_ppm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, w, h, maxval = _read_header(f)
        if magic != b"P6" or maxval != 255:
            raise ImageFormatError(f"not a maxval-255 P6 file: {magic!r}, maxval={maxval}")
        raw = f.read(w * h * 3)
    if len(raw) != w * h * 3:
        raise ImageFormatError(f"truncated pixel data in {path}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).copy()


def read_pgm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, w, h, maxval = _read_header(f)
        if magic != b"P5" or maxval != 255:
            raise ImageFormatError(f"not a maxval-255 P5 file: {magic!r}, maxval={maxval}")
        raw = f.read(w * h)
    if len(raw) != w * h:
        raise ImageFormatError(f"truncated pixel data in {path}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
