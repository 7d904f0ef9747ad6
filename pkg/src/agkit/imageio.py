"""Binary PGM (P5) / PPM (P6) reading and writing, plus box overlays."""

from __future__ import annotations

import numpy as np


def write_pgm(path, img: np.ndarray) -> None:
    """Write a (H,W) uint8 array as binary PGM."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"PGM needs uint8 data, got {arr.dtype}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM: magic {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=pos)
    return pixels.reshape(h, w).copy()


def write_ppm(path, img: np.ndarray) -> None:
    """Write a (H,W,3) uint8 array as binary PPM."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"PPM needs a (H,W,3) array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"PPM needs uint8 data, got {arr.dtype}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def to_uint8(img: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Linear map [lo,hi] -> [0,255]; degenerate range maps to 0."""
    arr = np.asarray(img, dtype=np.float64)
    lo = float(arr.min()) if lo is None else lo
    hi = float(arr.max()) if hi is None else hi
    if hi - lo <= 0.0:
        return np.zeros(arr.shape, dtype=np.uint8)
    scaled = (arr - lo) / (hi - lo)
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)


def burn_box(rgb: np.ndarray, box: tuple[int, int, int, int], color=(255, 0, 0)) -> np.ndarray:
    """Draw a 1-px rectangle (inclusive pixel coords x0,y0,x1,y1) into an RGB image."""
    out = rgb.copy()
    x0, y0, x1, y1 = box
    h, w = out.shape[:2]
    x0, x1 = max(0, x0), min(w - 1, x1)
    y0, y1 = max(0, y0), min(h - 1, y1)
    out[y0, x0 : x1 + 1] = color
    out[y1, x0 : x1 + 1] = color
    out[y0 : y1 + 1, x0] = color
    out[y0 : y1 + 1, x1] = color
    return out


def gray_to_rgb(gray: np.ndarray) -> np.ndarray:
    return np.stack([gray, gray, gray], axis=2)
