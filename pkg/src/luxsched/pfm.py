"""Portable Float Map I/O and on-disk decompositions.

Writes little-endian files (scale ``-1.0``), rows stored bottom-up.  Reads
either byte order.  Data are returned as ``float32`` exactly as stored, so a
read/write cycle reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ValidationError
from .imaging import Decomposition


def write_pfm(path, img):
    img = np.asarray(img)
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValidationError(f"cannot write array of shape {img.shape} as PFM")
    height, width = img.shape[:2]
    data = np.ascontiguousarray(np.flipud(img), dtype="<f4")
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(data.tobytes())


def read_pfm(path):
    """Return the PFM at ``path`` as a float32 array, (H, W, 3) or (H, W)."""
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag == b"PF":
            channels = 3
        elif tag == b"Pf":
            channels = 1
        else:
            raise ValidationError(f"{path}: not a PFM file (header {tag!r})")
        dims = f.readline().split()
        scale_line = f.readline().strip()
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(scale_line)
        except (IndexError, ValueError) as exc:
            raise ValidationError(f"{path}: malformed PFM header") from exc
        if width <= 0 or height <= 0 or scale == 0:
            raise ValidationError(f"{path}: malformed PFM header")
        dtype = "<f4" if scale < 0 else ">f4"
        count = width * height * channels
        buf = f.read(count * 4)
    if len(buf) != count * 4:
        raise ValidationError(f"{path}: truncated PFM data")
    data = np.frombuffer(buf, dtype=dtype).astype(np.float32)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(data.reshape(shape)).copy()


def save_decomposition(directory, d: Decomposition):
    os.makedirs(directory, exist_ok=True)
    write_pfm(os.path.join(directory, "ambient.pfm"), d.ambient)
    write_pfm(os.path.join(directory, "light_map.pfm"), d.light_map)
    with open(os.path.join(directory, "light_color.json"), "w") as f:
        json.dump([float(c) for c in d.light_color], f)


def load_decomposition(directory) -> Decomposition:
    ambient = read_pfm(os.path.join(directory, "ambient.pfm"))
    light_map = read_pfm(os.path.join(directory, "light_map.pfm"))
    with open(os.path.join(directory, "light_color.json")) as f:
        color = json.load(f)
    if isinstance(color, dict):
        color = color.get("light_color", color.get("rgb"))
    color = np.asarray(color, dtype=np.float64)
    if color.shape != (3,):
        raise ValidationError(f"{directory}: light_color.json must hold three numbers")
    if abs(color.sum() - 1.0) > 1e-12:
        # hand-written files with rounded decimals
        color = color / color.sum()
    return Decomposition(ambient, light_map, color)
