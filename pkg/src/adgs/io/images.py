"""PFM (float) and PNG (8-bit) image files."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import SceneLoadError


def write_pfm(path, data: np.ndarray) -> None:
    """Little-endian PFM: (H, W, 3) as 'PF', (H, W) as 'Pf'. Stored as float32."""
    data = np.asarray(data)
    if data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
    elif data.ndim == 2:
        tag = b"Pf"
    else:
        raise ValueError(f"cannot write array of shape {data.shape} as PFM")
    h, w = data.shape[:2]
    body = np.flipud(data).astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n-1.0\n".encode() + body)


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"(PF|Pf)\s+(\d+)\s+(\d+)\s+(-?[\d.eE+-]+)\s", raw)
    if m is None:
        raise SceneLoadError(f"{path}: not a PFM file")
    channels = 3 if m.group(1) == b"PF" else 1
    w, h, scale = int(m.group(2)), int(m.group(3)), float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=m.end())
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_png(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    if path.suffix.lower() == ".png":
        return read_png(path)
    raise SceneLoadError(f"{path}: unsupported image format (expected .png or .pfm)")
