"""Minimal PLY point clouds: vertex x, y, z (float) and red, green, blue (uchar)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import SceneLoadError

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(path, points: np.ndarray, colors: np.ndarray) -> None:
    """Binary little-endian PLY; ``colors`` in [0, 1]."""
    points = np.asarray(points, dtype="<f4").reshape(-1, 3)
    rgb = np.clip(np.round(np.asarray(colors) * 255), 0, 255).astype("u1").reshape(-1, 3)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(points)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    rec = np.empty(len(points), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                       ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    rec["x"], rec["y"], rec["z"] = points.T
    rec["red"], rec["green"], rec["blue"] = rgb.T
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path):
    """Return (points (N, 3) float64, colors (N, 3) in [0, 1])."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise SceneLoadError(f"{path}: not a PLY file")
    body_start = raw.index(b"\n", end) + 1
    lines = raw[:end].decode("ascii").splitlines()
    fmt = None
    count = None
    props = []
    in_vertex = False
    for line in lines:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
            elif count is not None:
                break
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise SceneLoadError(f"{path}: list properties on vertices are not supported")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    if count is None:
        raise SceneLoadError(f"{path}: no vertex element")
    names = [p[0] for p in props]
    for required in ("x", "y", "z"):
        if required not in names:
            raise SceneLoadError(f"{path}: missing vertex property '{required}'")
    if fmt == "ascii":
        table = np.loadtxt(raw[body_start:].decode("ascii").splitlines()[:count], ndmin=2)
        cols = {name: table[:, i] for i, name in enumerate(names)}
    elif fmt == "binary_little_endian":
        dtype = np.dtype([(n, "<" + t) for n, t in props])
        rec = np.frombuffer(raw, dtype=dtype, count=count, offset=body_start)
        cols = {name: rec[name] for name in names}
    else:
        raise SceneLoadError(f"{path}: unsupported PLY format '{fmt}'")
    pts = np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(np.float64)
    if all(c in cols for c in ("red", "green", "blue")):
        rgb = np.stack([cols["red"], cols["green"], cols["blue"]], axis=1).astype(np.float64) / 255.0
    else:
        rgb = np.full((count, 3), 0.5)
    return pts, rgb
