"""Versioned binary checkpoints.

Layout (all little-endian)::

    offset  size  field
    0       8     magic b"ADGSCKPT"
    8       4     u32 format version (1)
    12      4     u32 SH degree L
    16      4     u32 flags (bit 0: optimizer moments present)
    20      4     u32 reserved (0)
    24      8     u64 iteration
    32      8     u64 Gaussian count N
    40      8     u64 optimizer step
    48      24    3 x f64 background colour
    72      N*P*4         parameters, f32, row-major (N, P)
    ...     2*N*P*8       first then second moments, f64, (N, P) each [if flag bit 0]

P = 3 (mu) + 3 (log_scale) + 4 (quat) + 1 (opacity_logit) + 3*(L+1)^2 (sh, coefficient-major).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from ..optim import OptimizerState
from ..scene_model import PARAM_NAMES, GaussianCloud, sh_coeff_count

MAGIC = b"ADGSCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIQQQ3d")
HEADER_SIZE = _HEADER.size


def record_floats(sh_degree: int) -> int:
    return 3 + 3 + 4 + 1 + 3 * sh_coeff_count(sh_degree)


def checkpoint_size(n: int, sh_degree: int, with_moments: bool = True) -> int:
    p = record_floats(sh_degree)
    return HEADER_SIZE + n * p * 4 + (2 * n * p * 8 if with_moments else 0)


def _pack(arrays: dict[str, np.ndarray], n: int) -> np.ndarray:
    return np.concatenate([_rows(np.asarray(arrays[k], dtype=np.float64), n) for k in PARAM_NAMES],
                          axis=1)


def _rows(a: np.ndarray, n: int) -> np.ndarray:
    return a.reshape(n, int(np.prod(a.shape[1:], dtype=np.int64)))


def _unpack(flat: np.ndarray, n: int, K: int) -> dict[str, np.ndarray]:
    widths = {"mu": 3, "log_scale": 3, "quat": 4, "opacity_logit": 1, "sh": 3 * K}
    shapes = {"mu": (n, 3), "log_scale": (n, 3), "quat": (n, 4), "opacity_logit": (n,),
              "sh": (n, K, 3)}
    out, col = {}, 0
    for k in PARAM_NAMES:
        out[k] = flat[:, col:col + widths[k]].reshape(shapes[k]).copy()
        col += widths[k]
    return out


def save_checkpoint(path, cloud: GaussianCloud, opt: OptimizerState | None = None,
                    iteration: int = 0) -> Path:
    path = Path(path)
    n, L = len(cloud), cloud.sh_degree
    params = np.concatenate([_rows(getattr(cloud, k).astype("<f4"), n) for k in PARAM_NAMES], axis=1)
    flags = 1 if opt is not None else 0
    header = _HEADER.pack(MAGIC, VERSION, L, flags, 0, int(iteration), n,
                          opt.step if opt is not None else 0, *map(float, cloud.background))
    parts = [header, np.ascontiguousarray(params, dtype="<f4").tobytes()]
    if opt is not None:
        if len(opt) != n:
            raise CheckpointError(f"optimizer tracks {len(opt)} rows, cloud has {n}")
        parts.append(np.ascontiguousarray(_pack(opt.exp_avg, n), dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(_pack(opt.exp_avg_sq, n), dtype="<f8").tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    return path


def load_checkpoint(path, optimizer_config=None):
    """Return (cloud, optimizer state or None, iteration). Parameters come back as float32."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, L, flags, _, iteration, n, step, *bg = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    has_opt = bool(flags & 1)
    if len(raw) != checkpoint_size(n, L, has_opt):
        raise CheckpointError(f"{path}: size {len(raw)} does not match header")
    K = sh_coeff_count(L)
    p = record_floats(L)
    off = HEADER_SIZE
    params = np.frombuffer(raw, dtype="<f4", count=n * p, offset=off).reshape(n, p)
    arrays = {k: v.astype(np.float32) for k, v in _unpack(params, n, K).items()}
    cloud = GaussianCloud(**arrays, background=np.array(bg))
    opt = None
    if has_opt:
        off += n * p * 4
        m = np.frombuffer(raw, dtype="<f8", count=n * p, offset=off).reshape(n, p)
        v = np.frombuffer(raw, dtype="<f8", count=n * p, offset=off + n * p * 8).reshape(n, p)
        opt = OptimizerState.for_cloud(cloud, optimizer_config)
        opt.exp_avg = {k: a.astype(np.float64) for k, a in _unpack(m, n, K).items()}
        opt.exp_avg_sq = {k: a.astype(np.float64) for k, a in _unpack(v, n, K).items()}
        opt.step = int(step)
    return cloud, opt, int(iteration)
