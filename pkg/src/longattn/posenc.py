"""Position-encoding schemes: none, sinusoidal, learned-absolute (with
replication to longer lengths), rotary (RoPE), and T5-style relative bias.

Application sites differ per scheme: sinusoidal / learned-absolute / none act
on input embeddings, RoPE rotates per-head queries and keys, T5Relative adds a
bucketed bias to attention logits. Global tokens carry no position and are
never encoded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .tensor import _record  # package-internal op registration


class Scheme(str, Enum):
    NONE = "none"
    SINUSOIDAL = "sinusoidal"
    LEARNED_ABSOLUTE = "learned_absolute"
    ROPE = "rope"
    T5_RELATIVE = "t5_relative"


@dataclass(frozen=True)
class PosEncConfig:
    scheme: Scheme = Scheme.SINUSOIDAL
    sinusoidal_factor: float = 10000.0
    t5_num_buckets: int = 32
    t5_max_distance: int = 128
    learned_max_len: int = 512

    def __post_init__(self):
        if self.sinusoidal_factor <= 1:
            raise ValueError("sinusoidal factor must be > 1")
        if self.t5_num_buckets < 2:
            raise ValueError("need at least 2 relative buckets")
        if self.t5_max_distance <= self.t5_num_buckets:
            raise ValueError("max_distance must exceed num_buckets")


def sinusoidal(L: int, d: int, factor: float = 10000.0) -> np.ndarray:
    """PE[p, 2i] = sin(p / factor^(2i/d)), PE[p, 2i+1] = cos(...)."""
    if d % 2 != 0:
        raise ValueError(f"sinusoidal encoding needs even width, got {d}")
    pos = np.arange(L, dtype=np.float64)[:, None]
    freq = factor ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    ang = pos * freq[None, :]
    pe = np.zeros((L, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang)
    return pe


def replicate(table: np.ndarray, new_len: int) -> np.ndarray:
    """Tile a learned position table end-to-end up to new_len rows."""
    old = table.shape[0]
    if new_len < old:
        raise ValueError(f"replicate: new length {new_len} < current {old}")
    reps = -(-new_len // old)
    return np.tile(table, (reps, 1))[:new_len]


def learned_absolute(table: Tensor, L: int) -> Tensor:
    if L > table.shape[0]:
        raise ValueError(
            f"sequence length {L} exceeds learned position table ({table.shape[0]}); "
            "replicate the table first")
    return T.narrow(table, 0, 0, L)


# ---------------------------------------------------------------------------
# RoPE

def _rope_angles(positions: np.ndarray, d: int, factor: float) -> tuple[np.ndarray, np.ndarray]:
    theta = factor ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    ang = positions[:, None] * theta[None, :]
    return np.cos(ang), np.sin(ang)


def rope_apply(x: Tensor, positions, factor: float = 10000.0) -> Tensor:
    """Rotate frequency pairs (2i, 2i+1) of [h, L, d] by p * theta_i.

    Applied to queries and keys only; a pure rotation, so it has an exact
    analytic backward (inverse rotation of the gradient).
    """
    h, L, d = x.shape
    if d % 2 != 0:
        raise ValueError(f"RoPE needs an even head_dim, got {d}")
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape != (L,):
        raise ValueError(f"positions shape {positions.shape} != ({L},)")
    cos, sin = _rope_angles(positions, d, factor)   # [L, d/2]
    x0 = x.data[..., 0::2]
    x1 = x.data[..., 1::2]
    out_arr = np.empty_like(x.data)
    out_arr[..., 0::2] = x0 * cos - x1 * sin
    out_arr[..., 1::2] = x0 * sin + x1 * cos
    out = Tensor(out_arr)

    def backward(g):
        if x.requires_grad:
            g0 = g[..., 0::2]
            g1 = g[..., 1::2]
            gx = np.empty_like(g)
            gx[..., 0::2] = g0 * cos + g1 * sin
            gx[..., 1::2] = -g0 * sin + g1 * cos
            x.accumulate_grad(gx)
    return _record(out, (x,), backward, "rope")


# ---------------------------------------------------------------------------
# T5 relative bias

def t5_bucket(rel: np.ndarray, num_buckets: int, max_distance: int,
              bidirectional: bool) -> np.ndarray:
    """Canonical T5 relative-position bucketing of rel = j - i (key - query)."""
    rel = np.asarray(rel, dtype=np.int64)
    buckets = np.zeros_like(rel)
    n = num_buckets
    if bidirectional:
        n //= 2
        buckets = buckets + (rel > 0).astype(np.int64) * n
        rel_abs = np.abs(rel)
    else:
        rel_abs = np.maximum(-rel, 0)   # causal: only j <= i carries signal
    max_exact = n // 2
    is_small = rel_abs < max_exact
    log_part = max_exact + (
        np.log(np.maximum(rel_abs, 1) / max_exact)
        / math.log(max_distance / max_exact)
        * (n - max_exact)
    ).astype(np.int64)
    log_part = np.minimum(log_part, n - 1)
    return buckets + np.where(is_small, rel_abs, log_part)


def relative_bucket_matrix(Lq: int, Lk: int, num_buckets: int, max_distance: int,
                           bidirectional: bool) -> np.ndarray:
    rel = np.arange(Lk)[None, :] - np.arange(Lq)[:, None]
    return t5_bucket(rel, num_buckets, max_distance, bidirectional)


def t5_relative_bias(Lq: int, Lk: int, num_buckets: int, max_distance: int,
                     bias_table: Tensor, bidirectional: bool) -> Tensor:
    """[h, Lq, Lk] additive logit bias gathered from a [h, num_buckets] table."""
    if bias_table.shape[1] != num_buckets:
        raise ValueError(
            f"bias table has {bias_table.shape[1]} buckets, config says {num_buckets}")
    buckets = relative_bucket_matrix(Lq, Lk, num_buckets, max_distance, bidirectional)
    out = Tensor(bias_table.data[:, buckets])

    def backward(g):
        if bias_table.requires_grad:
            gt = np.zeros_like(bias_table.data)
            h = bias_table.shape[0]
            for hi in range(h):
                np.add.at(gt[hi], buckets, g[hi])
            bias_table.accumulate_grad(gt)
    return _record(out, (bias_table,), backward, "t5_relative_bias")


def block_relative_bias(b: int, num_buckets: int, max_distance: int,
                        bias_table: Tensor) -> Tensor:
    """[h, b, b] bias for block-diagonal attention; relative offsets within a
    block are the same for every block, so one matrix serves them all."""
    return t5_relative_bias(b, b, num_buckets, max_distance, bias_table,
                            bidirectional=True)
