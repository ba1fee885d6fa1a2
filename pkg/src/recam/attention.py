"""Dense, sliding-window and global-augmented multi-head self-attention.

All kernels take an ``n x d`` input and return ``n x d``.  The dense kernel is
the reference: the sparse kernels must agree with it under the equivalent
:class:`AttentionPattern`, while only evaluating the query-key pairs their
pattern needs.  Score counts are per head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

MASK_VALUE = -1e30
KERNELS = ("dense", "windowed", "global")


class AttentionConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttentionPattern:
    """Which key positions each query position may attend to.

    ``window`` is an odd band width (``window // 2`` neighbours per side) or
    ``None`` for the full pattern.  Global positions attend to, and are
    attended by, every position.
    """

    seq_len: int
    window: int | None
    global_indices: tuple[int, ...] = ()

    def allowed(self) -> np.ndarray:
        n = self.seq_len
        if self.window is None:
            mask = np.ones((n, n), dtype=bool)
        else:
            idx = np.arange(n)
            mask = np.abs(idx[:, None] - idx[None, :]) <= self.window // 2
        if self.global_indices:
            g = list(self.global_indices)
            mask[g, :] = True
            mask[:, g] = True
        return mask


def build_pattern(seq_len: int, window: int | str | None, global_indices: Sequence[int] = ()) -> AttentionPattern:
    if seq_len < 1:
        raise AttentionConfigError(f"seq_len must be positive, got {seq_len}")
    if window == "full":
        window = None
    if window is not None and (window < 1 or window % 2 == 0):
        raise AttentionConfigError(f"window must be an odd positive integer or 'full', got {window}")
    globals_ = tuple(sorted(set(int(i) for i in global_indices)))
    for i in globals_:
        if not 0 <= i < seq_len:
            raise IndexError(f"global index {i} outside sequence of length {seq_len}")
    return AttentionPattern(seq_len, window, globals_)


@dataclass
class AttentionParams:
    """Projection weights for one attention layer.

    The ``g*`` projections are used for the rows of global positions (their
    queries, and the keys/values they read).  When absent, global rows reuse
    the local projections.
    """

    heads: int
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    gwq: Tensor | None = None
    gbq: Tensor | None = None
    gwk: Tensor | None = None
    gbk: Tensor | None = None
    gwv: Tensor | None = None
    gbv: Tensor | None = None

    def __post_init__(self):
        d = self.wq.shape[0]
        if d % self.heads:
            raise AttentionConfigError(f"width {d} not divisible by {self.heads} heads")
        for name in ("wq", "wk", "wv", "wo", "gwq", "gwk", "gwv"):
            w = getattr(self, name)
            if w is not None and w.shape != (d, d):
                raise DimensionError(f"{name} has shape {w.shape}, expected {(d, d)}")

    @property
    def width(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def has_global_projections(self) -> bool:
        return self.gwq is not None

    def tensors(self) -> dict[str, Tensor]:
        names = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "gwq", "gbq", "gwk", "gbk", "gwv", "gbv")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    @classmethod
    def random(cls, width: int, heads: int, rng: np.random.Generator, global_projections: bool = True,
               std: float = 0.02, grad_enabled: bool = False) -> AttentionParams:
        def w():
            return Tensor(rng.normal(0.0, std, (width, width)), grad_enabled)

        def b():
            return Tensor(np.zeros(width), grad_enabled)

        kw = dict(wq=w(), bq=b(), wk=w(), bk=b(), wv=w(), bv=b(), wo=w(), bo=b())
        if global_projections:
            kw.update(gwq=w(), gbq=b(), gwk=w(), gbk=b(), gwv=w(), gbv=b())
        return cls(heads=heads, **kw)


@dataclass
class ScoreCounter:
    """Instrumentation filled in by the kernels."""

    scores: int = 0
    buffer_bytes: int = 0
    calls: int = 0

    def add(self, scores: int, buffer_bytes: int) -> None:
        self.scores += scores
        self.buffer_bytes = max(self.buffer_bytes, buffer_bytes)
        self.calls += 1


def band_count(n: int, window: int) -> int:
    half = min(window // 2, n - 1)
    return n * (2 * half + 1) - half * (half + 1)


def count_score_ops(kernel: str, n: int, w: int = 1, g: int = 0) -> int:
    """Exact per-head query-key evaluations of ``kernel`` on length ``n``."""
    if n < 1 or w < 1 or g < 0 or g > n:
        raise AttentionConfigError(f"invalid sizes n={n}, w={w}, g={g}")
    if kernel == "dense":
        return n * n
    if kernel == "windowed":
        return band_count(n, w)
    if kernel == "global":
        return band_count(n, w) + 2 * g * n
    raise AttentionConfigError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


# --------------------------------------------------------------- band primitives


def _offset_range(n: int, off: int) -> tuple[int, int]:
    return max(0, -off), min(n, n - off)


def banded_scores(q: Tensor, k: Tensor, half: int) -> Tensor:
    """``out[h, i, t] = q[h, i] . k[h, i + t - half]``; out-of-range entries are 0."""
    heads, n, _ = q.shape
    width = 2 * half + 1
    qd, kd = q.data, k.data
    out = np.zeros((heads, n, width))
    for t in range(width):
        lo, hi = _offset_range(n, t - half)
        if lo < hi:
            off = t - half
            out[:, lo:hi, t] = np.einsum("hid,hid->hi", qd[:, lo:hi], kd[:, lo + off : hi + off])

    def grad(g):
        dq = np.zeros_like(qd)
        dk = np.zeros_like(kd)
        for t in range(width):
            lo, hi = _offset_range(n, t - half)
            if lo < hi:
                off = t - half
                gt = g[:, lo:hi, t, None]
                dq[:, lo:hi] += gt * kd[:, lo + off : hi + off]
                dk[:, lo + off : hi + off] += gt * qd[:, lo:hi]
        return dq, dk

    return T._record(out, (q, k), grad)


def banded_mix(p: Tensor, v: Tensor, half: int) -> Tensor:
    """``out[h, i] = sum_t p[h, i, t] * v[h, i + t - half]`` over in-range t."""
    heads, n, _ = v.shape
    width = 2 * half + 1
    pd, vd = p.data, v.data
    out = np.zeros_like(vd)
    for t in range(width):
        lo, hi = _offset_range(n, t - half)
        if lo < hi:
            off = t - half
            out[:, lo:hi] += pd[:, lo:hi, t, None] * vd[:, lo + off : hi + off]

    def grad(g):
        dp = np.zeros_like(pd)
        dv = np.zeros_like(vd)
        for t in range(width):
            lo, hi = _offset_range(n, t - half)
            if lo < hi:
                off = t - half
                dp[:, lo:hi, t] = np.einsum("hid,hid->hi", g[:, lo:hi], vd[:, lo + off : hi + off])
                dv[:, lo + off : hi + off] += pd[:, lo:hi, t, None] * g[:, lo:hi]
        return dp, dv

    return T._record(out, (p, v), grad)


# ------------------------------------------------------------------- helpers


def _project(x: Tensor, w: Tensor, b: Tensor, heads: int) -> Tensor:
    n, d = x.shape
    y = T.matmul(x, w) + b
    return T.transpose(T.reshape(y, (n, heads, d // heads)), (1, 0, 2))


def _merge(xh: Tensor) -> Tensor:
    heads, n, dh = xh.shape
    return T.reshape(T.transpose(xh, (1, 0, 2)), (n, heads * dh))


def _global_qkv(x_global: Tensor, x: Tensor, p: AttentionParams):
    h = p.heads
    if p.has_global_projections:
        return (_project(x_global, p.gwq, p.gbq, h), _project(x, p.gwk, p.gbk, h), _project(x, p.gwv, p.gbv, h))
    return _project(x_global, p.wq, p.bq, h), _project(x, p.wk, p.bk, h), _project(x, p.wv, p.bv, h)


def _check_input(x: Tensor, params: AttentionParams, n: int | None = None):
    if x.ndim != 2 or x.shape[1] != params.width:
        raise DimensionError(f"attention input {x.shape} does not match width {params.width}")
    if n is not None and x.shape[0] != n:
        raise DimensionError(f"input length {x.shape[0]} != pattern length {n}")


def _kt(k: Tensor) -> Tensor:
    return T.transpose(k, (0, 2, 1))


def _global_rows(x: Tensor, params: AttentionParams, G: np.ndarray, scale: float) -> tuple[Tensor, Tensor]:
    qg, kg, vg = _global_qkv(T.getitem(x, G), x, params)
    pg = T.softmax_rows(T.matmul(qg, _kt(kg)) * scale)
    return T.matmul(pg, vg), pg


# ------------------------------------------------------------------- kernels


def dense_attention(x: Tensor, params: AttentionParams, pattern: AttentionPattern,
                    counter: ScoreCounter | None = None, return_weights: bool = False):
    """Masked full attention; evaluates all n^2 scores per head."""
    _check_input(x, params, pattern.seq_len)
    n = pattern.seq_len
    heads = params.heads
    scale = 1.0 / math.sqrt(params.head_dim)
    G = np.asarray(pattern.global_indices, dtype=np.int64)
    L = np.setdiff1d(np.arange(n), G)
    allowed = pattern.allowed()
    parts, order, weights = [], [], np.zeros((heads, n, n))
    if L.size:
        q = _project(x, params.wq, params.bq, heads)
        k = _project(x, params.wk, params.bk, heads)
        v = _project(x, params.wv, params.bv, heads)
        s = T.matmul(T.getitem(q, (slice(None), L)), _kt(k)) * scale
        sub = allowed[L]
        if not sub.all():
            s = s + Tensor(np.where(sub, 0.0, MASK_VALUE))
        p = T.softmax_rows(s)
        parts.append(T.matmul(p, v))
        order.append(L)
        weights[:, L] = p.data
    if G.size:
        og, pg = _global_rows(x, params, G, scale)
        parts.append(og)
        order.append(G)
        weights[:, G] = pg.data
    out = parts[0] if len(parts) == 1 else T.concat(parts, axis=1)
    perm = np.concatenate(order)
    if not np.array_equal(perm, np.arange(n)):
        out = T.getitem(out, (slice(None), np.argsort(perm)))
    if counter is not None:
        counter.add(n * n, 2 * heads * n * n * 8)
    y = T.matmul(_merge(out), params.wo) + params.bo
    return (y, weights) if return_weights else y


def global_augmented_attention(x: Tensor, params: AttentionParams, pattern: AttentionPattern,
                               counter: ScoreCounter | None = None) -> Tensor:
    """Sliding-window attention plus symmetric global attention.

    Every row evaluates its band and the global columns; global rows are then
    recomputed over the whole sequence.  Band entries that point at a global
    position are masked so each allowed pair is counted once in the softmax.
    """
    if pattern.window is None:
        raise AttentionConfigError("global_augmented_attention needs a finite window")
    _check_input(x, params, pattern.seq_len)
    n = pattern.seq_len
    heads = params.heads
    half = min(pattern.window // 2, n - 1)
    width = 2 * half + 1
    scale = 1.0 / math.sqrt(params.head_dim)
    G = np.asarray(pattern.global_indices, dtype=np.int64)
    g = G.size

    q = _project(x, params.wq, params.bq, heads)
    k = _project(x, params.wk, params.bk, heads)
    v = _project(x, params.wv, params.bv, heads)

    is_global = np.zeros(n, dtype=bool)
    is_global[G] = True
    cols = np.arange(n)[:, None] + np.arange(width)[None, :] - half
    valid = (cols >= 0) & (cols < n)
    valid[valid] = ~is_global[cols[valid]]
    band = banded_scores(q, k, half) * scale + Tensor(np.where(valid, 0.0, MASK_VALUE))

    if g:
        kG = T.getitem(k, (slice(None), G))
        vG = T.getitem(v, (slice(None), G))
        colscores = T.matmul(q, _kt(kG)) * scale
        p = T.softmax_rows(T.concat([band, colscores], axis=-1))
        p_band = T.getitem(p, (Ellipsis, slice(0, width)))
        p_cols = T.getitem(p, (Ellipsis, slice(width, None)))
        out = banded_mix(p_band, v, half) + T.matmul(p_cols, vG)
        og, _ = _global_rows(x, params, G, scale)
        merged = T.scatter_rows(_merge(out), G, _merge(og))
    else:
        merged = _merge(banded_mix(T.softmax_rows(band), v, half))

    if counter is not None:
        score_bytes = heads * n * (width + g) * 8 + heads * g * n * 8
        counter.add(band_count(n, pattern.window) + 2 * g * n, 2 * score_bytes)
    return T.matmul(merged, params.wo) + params.bo


def windowed_attention(x: Tensor, params: AttentionParams, window: int,
                       counter: ScoreCounter | None = None) -> Tensor:
    """Pure sliding-window attention: O(n * window) scores."""
    pattern = build_pattern(x.shape[0], window, ())
    return global_augmented_attention(x, params, pattern, counter)


def attend(kernel: str, x: Tensor, params: AttentionParams, window: int | None,
           global_indices: Sequence[int] = (), counter: ScoreCounter | None = None) -> Tensor:
    """Dispatch by kernel id."""
    n = x.shape[0]
    if kernel == "dense":
        return dense_attention(x, params, build_pattern(n, "full", ()), counter)
    if kernel == "windowed":
        return windowed_attention(x, params, window, counter)
    if kernel == "global":
        return global_augmented_attention(x, params, build_pattern(n, window, global_indices), counter)
    raise AttentionConfigError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")
