"""Attention scaling benchmark: score-op counts, wall time and buffer bytes per length."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .attention import (AttentionParams, ScoreCounter, build_pattern, count_score_ops, dense_attention,
                        global_augmented_attention)
from .tensor import Tensor

DEFAULT_LENGTHS = (256, 512, 1024, 2048, 4096)
LINEAR_CUTOFF = 1.5


@dataclass
class BenchRow:
    kernel: str
    seq_len: int
    score_ops: int | None
    expected_score_ops: int
    buffer_bytes: int | None
    wall_time_s: float | None
    skipped: bool = False


@dataclass
class BenchReport:
    rows: list[BenchRow]
    exponents: dict[str, float]
    time_exponents: dict[str, float]
    settings: dict = field(default_factory=dict)

    def classification(self) -> dict[str, str]:
        return {k: ("linear" if e < LINEAR_CUTOFF else "quadratic") for k, e in self.exponents.items()}

    def to_json(self) -> str:
        return json.dumps({
            "settings": self.settings,
            "rows": [asdict(r) for r in self.rows],
            "exponents": self.exponents,
            "time_exponents": self.time_exponents,
            "classification": self.classification(),
        }, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["kernel", "seq_len", "score_ops", "expected_score_ops", "buffer_bytes", "wall_time_s", "skipped"])
        for r in self.rows:
            writer.writerow([r.kernel, r.seq_len, r.score_ops, r.expected_score_ops, r.buffer_bytes,
                             "" if r.wall_time_s is None else f"{r.wall_time_s:.6f}", int(r.skipped)])
        return buf.getvalue()


def fit_exponent(lengths: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log(value) against log(length)."""
    x = np.log(np.asarray(lengths, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def estimated_buffer_bytes(kernel: str, n: int, window: int, g: int, heads: int) -> int:
    if kernel == "dense":
        return 2 * heads * n * n * 8
    half = min(window // 2, n - 1)
    g = g if kernel == "global" else 0
    return 2 * (heads * n * (2 * half + 1 + g) * 8 + heads * g * n * 8)


def run_bench(lengths: Sequence[int] = DEFAULT_LENGTHS, window: int = 33, n_globals: int = 16,
              repetitions: int = 1, width: int = 64, heads: int = 1, memory_budget_bytes: int = 2 << 30,
              seed: int = 0, kernels: Sequence[str] = ("dense", "global", "windowed")) -> BenchReport:
    """Time each kernel's forward pass at each length on fixed random inputs.

    Kernels whose estimated attention buffers exceed ``memory_budget_bytes``
    are recorded as skipped rows.
    """
    lengths = sorted(int(n) for n in lengths)
    for n in lengths:
        if n < window:
            raise ValueError(f"length {n} is shorter than the window {window}")
    rng = np.random.default_rng(seed)
    params = AttentionParams.random(width, heads, rng, global_projections=True)
    x_full = rng.uniform(-1.0, 1.0, (max(lengths), width))

    rows: list[BenchRow] = []
    for kernel in sorted(kernels):
        for n in lengths:
            g = n_globals if kernel == "global" else 0
            w = n if kernel == "dense" else window
            expected = count_score_ops(kernel, n, w, g)
            if estimated_buffer_bytes(kernel, n, window, g, heads) > memory_budget_bytes:
                rows.append(BenchRow(kernel, n, None, expected, None, None, skipped=True))
                continue
            x = Tensor(x_full[:n])
            if kernel == "dense":
                pattern = build_pattern(n, "full")
            else:
                pattern = build_pattern(n, window, range(n - g, n))
            times = []
            counter = ScoreCounter()
            for _ in range(repetitions):
                counter = ScoreCounter()
                start = time.perf_counter()
                if kernel == "dense":
                    dense_attention(x, params, pattern, counter)
                else:
                    global_augmented_attention(x, params, pattern, counter)
                times.append(time.perf_counter() - start)
            rows.append(BenchRow(kernel, n, counter.scores, expected, counter.buffer_bytes, min(times)))

    exponents, time_exponents = {}, {}
    for kernel in sorted(kernels):
        done = [r for r in rows if r.kernel == kernel and not r.skipped]
        if len(done) >= 2:
            exponents[kernel] = fit_exponent([r.seq_len for r in done], [r.score_ops for r in done])
            time_exponents[kernel] = fit_exponent([r.seq_len for r in done], [r.wall_time_s for r in done])
    settings = {"lengths": lengths, "window": window, "globals": n_globals, "repetitions": repetitions,
                "width": width, "heads": heads, "memory_budget_bytes": memory_budget_bytes, "seed": seed}
    return BenchReport(rows, exponents, time_exponents, settings)
