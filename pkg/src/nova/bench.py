"""Timing harness for the regularizer's two evaluation paths.

The closed form is quadratic in the sample count, the grid path linear;
the benchmark measures wall time and an approximate resident-memory delta
per (n, d, mode) case so the scaling claim is checkable from the CSV.
"""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass

import numpy as np
import psutil
import torch

from .sigreg import CFGridSpec, SigregConfig, sample_directions, sigreg_loss


@dataclass
class BenchRow:
    n: int
    d: int
    mode: str
    wall_time: float  # median seconds per evaluation
    peak_extra_memory: int  # approximate bytes, resident-set delta
    value: float  # statistic, for cross-mode agreement checks


def bench_case(
    n: int,
    d: int,
    mode: str,
    grid: CFGridSpec | None = None,
    m: int = 1,
    repeats: int = 5,
    seed: int = 0,
) -> BenchRow:
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    rng = np.random.default_rng(seed)
    emb = torch.as_tensor(rng.standard_normal((n, d)), dtype=torch.float32)
    dirs = sample_directions(d, m, seed)
    cfg = SigregConfig(m=m, mode=mode, grid=grid, resample_each_step=False, seed=seed)
    proc = psutil.Process()
    gc.collect()
    rss_before = proc.memory_info().rss
    with torch.no_grad():
        value = float(sigreg_loss(emb, cfg, directions=dirs))  # warmup
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            sigreg_loss(emb, cfg, directions=dirs)
            times.append(time.perf_counter() - start)
    rss_after = proc.memory_info().rss
    return BenchRow(
        n=n,
        d=d,
        mode=mode,
        wall_time=float(np.median(times)),
        peak_extra_memory=max(0, rss_after - rss_before),
        value=value,
    )


def run_bench(ns, ds, grid: CFGridSpec | None = None, m: int = 1, repeats: int = 5, seed: int = 0) -> list:
    grid = grid if grid is not None else CFGridSpec.default()
    rows = []
    for d in ds:
        for n in ns:
            for mode in ("closed_form", "grid"):
                rows.append(bench_case(n, d, mode, grid=grid, m=m, repeats=repeats, seed=seed))
    return rows


def doubling_ratios(rows, mode: str) -> list:
    """Wall-time ratios between consecutive doublings of n at fixed d."""
    by_key = {(r.d, r.n): r.wall_time for r in rows if r.mode == mode}
    out = []
    for (d, n), t in sorted(by_key.items()):
        t2 = by_key.get((d, 2 * n))
        if t2 is not None and t > 0:
            out.append((d, n, t2 / t))
    return out
