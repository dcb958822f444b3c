"""Per-sweep cost measurements over design-size grids."""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datagen import gen_balanced_cells, gen_mcar
from .model import IncidenceTable, Precisions
from .samplers import Scheme, collapsed_weights, sweep_columns


@dataclass
class BenchRow:
    family: str
    size: int
    scheme: str
    p: int
    N: int
    n_cells: int
    pair_work: int
    seconds_per_sweep: float


def pair_work(tbl: IncidenceTable) -> int:
    """``sum_k I_k sum_{l != k} I_l``, the size of the dense pairwise tables."""
    I = np.array(tbl.I, dtype=np.int64)
    return int(I @ (I.sum() - I))


def _sweeper(tbl: IncidenceTable, scheme, seed: int = 0):
    """A callable running ``n`` sweeps and returning wall seconds per sweep."""
    scheme = Scheme.parse(scheme)
    tau = Precisions.ones(tbl.K)
    rng = np.random.default_rng(seed)
    w = [collapsed_weights(tbl, tau, k) for k in range(1, tbl.K + 1)] if scheme.collapsed else None
    state = [np.zeros(1), [np.zeros((i, 1)) for i in tbl.I]]

    def run(n: int) -> float:
        a0, a = state
        t0 = time.perf_counter()
        for _ in range(n):
            a0, a = sweep_columns(tbl, tau, a0, a, scheme.collapsed, rng, weights=w)
        state[:] = a0, a
        return (time.perf_counter() - t0) / max(n, 1)

    # one untimed sweep builds the cached per-table arrays
    run(1)
    return run


def time_sweeps(tbl: IncidenceTable, scheme=Scheme.GS, sweeps: int = 50, repeats: int = 5,
                seed: int = 0) -> float:
    """Wall seconds per sampling sweep, the best of ``repeats`` batches."""
    run = _sweeper(tbl, scheme, seed)
    return min(run(sweeps) for _ in range(repeats))


def make_design(family: str, size: int, seed: int = 0, q: float = 0.1) -> IncidenceTable:
    """``cells``: ``size x 3`` full grid; ``mcar``: ``size x size`` with rate ``q``."""
    if family == "cells":
        return gen_balanced_cells((size, 3))
    if family == "mcar":
        return gen_mcar(size, size, q, seed, on_empty="regenerate")
    raise ValueError(f"unknown design family {family!r}")


def _bench_point(args):
    family, size, schemes, sweeps, repeats, seed = args
    tbl = make_design(family, size, seed)
    schemes = [Scheme.parse(s) for s in schemes]
    runners = [_sweeper(tbl, s, seed) for s in schemes]
    best = [np.inf] * len(schemes)
    # interleave batches so slow drifts in machine load hit every scheme alike
    for _ in range(repeats):
        for i, run in enumerate(runners):
            best[i] = min(best[i], run(sweeps))
    return [BenchRow(family, size, s.value, tbl.p, tbl.N, tbl.n_cells, pair_work(tbl), t)
            for s, t in zip(schemes, best)]


def run_bench(family: str, sizes, schemes=("GS", "cGS"), sweeps: int = 50, repeats: int = 5,
              seed: int = 0, jobs: int = 1) -> list:
    """Time every scheme on every grid point.

    Concurrent jobs compete for cores and memory bandwidth, so timings are
    only comparable within a run that used ``jobs=1``.
    """
    tasks = [(family, int(n), tuple(schemes), sweeps, repeats, seed) for n in sizes]
    if jobs <= 1:
        parts = [_bench_point(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_bench_point, tasks))
    return [r for part in parts for r in part]


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` on ``log x``."""
    x, y = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    if x.size < 2 or np.ptp(x) == 0:
        raise ValueError("need at least two distinct sizes for a slope")
    return float(np.polyfit(x, y, 1)[0])


def fit_slopes(rows) -> dict:
    """Per scheme: slopes against ``p``, ``N`` and the pairwise-table size."""
    out = {}
    for scheme in sorted({r.scheme for r in rows}):
        sel = [r for r in rows if r.scheme == scheme]
        t = [r.seconds_per_sweep for r in sel]
        out[scheme] = {
            "slope_p": loglog_slope([r.p for r in sel], t),
            "slope_N": loglog_slope([r.N for r in sel], t),
            "slope_pair_work": loglog_slope([r.pair_work for r in sel], t),
        }
    return out


def time_ratio(rows, num="cGS", den="GS") -> np.ndarray:
    """Per-size ratio of per-sweep times between two schemes."""
    a = {r.size: r.seconds_per_sweep for r in rows if r.scheme == num}
    b = {r.size: r.seconds_per_sweep for r in rows if r.scheme == den}
    return np.array([a[s] / b[s] for s in sorted(a) if s in b])


def write_rows(rows, path) -> Path:
    path = Path(path)
    fields = list(BenchRow.__dataclass_fields__)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))
    return path
