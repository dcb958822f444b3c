"""Synthetic designs: MCAR, balanced cells, balanced levels, disconnected communities."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import IncidenceTable, Precisions, from_arrays, write_csv


def _response(levels, counts, I, rng, simulate, tau):
    """Cell means: zeros, or one draw from the model when ``simulate``."""
    if not simulate:
        return np.zeros(len(counts))
    tau = Precisions.ones(len(I)) if tau is None else tau
    fit = np.zeros(len(counts))
    for k, ik in enumerate(I):
        effects = rng.standard_normal(ik) / np.sqrt(tau[k + 1])
        fit += effects[levels[:, k]]
    return fit + rng.standard_normal(len(counts)) / np.sqrt(counts * tau[0])


def gen_mcar(I1: int, I2: int, q: float, seed: int, simulate_y: bool = False, tau=None,
             on_empty: str = "error", max_tries: int = 100) -> IncidenceTable:
    """Two-factor design where every cell is observed once with probability ``q``."""
    if not 0 < q <= 1:
        raise ValueError(f"need 0 < q <= 1, got {q}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        mask = rng.random((I1, I2)) < q
        if mask.any():
            break
        if on_empty != "regenerate":
            raise ValueError("MCAR draw produced no observations")
    else:
        raise ValueError(f"no observations after {max_tries} draws")
    levels = np.argwhere(mask)
    counts = np.ones(len(levels), dtype=np.int64)
    y = _response(levels, counts, (I1, I2), rng, simulate_y, tau)
    return from_arrays(levels, y, (I1, I2), zero_based=True)


def gen_balanced_cells(I: Sequence[int], n_per_cell: int = 1, seed: int = 0,
                       simulate_y: bool = False, tau=None) -> IncidenceTable:
    """Full grid with the same count in every cell."""
    if n_per_cell < 1:
        raise ValueError("n_per_cell must be at least 1")
    I = tuple(int(i) for i in I)
    levels = np.indices(I).reshape(len(I), -1).T
    counts = np.full(len(levels), n_per_cell, dtype=np.int64)
    y = _response(levels, counts, I, np.random.default_rng(seed), simulate_y, tau)
    return from_arrays(levels, y, I, weights=counts, zero_based=True)


def gen_balanced_levels_K2(I: int, m: int, seed: int, simple: bool = True,
                           simulate_y: bool = False, tau=None, max_tries: int = 2000) -> IncidenceTable:
    """Union of ``m`` random ``I x I`` permutation matrices.

    Every row and column then holds ``m`` observations.  In ``simple`` mode
    each permutation is redrawn until it avoids the cells already used; when
    that keeps failing (large ``m``) the design is built from ``m`` distinct
    cyclic shifts under random row and column relabelings instead.
    """
    if not 1 <= m <= I:
        raise ValueError(f"need 1 <= m <= I, got m={m}, I={I}")
    rng = np.random.default_rng(seed)
    rows = np.arange(I)
    cols = []
    if simple:
        used = np.zeros((I, I), dtype=bool)
        for _ in range(m):
            for _ in range(max_tries):
                perm = rng.permutation(I)
                if not used[rows, perm].any():
                    break
            else:
                cols = None
                break
            used[rows, perm] = True
            cols.append(perm)
        if cols is None:
            shifts = rng.choice(I, size=m, replace=False)
            rp, cp = rng.permutation(I), rng.permutation(I)
            cols = [cp[(rows + s) % I][rp] for s in shifts]
    else:
        cols = [rng.permutation(I) for _ in range(m)]
    levels = np.column_stack([np.tile(rows, m), np.concatenate(cols)])
    counts = np.ones(len(levels), dtype=np.int64)
    y = _response(levels, counts, (I, I), rng, simulate_y, tau)
    return from_arrays(levels, y, (I, I), weights=counts, zero_based=True)


def gen_disconnected(I_per_community: int, communities: int, n_per_cell: int = 1) -> IncidenceTable:
    """Block-diagonal design: each community fully crossed, nothing across."""
    if I_per_community < 1 or communities < 1:
        raise ValueError("community size and count must be positive")
    c = I_per_community
    block = np.indices((c, c)).reshape(2, -1).T
    levels = np.vstack([block + g * c for g in range(communities)])
    counts = np.full(len(levels), n_per_cell, dtype=np.int64)
    I = (c * communities, c * communities)
    return from_arrays(levels, np.zeros(len(levels)), I, weights=counts, zero_based=True)


def cross_with_full(tbl: IncidenceTable, I_new: int) -> IncidenceTable:
    """Add a factor crossed with every existing cell (keeps balanced levels)."""
    n = tbl.n_cells
    levels = np.column_stack([np.repeat(tbl.cell_levels, I_new, axis=0), np.tile(np.arange(I_new), n)])
    counts = np.repeat(tbl.cell_counts, I_new)
    means = np.repeat(tbl.cell_means, I_new)
    return from_arrays(levels, means, tuple(tbl.I) + (I_new,), weights=counts, zero_based=True)


def write_design(tbl: IncidenceTable, path, meta: dict | None = None) -> tuple:
    """Write the design CSV and a sibling ``.json`` with its metadata."""
    path = Path(path)
    write_csv(tbl, path)
    info = dict(tbl.summary())
    info.update(meta or {})
    jpath = path.with_suffix(".json")
    jpath.write_text(json.dumps(info, indent=2))
    return path, jpath
