"""Locating and loading the InstEval lecture-evaluation data."""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import IncidenceTable, from_arrays

INSTEVAL_ENV = "CROSSGIBBS_INSTEVAL"
INSTEVAL_FACTORS = ("s", "d", "studage", "lectage", "service", "dept")
_CANDIDATES = (
    Path.home() / ".pydataset" / "resources" / "rdata" / "csv" / "lme4" / "InstEval.csv",
    Path("data") / "InstEval.csv",
)


def find_insteval(path=None) -> Path:
    """Resolve the InstEval CSV: explicit path, then ``$CROSSGIBBS_INSTEVAL``,
    then the ``pydataset`` cache and ``./data``."""
    tried = []
    for cand in (path, os.environ.get(INSTEVAL_ENV), *_CANDIDATES):
        if not cand:
            continue
        cand = Path(cand).expanduser()
        if cand.is_file():
            return cand
        tried.append(str(cand))
    raise FileNotFoundError(
        "InstEval CSV not found (tried: " + ", ".join(tried) + "). "
        f"Set {INSTEVAL_ENV} or pass a path; `pip install pydataset` and "
        "`python -c \"import pydataset; pydataset.data('InstEval')\"` fetches it.")


def load_insteval(path=None, factors: Sequence[int] | None = None,
                  with_response: bool = True) -> IncidenceTable:
    """Load InstEval as a crossed design.

    Parameters
    ----------
    factors : sequence of int, optional
        1-based positions in ``(s, d, studage, lectage, service, dept)``;
        default all six.
    with_response : bool
        Keep the ratings ``y``; otherwise responses are set to zero.

    Level codes are relabeled to dense indices in sorted code order and the
    original codes kept in ``tbl.labels``.
    """
    path = find_insteval(path)
    factors = tuple(range(1, 7)) if factors is None else tuple(int(f) for f in factors)
    if not factors or any(not 1 <= f <= 6 for f in factors) or len(set(factors)) != len(factors):
        raise ValueError(f"factors must be distinct values in 1..6, got {factors}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        idx = [header.index(INSTEVAL_FACTORS[f - 1]) for f in factors]
        iy = header.index("y")
        rows = [(tuple(r[i] for i in idx), r[iy]) for r in reader if r]
    raw = np.array([[int(v) for v in lv] for lv, _ in rows], dtype=np.int64)
    y = np.array([float(v) for _, v in rows]) if with_response else np.zeros(len(rows))
    cols, labels = [], []
    for k in range(raw.shape[1]):
        uniq, codes = np.unique(raw[:, k], return_inverse=True)
        cols.append(codes.ravel())
        labels.append([str(u) for u in uniq])
    levels = np.column_stack(cols)
    return from_arrays(levels, y, [len(u) for u in labels], zero_based=True, labels=labels)
