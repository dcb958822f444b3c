"""Crossed random effects data: observations, incidence tables and design classes.

An :class:`IncidenceTable` holds the sparse contingency table of cell counts
together with every sufficient statistic the samplers and the rate analysis
need: one-way margins ``n^(k)``, two-way tables ``n^(l,k)``, count-weighted
level means and the grand mean.

Factor levels are 1-based at the I/O boundary (CSV files, :class:`Observation`)
and 0-based inside arrays.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

# pair tables at or below this many entries are kept dense (faster tiny matvecs)
DENSE_PAIR_LIMIT = 4096


class DesignClass(str, enum.Enum):
    BALANCED_CELLS = "BalancedCells"
    BALANCED_LEVELS = "BalancedLevels"
    UNBALANCED = "Unbalanced"


@dataclass(frozen=True)
class Observation:
    """A single (possibly replicated) response.

    ``levels`` are 1-based level indices, one per factor; ``weight`` is the
    number of replicates whose mean is ``y``.
    """

    levels: tuple[int, ...]
    y: float
    weight: int = 1


@dataclass(frozen=True)
class Precisions:
    """Precision vector ``(tau_0, tau_1, ..., tau_K)``."""

    tau: np.ndarray

    def __post_init__(self):
        tau = np.array(self.tau, dtype=float).ravel()
        if tau.size < 1 or not np.all(np.isfinite(tau)) or np.any(tau <= 0):
            raise ValueError(f"precisions must be finite and positive, got {tau}")
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)

    @classmethod
    def ones(cls, K: int) -> "Precisions":
        return cls(np.ones(K + 1))

    @property
    def K(self) -> int:
        return self.tau.size - 1

    def __getitem__(self, k):
        return self.tau[k]

    def __eq__(self, other):
        return isinstance(other, Precisions) and np.array_equal(self.tau, other.tau)

    def __hash__(self):
        return hash(self.tau.tobytes())


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class IncidenceTable:
    """Sparse incidence table with precomputed margins and weighted means.

    Attributes
    ----------
    I : tuple of int
        Number of levels per factor.
    cell_levels : ndarray (n_cells, K)
        0-based level indices of every non-empty cell.
    cell_counts : ndarray (n_cells,)
        Observation count in each cell (all >= 1).
    cell_means : ndarray (n_cells,)
        Mean response in each cell.
    cell_ss : ndarray (n_cells,)
        Within-cell sum of squared deviations from the cell mean.
    level_counts : list of ndarray
        ``n^(k)``, one vector of length ``I_k`` per factor.
    level_means : list of ndarray
        Count-weighted response mean per level (0 for empty levels).
    grand_mean : float
        Count-weighted mean response over all observations.
    """

    I: tuple
    cell_levels: np.ndarray
    cell_counts: np.ndarray
    cell_means: np.ndarray
    cell_ss: np.ndarray
    level_counts: list = field(repr=False)
    level_means: list = field(repr=False)
    grand_mean: float = 0.0
    labels: list | None = field(default=None, repr=False)
    _pairs: dict = field(default_factory=dict, repr=False)
    _design: list = field(default_factory=list, repr=False)
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def K(self) -> int:
        return len(self.I)

    @property
    def N(self) -> int:
        return int(self.cell_counts.sum())

    @property
    def p(self) -> int:
        """Number of location parameters, global mean included."""
        return 1 + int(sum(self.I))

    @property
    def n_cells(self) -> int:
        return self.cell_counts.size

    @property
    def offsets(self) -> np.ndarray:
        """Start index of every block in the packed parameter vector."""
        return np.cumsum([0, 1] + list(self.I))

    @property
    def design(self) -> DesignClass:
        if not self._design:
            self._design.append(classify_design(self))
        return self._design[0]

    def pair_table(self, k: int, l: int, dense: bool | None = None):
        """Two-way table ``n^(k,l)`` with rows indexed by factor ``k``.

        ``k`` and ``l`` are 0-based factor indices.  Small tables come back as
        dense arrays unless ``dense=False``.
        """
        if k == l:
            raise ValueError("pair table needs two distinct factors")
        key = (k, l)
        if key not in self._pairs:
            m = sp.csr_matrix(
                (self.cell_counts.astype(float),
                 (self.cell_levels[:, k], self.cell_levels[:, l])),
                shape=(self.I[k], self.I[l]),
            )
            m.sum_duplicates()
            if self.I[k] * self.I[l] <= DENSE_PAIR_LIMIT:
                m = m.toarray()
                m.setflags(write=False)
            self._pairs[key] = m
        m = self._pairs[key]
        if dense is True and sp.issparse(m):
            return m.toarray()
        if dense is False and not sp.issparse(m):
            return sp.csr_matrix(m)
        return m

    def summary(self) -> dict:
        return {
            "K": self.K,
            "I": [int(i) for i in self.I],
            "N": self.N,
            "p": self.p,
            "n_cells": self.n_cells,
            "design": self.design.value,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)

    def restrict(self, factors: Sequence[int]) -> "IncidenceTable":
        """Table of the sub-model keeping only ``factors`` (1-based)."""
        cols = [f - 1 for f in factors]
        if not cols or any(c < 0 or c >= self.K for c in cols):
            raise ValueError(f"factor indices must lie in 1..{self.K}, got {factors}")
        levels = self.cell_levels[:, cols]
        labels = None if self.labels is None else [self.labels[c] for c in cols]
        return from_arrays(
            levels, self.cell_means, [self.I[c] for c in cols],
            weights=self.cell_counts, ss=self.cell_ss, zero_based=True, labels=labels,
        )

    def with_zero_response(self) -> "IncidenceTable":
        return from_arrays(
            self.cell_levels, np.zeros(self.n_cells), self.I,
            weights=self.cell_counts, zero_based=True, labels=self.labels,
        )

    def same_statistics(self, other: "IncidenceTable", rtol: float = 1e-12) -> bool:
        """Whether two tables share counts, margins and mean responses."""
        if self.I != other.I or self.n_cells != other.n_cells:
            return False
        a = np.lexsort(self.cell_levels.T[::-1])
        b = np.lexsort(other.cell_levels.T[::-1])
        return (
            np.array_equal(self.cell_levels[a], other.cell_levels[b])
            and np.array_equal(self.cell_counts[a], other.cell_counts[b])
            and np.allclose(self.cell_means[a], other.cell_means[b], rtol=rtol, atol=0)
            and all(np.array_equal(x, y) for x, y in zip(self.level_counts, other.level_counts))
            and np.isclose(self.grand_mean, other.grand_mean, rtol=rtol, atol=1e-15)
        )


def from_arrays(levels, y, I, weights=None, ss=None, zero_based=False, labels=None):
    """Build an :class:`IncidenceTable` from column arrays.

    Parameters
    ----------
    levels : array_like (n_rows, K)
        Integer level indices (1-based unless ``zero_based``).
    y : array_like (n_rows,)
        Responses; with ``weights`` each row is the mean of that many replicates.
    I : sequence of int
        Level counts per factor.
    weights : array_like of int, optional
        Replicate counts (default 1).
    ss : array_like, optional
        Within-row sum of squares already absorbed into each row.
    """
    levels = np.asarray(levels)
    if levels.ndim != 2:
        raise ValueError("levels must be a 2-d array (rows x factors)")
    n_rows, K = levels.shape
    if n_rows == 0:
        raise ValueError("no observations to ingest")
    I = tuple(int(i) for i in I)
    if len(I) != K:
        raise ValueError(f"got {K} factor columns but {len(I)} level counts")
    if any(i < 1 for i in I):
        raise ValueError(f"level counts must be positive, got {I}")
    if not np.issubdtype(levels.dtype, np.integer):
        as_int = levels.astype(np.int64)
        if not np.array_equal(as_int, levels):
            raise ValueError("level indices must be integers")
        levels = as_int
    levels = levels.astype(np.int64) - (0 if zero_based else 1)
    base = 0 if zero_based else 1
    for k in range(K):
        bad = np.flatnonzero((levels[:, k] < 0) | (levels[:, k] >= I[k]))
        if bad.size:
            r = int(bad[0])
            raise ValueError(
                f"row {r + 1}: level {levels[r, k] + base} of factor {k + 1} "
                f"outside {base}..{I[k] - 1 + base}"
            )
    y = np.asarray(y, dtype=float).ravel()
    if y.size != n_rows:
        raise ValueError("y must have one entry per row")
    if not np.all(np.isfinite(y)):
        raise ValueError("responses must be finite")
    w = np.ones(n_rows, dtype=np.int64) if weights is None else np.asarray(weights)
    if w.size != n_rows or np.any(w < 1) or not np.array_equal(w, np.round(w)):
        raise ValueError("weights must be positive integers, one per row")
    w = w.astype(np.int64)
    row_ss = np.zeros(n_rows) if ss is None else np.asarray(ss, dtype=float).ravel()

    cells, inv = np.unique(levels, axis=0, return_inverse=True)
    inv = inv.ravel()
    n_cells = cells.shape[0]
    counts = np.bincount(inv, weights=w, minlength=n_cells).astype(np.int64)
    sums = np.bincount(inv, weights=w * y, minlength=n_cells)
    means = sums / counts
    # pooled within-cell sum of squares: absorbed part + spread of row means
    dev = y - means[inv]
    cell_ss = np.bincount(inv, weights=row_ss + w * dev * dev, minlength=n_cells)

    N = counts.sum()
    level_counts, level_means = [], []
    for k in range(K):
        nk = np.bincount(cells[:, k], weights=counts, minlength=I[k]).astype(np.int64)
        sk = np.bincount(cells[:, k], weights=counts * means, minlength=I[k])
        mk = np.divide(sk, nk, out=np.zeros(I[k]), where=nk > 0)
        level_counts.append(_frozen(nk))
        level_means.append(_frozen(mk))
    grand = float(np.dot(counts, means) / N)
    return IncidenceTable(
        I=I,
        cell_levels=_frozen(cells),
        cell_counts=_frozen(counts),
        cell_means=_frozen(means),
        cell_ss=_frozen(cell_ss),
        level_counts=level_counts,
        level_means=level_means,
        grand_mean=grand,
        labels=labels,
    )


def ingest_observations(rows: Iterable[Observation], I: Sequence[int]) -> IncidenceTable:
    """Aggregate observations into an :class:`IncidenceTable`."""
    rows = list(rows)
    if not rows:
        raise ValueError("no observations to ingest")
    K = len(I)
    for r, obs in enumerate(rows):
        if len(obs.levels) != K:
            raise ValueError(f"row {r + 1}: expected {K} levels, got {len(obs.levels)}")
    levels = np.array([obs.levels for obs in rows], dtype=np.int64)
    return from_arrays(
        levels,
        [obs.y for obs in rows],
        I,
        weights=[obs.weight for obs in rows],
    )


def classify_design(tbl: IncidenceTable) -> DesignClass:
    """Classify the design by exact integer comparisons of cell and level counts."""
    N = tbl.N
    grid = 1
    for i in tbl.I:
        grid *= int(i)
    if tbl.n_cells == grid and np.all(tbl.cell_counts == tbl.cell_counts[0]):
        return DesignClass.BALANCED_CELLS
    for k, nk in enumerate(tbl.level_counts):
        if N % tbl.I[k] or np.any(nk != N // tbl.I[k]):
            return DesignClass.UNBALANCED
    return DesignClass.BALANCED_LEVELS


def read_csv(path, I: Sequence[int] | None = None, relabel: bool = False) -> IncidenceTable:
    """Read a ``f1,...,fK,y[,w]`` CSV file.

    With ``relabel`` every factor column is mapped to dense 1..I_k indices in
    sorted label order and the mapping is kept in ``tbl.labels``.  Otherwise
    columns must hold integer indices; ``I`` defaults to the column maxima.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        raw = [row for row in reader if row]
    if "y" not in header:
        raise ValueError(f"{path}: header must contain a 'y' column")
    iy = header.index("y")
    iw = header.index("w") if "w" in header else None
    fcols = [i for i, h in enumerate(header) if i not in (iy, iw)]
    if not raw:
        raise ValueError(f"{path}: no observations")
    y = np.array([float(r[iy]) for r in raw])
    w = None if iw is None else np.array([int(r[iw]) for r in raw])
    labels = None
    if relabel:
        cols, labels = [], []
        for c in fcols:
            uniq, codes = np.unique([r[c].strip() for r in raw], return_inverse=True)
            cols.append(codes.ravel() + 1)
            labels.append([str(u) for u in uniq])
        levels = np.column_stack(cols)
        I = [len(lab) for lab in labels]
    else:
        try:
            levels = np.array([[int(r[c]) for c in fcols] for r in raw], dtype=np.int64)
        except ValueError as exc:
            raise ValueError(f"{path}: non-integer level ({exc}); use relabel") from None
        if I is None:
            I = levels.max(axis=0).tolist()
    return from_arrays(levels, y, I, weights=w, labels=labels)


def write_csv(tbl: IncidenceTable, path, names: Sequence[str] | None = None) -> Path:
    """Write one line per non-empty cell (cell mean ``y`` and count ``w``).

    Cells with count 1 omit nothing: the ``w`` column is written only when
    some count exceeds one.
    """
    path = Path(path)
    names = list(names) if names else [f"f{k + 1}" for k in range(tbl.K)]
    with_w = bool(np.any(tbl.cell_counts > 1))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(names + ["y"] + (["w"] if with_w else []))
        for lv, m, c in zip(tbl.cell_levels + 1, tbl.cell_means, tbl.cell_counts):
            row = [int(v) for v in lv] + [repr(float(m))]
            if with_w:
                row.append(int(c))
            wr.writerow(row)
    return path
