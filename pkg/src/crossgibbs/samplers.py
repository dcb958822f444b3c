"""Gibbs and collapsed Gibbs samplers for Gaussian crossed random effects.

Factor indices ``k`` run over ``1..K`` (0 is the global mean), matching the
precision vector ``tau[k]``; level indices ``j`` are 0-based.

Sweeps operate on column stacks: the global mean is an array of shape
``(m,)`` and factor ``k`` an array of shape ``(I_k, m)``.  Sampling uses
``m = 1``; the rate analysis pushes many columns through the same code with
the random draws switched off.
"""

from __future__ import annotations

import enum
import json
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diagnostics
from .model import DesignClass, IncidenceTable, Precisions

FLAT_SIGMA_PRIOR = (-0.5, 0.0)


class Scheme(str, enum.Enum):
    GS = "GS"
    CGS = "cGS"
    GS_PX = "GS+PX"
    CGS_PX = "cGS+PX"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "+").replace("-", "+")
        for s in cls:
            if s.value.lower() == key:
                return s
        raise ValueError(f"unknown scheme {value!r}; expected one of {[s.value for s in cls]}")

    @property
    def collapsed(self) -> bool:
        return self in (Scheme.CGS, Scheme.CGS_PX)

    @property
    def expanded(self) -> bool:
        return self in (Scheme.GS_PX, Scheme.CGS_PX)


@dataclass
class ModelState:
    """Global mean, factor levels and precisions."""

    a0: float
    a: list
    tau: Precisions

    @classmethod
    def zeros(cls, tbl: IncidenceTable, tau: Precisions | None = None) -> "ModelState":
        tau = tau if tau is not None else Precisions.ones(tbl.K)
        if tau.K != tbl.K:
            raise ValueError(f"need {tbl.K + 1} precisions, got {tau.K + 1}")
        return cls(0.0, [np.zeros(i) for i in tbl.I], tau)

    def factor(self, k: int) -> np.ndarray:
        return self.a[k - 1]

    def averages(self) -> np.ndarray:
        """``(a0, abar_1, ..., abar_K)``."""
        return np.array([self.a0] + [float(ak.mean()) for ak in self.a])

    def increments(self) -> list:
        return [ak - ak.mean() for ak in self.a]

    def pack(self) -> np.ndarray:
        return np.concatenate([[self.a0]] + list(self.a))

    @classmethod
    def unpack(cls, x, tbl: IncidenceTable, tau: Precisions) -> "ModelState":
        off = tbl.offsets
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), [x[off[k]:off[k + 1]].copy() for k in range(1, tbl.K + 1)], tau)

    def copy(self) -> "ModelState":
        return ModelState(self.a0, [ak.copy() for ak in self.a], self.tau)


# ---------------------------------------------------------------------------
# conditional distributions (column form)


class _Plan:
    """Per-table arrays reused by every sweep."""

    def __init__(self, tbl: IncidenceTable):
        self.K = tbl.K
        self.N = tbl.N
        self.grand_mean = tbl.grand_mean
        self.cells = tbl.design is DesignClass.BALANCED_CELLS
        self.levels = tbl.design is not DesignClass.UNBALANCED
        self.counts = [nk.astype(float) for nk in tbl.level_counts]
        self.inv_counts = [np.divide(1.0, nk, out=np.zeros(nk.size), where=nk > 0)[:, None]
                           for nk in self.counts]
        self.ybar = [mk[:, None] for mk in tbl.level_means]
        self.pairs = [[(l0, tbl.pair_table(k0, l0)) for l0 in range(tbl.K) if l0 != k0]
                      for k0 in range(tbl.K)]


def _plan(tbl: IncidenceTable) -> _Plan:
    plan = tbl.cache.get("plan")
    if plan is None:
        plan = tbl.cache["plan"] = _Plan(tbl)
    return plan


def _cross_sums(tbl: IncidenceTable, k0: int, a, fast=True) -> np.ndarray:
    """``sum_{l != k} n^(k,l) a^(l) / n^(k)`` per level of factor ``k0`` (0-based)."""
    plan = _plan(tbl)
    if fast and plan.cells:
        tot = 0.0
        for l0, _ in plan.pairs[k0]:
            tot = tot + a[l0].mean(axis=0)
        return np.broadcast_to(tot, (tbl.I[k0], a[0].shape[1]))
    pairs = plan.pairs[k0]
    if not pairs:
        return np.zeros((tbl.I[k0], a[0].shape[1]))
    l0, m = pairs[0]
    acc = m @ a[l0]
    for l0, m in pairs[1:]:
        acc += m @ a[l0]
    return acc * plan.inv_counts[k0]


def _global_columns(tbl, tau, a, fast=True):
    plan = _plan(tbl)
    if fast and plan.levels:
        mean = plan.grand_mean - sum(ak.mean(axis=0) for ak in a)
    else:
        mean = plan.grand_mean - sum(nk @ ak for nk, ak in zip(plan.counts, a)) / plan.N
    return mean, 1.0 / (plan.N * tau[0])


def _partial_residual(tbl, k0, a, fast=True):
    """Level means of factor ``k0`` minus the other factors' contribution."""
    return _plan(tbl).ybar[k0] - _cross_sums(tbl, k0, a, fast)


def _factor_columns(tbl, tau, k0, a0, a, fast=True, partial=None):
    plan = _plan(tbl)
    nk = plan.counts[k0]
    prec = nk * tau[0] + tau[k0 + 1]
    shrink = nk * tau[0] / prec
    if partial is None:
        partial = _partial_residual(tbl, k0, a, fast)
    return shrink[:, None] * (partial - a0), 1.0 / prec


def collapsed_weights(tbl: IncidenceTable, tau: Precisions, k: int) -> np.ndarray:
    """``s_j = n_j tau_0 / (tau_k + n_j tau_0)`` for factor ``k`` (1-based)."""
    nk = tbl.level_counts[k - 1]
    return nk * tau[0] / (tau[k] + nk * tau[0])


def _collapsed_global_columns(tbl, tau, k0, a, fast=True, s=None, partial=None):
    s = collapsed_weights(tbl, tau, k0 + 1) if s is None else s
    S = s.sum()
    if S <= 0:
        raise ValueError(f"factor {k0 + 1} has no observed levels; collapsed update undefined")
    if partial is None:
        partial = _partial_residual(tbl, k0, a, fast)
    return s @ partial / S, 1.0 / (tau[k0 + 1] * S)


def _columns(state: ModelState):
    return np.array([state.a0]), [ak[:, None].astype(float) for ak in state.a]


def cond_global(state: ModelState, tbl: IncidenceTable, fast: bool = True):
    """Mean and variance of the full conditional of the global mean."""
    a0, a = _columns(state)
    mean, var = _global_columns(tbl, state.tau, a, fast)
    return float(np.ravel(mean)[0]), float(var)


def cond_factor(k: int, state: ModelState, tbl: IncidenceTable, fast: bool = True):
    """Conditional means and variances of all levels of factor ``k``."""
    _check_factor(k, tbl)
    a0, a = _columns(state)
    mean, var = _factor_columns(tbl, state.tau, k - 1, a0, a, fast)
    return mean[:, 0], var


def cond_level(k: int, j: int, state: ModelState, tbl: IncidenceTable, fast: bool = True):
    """Full conditional of level ``j`` of factor ``k``.

    Levels without observations get their prior ``N(0, 1/tau_k)``.
    """
    mean, var = cond_factor(k, state, tbl, fast)
    return float(mean[j]), float(var[j])


def cond_global_collapsed(k: int, state: ModelState, tbl: IncidenceTable, fast: bool = True):
    """Law of the global mean given all factors except ``k`` (factor ``k`` integrated out)."""
    _check_factor(k, tbl)
    a0, a = _columns(state)
    mean, var = _collapsed_global_columns(tbl, state.tau, k - 1, a, fast)
    return float(mean[0]), float(var)


def _check_factor(k, tbl):
    if not 1 <= k <= tbl.K:
        raise ValueError(f"factor index must lie in 1..{tbl.K}, got {k}")


# ---------------------------------------------------------------------------
# sweeps


def default_order(tbl: IncidenceTable, collapsed: bool) -> tuple:
    return tuple(range(1, tbl.K + 1)) if collapsed else tuple(range(tbl.K + 1))


def _check_order(order, tbl, collapsed):
    want = set(default_order(tbl, collapsed))
    if len(order) != len(want) or set(order) != want:
        raise ValueError(f"update order must be a permutation of {sorted(want)}, got {order}")


def sweep_columns(tbl, tau, a0, a, collapsed=False, rng=None, order=None, fast=True, weights=None):
    """One deterministic-scan sweep on column stacks.

    With ``rng=None`` every draw is replaced by its conditional mean, which
    makes the sweep the affine map ``x -> Bx + b``.

    Parameters
    ----------
    a0 : ndarray (m,)
    a : list of ndarray (I_k, m)
    collapsed : bool
        Update ``(a0, a^(k))`` jointly for each factor instead of ``a0`` alone.
    order : sequence of int, optional
        Block update order: a permutation of ``0..K`` for the plain sweep,
        of ``1..K`` for the collapsed one.
    weights : list of ndarray, optional
        Precomputed collapsed weights per factor.
    """
    order = default_order(tbl, collapsed) if order is None else tuple(order)
    a0 = np.array(a0, dtype=float)
    a = [np.array(ak, dtype=float) for ak in a]
    m = a0.shape[0]
    for blk in order:
        if blk == 0:
            mean, var = _global_columns(tbl, tau, a, fast)
            a0 = mean if rng is None else mean + np.sqrt(var) * rng.standard_normal(m)
            continue
        k0 = blk - 1
        # the other factors stay fixed across both updates of this block
        partial = _partial_residual(tbl, k0, a, fast)
        if collapsed:
            s = None if weights is None else weights[k0]
            mean, var = _collapsed_global_columns(tbl, tau, k0, a, fast, s, partial)
            a0 = mean if rng is None else mean + np.sqrt(var) * rng.standard_normal(m)
        mean, var = _factor_columns(tbl, tau, k0, a0, a, fast, partial)
        if rng is None:
            a[k0] = mean
        else:
            a[k0] = mean + np.sqrt(var)[:, None] * rng.standard_normal(mean.shape)
    return a0, a


def _sweep(state, tbl, rng, collapsed, order, fast):
    if order is not None:
        _check_order(order, tbl, collapsed)
    a0, a = _columns(state)
    a0, a = sweep_columns(tbl, state.tau, a0, a, collapsed, rng, order, fast)
    return ModelState(float(a0[0]), [ak[:, 0] for ak in a], state.tau)


def gibbs_sweep(state: ModelState, tbl: IncidenceTable, rng, order=None, fast=True) -> ModelState:
    """Global mean first, then every factor's levels from their full conditionals."""
    return _sweep(state, tbl, rng, False, order, fast)


def collapsed_sweep(state: ModelState, tbl: IncidenceTable, rng, order=None, fast=True) -> ModelState:
    """For each factor: global mean with the factor integrated out, then the factor."""
    return _sweep(state, tbl, rng, True, order, fast)


# ---------------------------------------------------------------------------
# unknown precisions


def _fitted_cells(state: ModelState, tbl: IncidenceTable) -> np.ndarray:
    fit = np.full(tbl.n_cells, state.a0)
    for k0, ak in enumerate(state.a):
        fit += ak[tbl.cell_levels[:, k0]]
    return fit


def update_precisions(state: ModelState, tbl: IncidenceTable, rng, update_tau0: bool = False,
                      prior=FLAT_SIGMA_PRIOR) -> Precisions:
    """Draw precisions from their conditional given the levels.

    With prior density ``tau^(alpha-1) exp(-beta tau)`` (``prior=(alpha, beta)``)
    the conditional of ``tau_k`` is Gamma with shape ``alpha + I_k/2`` and rate
    ``beta + S_k/2``.  The default ``(-1/2, 0)`` is the flat prior on
    ``sigma_k = tau_k^(-1/2)``.
    """
    alpha, beta = prior
    tau = np.array(state.tau.tau)
    for k0, ak in enumerate(state.a):
        shape = alpha + 0.5 * ak.size
        if shape <= 0:
            raise ValueError(f"factor {k0 + 1} has too few levels for a proper precision conditional")
        S = float(ak @ ak)
        rate = beta + 0.5 * S
        if rate <= 0:
            raise ValueError(f"factor {k0 + 1}: zero sum of squares, precision conditional degenerate")
        tau[k0 + 1] = rng.gamma(shape, 1.0 / rate)
    if update_tau0:
        resid = tbl.cell_means - _fitted_cells(state, tbl)
        R = float(tbl.cell_counts @ (resid * resid) + tbl.cell_ss.sum())
        shape = alpha + 0.5 * tbl.N
        if shape <= 0 or beta + 0.5 * R <= 0:
            raise ValueError("residual precision conditional is improper")
        tau[0] = rng.gamma(shape, 1.0 / (beta + 0.5 * R))
    return Precisions(tau)


def px_transform(state: ModelState, tbl: IncidenceTable, rng, rescale: bool = True,
                 prior=FLAT_SIGMA_PRIOR) -> ModelState:
    """Parameter-expansion group moves, one pair per factor.

    Location: shift ``a^(k) -> a^(k) - xi``, ``a0 -> a0 + xi`` with
    ``xi ~ N(abar_k, 1/(I_k tau_k))``; the likelihood is unchanged by the shift.
    Scale (``rescale=True``): ``a^(k) -> c a^(k)``, ``tau_k -> tau_k / c^2``
    with ``c`` drawn from its Gaussian conditional.  Both are exact
    invariant moves of the flat-sigma posterior.
    """
    new = state.copy()
    tau = np.array(state.tau.tau)
    for k0 in range(tbl.K):
        ak = new.a[k0]
        xi = ak.mean() + rng.standard_normal() / np.sqrt(ak.size * tau[k0 + 1])
        new.a[k0] = ak - xi
        new.a0 += xi
    if rescale:
        if tuple(prior) != FLAT_SIGMA_PRIOR:
            raise ValueError("the scale move is implemented for the flat prior on sigma only")
        # the scale conditionals only need the bilinear forms a_k' n^(k,l) a_l,
        # which are rescaled in place as each factor is scaled
        plan = _plan(tbl)
        K = tbl.K
        G = np.zeros((K, K))
        for k0 in range(K):
            for l0, m in plan.pairs[k0]:
                if l0 > k0:
                    G[k0, l0] = G[l0, k0] = new.a[k0] @ (m @ new.a[l0])
        for k0 in range(K):
            ak = new.a[k0]
            nk = plan.counts[k0]
            q = float(nk @ (ak * ak))
            if q <= 0:
                continue
            lin = float((ak * nk) @ (tbl.level_means[k0] - new.a0)) - G[k0].sum()
            c = lin / q + rng.standard_normal() / np.sqrt(tau[0] * q)
            new.a[k0] = c * ak
            G[k0] *= c
            G[:, k0] *= c
            tau[k0 + 1] /= c * c
    if rescale:
        new.tau = Precisions(tau)
    return new


# ---------------------------------------------------------------------------
# chains

_PROBE = re.compile(r"^(a0|abar(\d+)|sigma(\d+)|log_tau(\d+)|a(\d+)\[(\d+)\]|da(\d+)\[(\d+)\])$")


def _probe(label: str, I):
    """Scalar extractor ``f(a0, a, tau)`` for a monitor label (``a`` in column form)."""
    m = _PROBE.match(label)
    if not m:
        raise ValueError(f"unknown monitor {label!r}")
    K = len(I)
    if label == "a0":
        return lambda a0, a, tau: a0[0]
    if m.group(2):
        k = int(m.group(2))
        f = lambda a0, a, tau: a[k - 1][:, 0].mean()
    elif m.group(3):
        k = int(m.group(3))
        f = lambda a0, a, tau: tau[k] ** -0.5
    elif m.group(4):
        k = int(m.group(4))
        f = lambda a0, a, tau: np.log(tau[k])
    elif m.group(5):
        k, j = int(m.group(5)), int(m.group(6)) - 1
        f = lambda a0, a, tau: a[k - 1][j, 0]
    else:
        k, j = int(m.group(7)), int(m.group(8)) - 1
        f = lambda a0, a, tau: a[k - 1][j, 0] - a[k - 1][:, 0].mean()
    lo = 0 if m.group(3) or m.group(4) else 1
    if not lo <= k <= K:
        raise ValueError(f"monitor {label!r} refers to a missing factor")
    if (m.group(5) or m.group(7)) and not 0 <= j < I[k - 1]:
        raise ValueError(f"monitor {label!r} refers to a missing level")
    return f


@dataclass
class SamplerConfig:
    scheme: Scheme | str = Scheme.GS
    iterations: int = 1000
    burn_in: int = 0
    seed: int = 0
    precisions_known: bool = True
    update_tau0: bool = False
    monitor: list | None = None
    order: tuple | None = None
    prior: tuple = FLAT_SIGMA_PRIOR

    def __post_init__(self):
        self.scheme = Scheme.parse(self.scheme)
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")

    def monitors(self, K: int) -> list:
        if self.monitor:
            return list(self.monitor)
        labels = ["a0"] + [f"abar{k}" for k in range(1, K + 1)]
        if not self.precisions_known:
            if self.update_tau0:
                labels.append("sigma0")
            labels += [f"sigma{k}" for k in range(1, K + 1)]
        return labels

    def as_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        d["order"] = None if self.order is None else list(self.order)
        d["prior"] = list(self.prior)
        return d


@dataclass
class Chain:
    samples: np.ndarray
    labels: list
    wall_time_per_1000_iter: float
    seed: int
    config: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "draws": int(self.samples.shape[0]),
            "wall_time_per_1000_iter": self.wall_time_per_1000_iter,
            "monitors": diagnostics.summarize(self.samples, self.labels, self.wall_time_per_1000_iter),
        }

    def to_csv(self, path) -> Path:
        path = Path(path)
        np.savetxt(path, self.samples, delimiter=",", header=",".join(self.labels),
                   comments="", fmt="%.17g")
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2))
        return path

    @classmethod
    def read_csv(cls, path) -> "Chain":
        with open(path, encoding="utf-8") as fh:
            labels = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data, labels, float("nan"), -1)


def run_chain(cfg: SamplerConfig, tbl: IncidenceTable, init: ModelState | None = None) -> Chain:
    """Run one chain and record the monitored scalars after burn-in."""
    state = ModelState.zeros(tbl) if init is None else init.copy()
    if state.tau.K != tbl.K:
        raise ValueError("initial state does not match the table")
    labels = cfg.monitors(tbl.K)
    probes = [_probe(lab, tbl.I) for lab in labels]
    rng = np.random.default_rng(cfg.seed)
    collapsed = cfg.scheme.collapsed
    order = cfg.order
    if order is not None:
        _check_order(order, tbl, collapsed)
    keep = cfg.iterations - cfg.burn_in
    out = np.empty((keep, len(probes)))

    a0, a = _columns(state)
    tau = state.tau
    weights = [collapsed_weights(tbl, tau, k) for k in range(1, tbl.K + 1)] if collapsed else None
    t0 = time.perf_counter()
    for it in range(cfg.iterations):
        a0, a = sweep_columns(tbl, tau, a0, a, collapsed, rng, order, True, weights)
        if not cfg.precisions_known or cfg.scheme.expanded:
            state = ModelState(float(a0[0]), [ak[:, 0] for ak in a], tau)
            if not cfg.precisions_known:
                state.tau = update_precisions(state, tbl, rng, cfg.update_tau0, cfg.prior)
            if cfg.scheme.expanded:
                state = px_transform(state, tbl, rng, rescale=not cfg.precisions_known, prior=cfg.prior)
            a0, a = _columns(state)
            if state.tau is not tau:
                tau = state.tau
                if collapsed:
                    weights = [collapsed_weights(tbl, tau, k) for k in range(1, tbl.K + 1)]
        if it >= cfg.burn_in:
            tv = tau.tau
            out[it - cfg.burn_in] = [f(a0, a, tv) for f in probes]
    elapsed = time.perf_counter() - t0
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("chain produced non-finite values")
    return Chain(out, labels, 1000.0 * elapsed / cfg.iterations, cfg.seed, cfg.as_dict())


def _run_one(args):
    cfg, tbl, init = args
    return run_chain(cfg, tbl, init)


def run_chains(cfg: SamplerConfig, tbl: IncidenceTable, runs: int, jobs: int = 1,
               init: ModelState | None = None) -> list:
    """Independent replicate chains with seeds spawned from ``cfg.seed``."""
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(runs)]
    cfgs = []
    for s in seeds:
        d = cfg.as_dict()
        d.update(seed=s, scheme=cfg.scheme, order=cfg.order, prior=tuple(cfg.prior))
        cfgs.append(SamplerConfig(**d))
    if jobs <= 1 or runs == 1:
        return [run_chain(c, tbl, init) for c in cfgs]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_run_one, [(c, tbl, init) for c in cfgs]))
