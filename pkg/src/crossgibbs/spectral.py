"""Convergence rates of the Gaussian samplers.

With known precisions a sweep is a Gaussian autoregression
``x(t+1) | x(t) ~ N(B x(t) + b, .)`` on the packed vector
``x = (a0, a^(1), ..., a^(K))``; the rate of convergence is the spectral
radius of ``B``.  ``B`` is never written down unless asked for: the sweep
with every draw replaced by its conditional mean is ``x -> Bx + b``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import DesignClass, IncidenceTable, Precisions
from .samplers import Scheme, default_order, sweep_columns, _check_order

DENSE_LIMIT = 5000


class TheoryKind(str, enum.Enum):
    BALANCED_CELLS = "BalancedCellsThm2"
    BALANCED_LEVELS_K2 = "BalancedLevelsK2Thm4"
    CONJECTURE = "ConjectureKgt2"
    LOWER_BOUND = "LowerBoundThm3"
    NONE = "None"


class Method(str, enum.Enum):
    DENSE = "DenseEigen"
    POWER = "PowerIteration"


class Subspace(str, enum.Enum):
    FULL = "Full"
    ZERO_SUM = "ZeroSumResiduals"


class NotConvergedError(RuntimeError):
    def __init__(self, estimate, residual, iterations):
        super().__init__(
            f"power iteration did not converge after {iterations} iterations "
            f"(estimate {estimate:.12g}, residual {residual:.3g})"
        )
        self.estimate = estimate
        self.residual = residual
        self.iterations = iterations


def mixing_time(rho: float) -> float:
    """Inverse spectral gap ``1 / (1 - rho)``; ``inf`` when ``rho >= 1``."""
    if rho < 0:
        raise ValueError(f"rate must be nonnegative, got {rho}")
    if rho >= 1:
        return math.inf
    return 1.0 / (1.0 - rho)


@dataclass
class RateReport:
    scheme: str
    rho_numeric: float | None = None
    mixing_numeric: float | None = None
    rho_theory: float | None = None
    mixing_theory: float | None = None
    rho_aux: float | None = None
    theory_kind: str = TheoryKind.NONE.value
    theory_exact: bool = False
    method: str | None = None
    iterations_used: int | None = None
    residual: float | None = None
    residual_tolerance: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


# ---------------------------------------------------------------------------
# the autoregressive matrix


def _gaussian_scheme(scheme) -> Scheme:
    scheme = Scheme.parse(scheme)
    if scheme.expanded:
        raise ValueError("rates are defined for the Gaussian schemes GS and cGS only")
    return scheme


def _split(x, tbl):
    off = tbl.offsets
    x = np.asarray(x, dtype=float)
    flat = x.ndim == 1
    X = x[:, None] if flat else x
    if X.shape[0] != tbl.p:
        raise ValueError(f"vector has length {X.shape[0]}, model has p = {tbl.p}")
    return flat, X[0], [X[off[k]:off[k + 1]] for k in range(1, tbl.K + 1)]


def _sweep_means(scheme, tbl, tau, a0, a, order):
    a0, a = sweep_columns(tbl, tau, a0, a, scheme.collapsed, None, order)
    return np.vstack([a0[None, :]] + list(a))


def mean_map(scheme, tbl: IncidenceTable, tau: Precisions, x, order=None) -> np.ndarray:
    """``B x``: a mean-mode sweep of ``x`` minus the mean-mode sweep of 0.

    ``x`` may be a vector of length ``p`` or a ``(p, m)`` stack of columns.
    """
    scheme = _gaussian_scheme(scheme)
    if order is not None:
        _check_order(tuple(order), tbl, scheme.collapsed)
    flat, a0, a = _split(x, tbl)
    img = _sweep_means(scheme, tbl, tau, a0, a, order)
    z0 = np.zeros(1)
    base = _sweep_means(scheme, tbl, tau, z0, [np.zeros((i, 1)) for i in tbl.I], order)
    img = img - base
    return img[:, 0] if flat else img


def assemble_B(scheme, tbl: IncidenceTable, tau: Precisions, order=None, chunk: int = 512) -> np.ndarray:
    """Dense autoregressive matrix, built column block by column block."""
    p = tbl.p
    B = np.empty((p, p))
    for start in range(0, p, chunk):
        stop = min(p, start + chunk)
        E = np.zeros((p, stop - start))
        E[np.arange(start, stop), np.arange(stop - start)] = 1.0
        B[:, start:stop] = mean_map(scheme, tbl, tau, E, order)
    return B


def zero_sum_projector(tbl: IncidenceTable):
    """Projection onto ``{a0 = 0, sum_j a^(k)_j = 0 for every k}``."""
    off = tbl.offsets

    def project(x):
        y = np.array(x, dtype=float)
        y[0] = 0.0
        for k in range(1, tbl.K + 1):
            blk = y[off[k]:off[k + 1]]
            blk -= blk.mean(axis=0)
        return y

    return project


def zero_sum_basis(tbl: IncidenceTable) -> np.ndarray:
    """Orthonormal basis (``p`` x ``p - K - 1``) of the zero-sum residual subspace."""
    off = tbl.offsets
    cols = []
    for k in range(1, tbl.K + 1):
        n = tbl.I[k - 1]
        if n < 2:
            continue
        Z = sla.null_space(np.ones((1, n)))
        full = np.zeros((tbl.p, n - 1))
        full[off[k]:off[k + 1]] = Z
        cols.append(full)
    return np.hstack(cols) if cols else np.zeros((tbl.p, 0))


def averages_matrix(scheme, tbl: IncidenceTable, tau: Precisions, order=None) -> np.ndarray:
    """Autoregressive matrix of the averages chain ``(a0, abar_1, ..., abar_K)``.

    Only meaningful for balanced-levels designs, where the averages form a
    Markov chain of their own.
    """
    off = tbl.offsets
    K = tbl.K
    X = np.zeros((tbl.p, K + 1))
    X[0, 0] = 1.0
    for k in range(1, K + 1):
        X[off[k]:off[k + 1], k] = 1.0
    img = mean_map(scheme, tbl, tau, X, order)
    A = np.empty((K + 1, K + 1))
    A[0] = img[0]
    for k in range(1, K + 1):
        A[k] = img[off[k]:off[k + 1]].mean(axis=0)
    return A


# ---------------------------------------------------------------------------
# eigen machinery


def power_iteration(apply, x0, tol=1e-10, max_iters=10**6, project=None, residual_tol=1e-8):
    """Largest eigenvalue modulus of a linear map by power iteration.

    Each step also forms the Rayleigh-Ritz projection onto the span of the
    last two iterates (free, since both images are known), so dominant
    pairs ``+-lambda`` or complex conjugates do not stall the estimate.

    Returns ``(estimate, iterations, residual)``; raises
    :class:`NotConvergedError` after ``max_iters``.
    """
    x = np.asarray(x0, dtype=float)
    if project is not None:
        x = project(x)
    nx = np.linalg.norm(x)
    if nx == 0:
        raise ValueError("start vector vanishes")
    x = x / nx
    prev_x = prev_gain = None
    prev_est = np.inf
    est = resid = np.nan
    for it in range(1, max_iters + 1):
        y = apply(x)
        if project is not None:
            y = project(y)
        gain = np.linalg.norm(y)
        est, resid = _ritz(x, y, prev_x, prev_gain)
        if gain == 0.0 or (abs(est - prev_est) < tol and resid < residual_tol):
            return (0.0 if gain == 0.0 else est), it, resid
        prev_est = est
        prev_x, prev_gain = x, gain
        x = y / gain
    raise NotConvergedError(est, resid, max_iters)


def _ritz(x, y, prev_x, prev_gain):
    theta = float(x @ y)
    if prev_x is not None:
        c = float(x @ prev_x)
        w = prev_x - c * x
        nw = np.linalg.norm(w)
        if nw > 1e-6:
            w = w / nw
            Bw = (prev_gain * x - c * y) / nw
            H = np.array([[x @ y, x @ Bw], [w @ y, w @ Bw]])
            vals, vecs = np.linalg.eig(H)
            i = int(np.argmax(np.abs(vals)))
            lam = vals[i]
            v = vecs[0, i] * x + vecs[1, i] * w
            Bv = vecs[0, i] * y + vecs[1, i] * Bw
            return float(abs(lam)), float(np.linalg.norm(Bv - lam * v) / np.linalg.norm(v))
    return abs(theta), float(np.linalg.norm(y - theta * x))


def spectral_radius_dense(M) -> float:
    if M.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def numeric_rate(scheme, tbl: IncidenceTable, tau: Precisions, method="auto", tol=1e-10,
                 max_iters=10**6, subspace=Subspace.FULL, order=None, seed=0,
                 residual_tol=1e-8) -> RateReport:
    """Exact rate of GS or cGS from the autoregressive matrix.

    ``DenseEigen`` assembles ``B`` and takes its spectral radius;
    ``PowerIteration`` iterates the matrix-free mean map.  With
    ``subspace=ZeroSumResiduals`` the map is restricted to vectors with
    ``a0 = 0`` and zero-sum factor blocks (the residual chain).
    """
    scheme = _gaussian_scheme(scheme)
    subspace = Subspace(subspace)
    if method == "auto":
        method = Method.DENSE if tbl.p <= DENSE_LIMIT else Method.POWER
    method = Method(method)
    rep = RateReport(scheme=scheme.value, method=method.value)
    if method is Method.DENSE:
        B = assemble_B(scheme, tbl, tau, order)
        if subspace is Subspace.ZERO_SUM:
            Q = zero_sum_basis(tbl)
            B = Q.T @ B @ Q
        rho = spectral_radius_dense(B)
    else:
        project = zero_sum_projector(tbl) if subspace is Subspace.ZERO_SUM else None
        x0 = np.random.default_rng(seed).standard_normal(tbl.p)
        rho, its, resid = power_iteration(
            lambda v: mean_map(scheme, tbl, tau, v, order), x0, tol, max_iters, project, residual_tol)
        rep.iterations_used = its
        rep.residual = resid
        rep.residual_tolerance = residual_tol
    rep.rho_numeric = rho
    rep.mixing_numeric = mixing_time(rho)
    return rep


# ---------------------------------------------------------------------------
# auxiliary discrete chain (K = 2)


@dataclass(frozen=True)
class AuxChain:
    """Two-component Gibbs chain on observed level pairs, law ``n_{i1 i2} / N``."""

    P1: sp.csr_matrix
    P2: sp.csr_matrix
    stationary: sp.csr_matrix
    levels1: np.ndarray
    levels2: np.ndarray


def aux_chain(tbl: IncidenceTable) -> AuxChain:
    if tbl.K != 2:
        raise ValueError(f"the auxiliary chain is defined for K = 2 only, got K = {tbl.K}")
    keep1 = np.flatnonzero(tbl.level_counts[0] > 0)
    keep2 = np.flatnonzero(tbl.level_counts[1] > 0)
    n = tbl.pair_table(0, 1, dense=False)[keep1][:, keep2]
    n1 = tbl.level_counts[0][keep1].astype(float)
    n2 = tbl.level_counts[1][keep2].astype(float)
    P1 = sp.diags(1.0 / n1) @ n
    P2 = sp.diags(1.0 / n2) @ n.T
    return AuxChain(P1.tocsr(), P2.tocsr(), (n / tbl.N).tocsr(), keep1, keep2)


def aux_rate(tbl: IncidenceTable, dense_limit: int = 25_000_000):
    """Second-largest eigenvalue modulus of ``P1 P2``.

    ``P1 P2`` is similar to ``A A^T`` with ``A = D1^-1/2 n D2^-1/2``, so its
    eigenvalues are the squared singular values of ``A``.  The top singular
    pair (value 1, vectors ``sqrt(n^(k)/N)``) is deflated exactly.
    """
    chain = aux_chain(tbl)
    n = chain.stationary * tbl.N
    n1 = np.asarray(n.sum(axis=1)).ravel()
    n2 = np.asarray(n.sum(axis=0)).ravel()
    d1, d2 = 1 / np.sqrt(n1), 1 / np.sqrt(n2)
    A = sp.diags(d1) @ n @ sp.diags(d2)
    u = np.sqrt(n1 / tbl.N)
    v = np.sqrt(n2 / tbl.N)
    if min(A.shape) == 1:
        return 0.0, chain
    if A.shape[0] * A.shape[1] <= dense_limit:
        sv = np.linalg.svd(A.toarray() - np.outer(u, v), compute_uv=False)
        top = sv[0]
    else:
        op = spla.LinearOperator(
            A.shape,
            matvec=lambda x: A @ np.ravel(x) - u * (v @ np.ravel(x)),
            rmatvec=lambda x: A.T @ np.ravel(x) - v * (u @ np.ravel(x)),
            dtype=float,
        )
        top = spla.svds(op, k=1, return_singular_vectors=False, tol=1e-12)[0]
    return float(min(1.0, top * top)), chain


# ---------------------------------------------------------------------------
# closed-form theory


def ratios(tbl: IncidenceTable, tau: Precisions) -> np.ndarray:
    """``r_k = N tau_0 / (N tau_0 + I_k tau_k)``."""
    N = tbl.N
    return np.array([N * tau[0] / (N * tau[0] + tbl.I[k] * tau[k + 1]) for k in range(tbl.K)])


def theory_rate(tbl: IncidenceTable, tau: Precisions, scheme=Scheme.GS, rho_aux=None) -> RateReport:
    """Closed-form rate and the regime that justifies it.

    ``theory_exact`` is true only when a theorem covers the design; values on
    other designs are extrapolations (or, for balanced levels with K > 2, a
    lower bound on the mixing time).
    """
    scheme = _gaussian_scheme(scheme)
    design = tbl.design
    K = tbl.K
    r = ratios(tbl, tau)
    rep = RateReport(scheme=scheme.value)
    if not scheme.collapsed:
        rho = float(r.max())
        N = tbl.N
        rep.rho_theory = rho
        rep.mixing_theory = float(1.0 + max(N * tau[0] / (tbl.I[k] * tau[k + 1]) for k in range(K)))
        if design is DesignClass.BALANCED_CELLS:
            rep.theory_kind, rep.theory_exact = TheoryKind.BALANCED_CELLS.value, True
        elif K == 2:
            rep.theory_kind = TheoryKind.BALANCED_LEVELS_K2.value
            rep.theory_exact = design is DesignClass.BALANCED_LEVELS
        elif design is DesignClass.BALANCED_LEVELS:
            rep.theory_kind = TheoryKind.LOWER_BOUND.value
        else:
            rep.theory_kind = TheoryKind.CONJECTURE.value
        return rep
    if design is DesignClass.BALANCED_CELLS:
        rep.rho_theory, rep.mixing_theory = 0.0, 1.0
        rep.theory_kind, rep.theory_exact = TheoryKind.BALANCED_CELLS.value, True
        if K == 2:
            rep.rho_aux = 0.0
        return rep
    if K == 2:
        if rho_aux is None:
            rho_aux, _ = aux_rate(tbl)
        rho = float(r[0] * r[1] * rho_aux)
        rep.rho_aux = rho_aux
        rep.rho_theory, rep.mixing_theory = rho, mixing_time(rho)
        rep.theory_kind = TheoryKind.BALANCED_LEVELS_K2.value
        rep.theory_exact = design is DesignClass.BALANCED_LEVELS
    return rep


def residual_rate_K2(tbl: IncidenceTable, tau: Precisions, rho_aux=None) -> float:
    """Rate ``r_1 r_2 rho_aux`` of the residual chain on balanced-levels K = 2 designs."""
    if tbl.K != 2:
        raise ValueError("residual rate formula needs K = 2")
    if tbl.design is DesignClass.UNBALANCED:
        raise ValueError("residual rate formula needs a balanced-levels design")
    if rho_aux is None:
        rho_aux, _ = aux_rate(tbl)
    r = ratios(tbl, tau)
    return float(r[0] * r[1] * rho_aux)


def rate_report(scheme, tbl: IncidenceTable, tau: Precisions, rho_aux=None, **opts) -> RateReport:
    """Numeric and theoretical rates of one scheme in a single report."""
    num = numeric_rate(scheme, tbl, tau, **opts)
    th = theory_rate(tbl, tau, scheme, rho_aux)
    for name in ("rho_theory", "mixing_theory", "rho_aux", "theory_kind", "theory_exact"):
        setattr(num, name, getattr(th, name))
    return num


__all__ = [
    "AuxChain", "Method", "NotConvergedError", "RateReport", "Subspace", "TheoryKind",
    "assemble_B", "aux_chain", "aux_rate", "averages_matrix", "default_order", "mean_map",
    "mixing_time", "numeric_rate", "power_iteration", "rate_report", "ratios",
    "residual_rate_K2", "spectral_radius_dense", "theory_rate", "zero_sum_basis",
    "zero_sum_projector",
]
