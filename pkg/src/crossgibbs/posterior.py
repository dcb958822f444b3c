"""Dense joint posterior of the location parameters, for small models.

These routines build the full ``p x p`` posterior precision matrix and are
the reference against which the samplers and the rate analysis are checked.
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.linalg as sla

from .model import IncidenceTable, Precisions


def design_matrix(tbl: IncidenceTable) -> np.ndarray:
    """Cell-by-parameter incidence (``n_cells x p``) for ``x = (a0, a^(1), ...)``."""
    Z = np.zeros((tbl.n_cells, tbl.p))
    Z[:, 0] = 1.0
    off = tbl.offsets
    rows = np.arange(tbl.n_cells)
    for k in range(tbl.K):
        Z[rows, off[k + 1] + tbl.cell_levels[:, k]] = 1.0
    return Z


def _data_system(tbl: IncidenceTable):
    Z = design_matrix(tbl)
    n = tbl.cell_counts.astype(float)
    return Z.T @ (n[:, None] * Z), Z.T @ (n * tbl.cell_means)


def _prior_diagonal(tbl: IncidenceTable, tau) -> np.ndarray:
    d = np.zeros(tbl.p)
    off = tbl.offsets
    for k in range(tbl.K):
        d[off[k + 1]:off[k + 2]] = tau[k + 1]
    return d


def precision_system(tbl: IncidenceTable, tau: Precisions):
    """Posterior precision ``Q`` and linear term ``h`` (mean solves ``Q mu = h``)."""
    G, g = _data_system(tbl)
    Q = tau[0] * G + np.diag(_prior_diagonal(tbl, tau))
    return Q, tau[0] * g


def dense_posterior(tbl: IncidenceTable, tau: Precisions):
    """Exact posterior mean and covariance (flat prior on the global mean)."""
    Q, h = precision_system(tbl, tau)
    c = sla.cho_factor(Q)
    return sla.cho_solve(c, h), sla.cho_solve(c, np.eye(tbl.p))


def conditional(Q, h, block, x):
    """Mean and covariance of ``x[block]`` given the other coordinates."""
    block = np.atleast_1d(block)
    rest = np.setdiff1d(np.arange(Q.shape[0]), block)
    Qbb = Q[np.ix_(block, block)]
    rhs = h[block] - Q[np.ix_(block, rest)] @ np.asarray(x)[rest]
    cov = np.linalg.inv(Qbb)
    return cov @ rhs, cov


def collapsed_conditional(Q, h, keep, drop, x):
    """Mean and covariance of ``x[keep]`` given ``x[rest]`` with ``x[drop]`` integrated out."""
    keep, drop = np.atleast_1d(keep), np.atleast_1d(drop)
    both = np.concatenate([keep, drop])
    mean, cov = conditional(Q, h, both, x)
    n = keep.size
    return mean[:n], cov[:n, :n]


def block_update_matrix(Q, block):
    """Linear part of the mean-mode update of ``block`` given everything else."""
    p = Q.shape[0]
    block = np.atleast_1d(block)
    rest = np.setdiff1d(np.arange(p), block)
    U = np.eye(p)
    U[block] = 0.0
    U[np.ix_(block, rest)] = -np.linalg.solve(Q[np.ix_(block, block)], Q[np.ix_(block, rest)])
    return U


def log_evidence(tbl: IncidenceTable, tau: Precisions) -> float:
    """``log p(y | tau)`` up to a constant depending only on ``tau_0`` and the data."""
    return _Evidence(tbl, tau[0])(np.log(np.asarray(tau.tau[1:])))[0]


class _Evidence:
    """Log evidence and conditional moments as functions of ``log tau_1..K``."""

    def __init__(self, tbl, tau0):
        G, g = _data_system(tbl)
        self.G, self.h = tau0 * G, tau0 * g
        self.tbl = tbl
        self.sizes = np.array(tbl.I, dtype=float)

    def __call__(self, log_tau, moments=False):
        tau = np.concatenate([[1.0], np.exp(log_tau)])
        Q = self.G + np.diag(_prior_diagonal(self.tbl, tau))
        c = sla.cho_factor(Q)
        mu = sla.cho_solve(c, self.h)
        lev = 0.5 * self.h @ mu - np.log(np.diag(c[0])).sum() + 0.5 * self.sizes @ log_tau
        if moments:
            return lev, mu, sla.cho_solve(c, np.eye(Q.shape[0]))
        return lev, mu


def _log_posterior_grid(ev, grids, prior_shape):
    shape = tuple(len(g) for g in grids)
    lp = np.empty(shape)
    for idx in itertools.product(*(range(s) for s in shape)):
        lt = np.array([grids[k][i] for k, i in enumerate(idx)])
        # prior tau^(alpha-1) in the log-tau measure contributes tau^alpha
        lp[idx] = ev(lt)[0] + prior_shape * lt.sum()
    return lp


def _trapezoid_weights(g):
    w = np.empty_like(g)
    d = np.diff(g)
    w[0], w[-1] = d[0] / 2, d[-1] / 2
    w[1:-1] = (d[:-1] + d[1:]) / 2
    return w


def unknown_precision_posterior(tbl: IncidenceTable, tau0: float, prior_shape: float = -0.5,
                                coarse=(-30.0, 70.0, 201), fine: int = 161, drop: float = 25.0):
    """Posterior moments with ``tau_1..tau_K`` integrated by quadrature.

    The prior is ``tau_k^(alpha - 1)`` (flat on sigma for ``alpha = -1/2``)
    and ``tau_0`` is fixed.  A coarse grid in ``log tau`` locates the mass;
    a fine trapezoid grid over the region within ``drop`` log units of the
    maximum does the integration.  Practical for ``K <= 2``.

    Returns a dict with ``mean`` and ``cov`` of the location vector and
    ``log_tau_mean``.
    """
    K = tbl.K
    ev = _Evidence(tbl, tau0)
    lo, hi, n = coarse
    g0 = [np.linspace(lo, hi, n)] * K
    lp = _log_posterior_grid(ev, g0, prior_shape)
    mask = lp > lp.max() - drop
    grids = []
    step = (hi - lo) / (n - 1)
    for k in range(K):
        axes = tuple(i for i in range(K) if i != k)
        hit = np.flatnonzero(mask.any(axis=axes) if axes else mask)
        a = g0[k][max(hit[0] - 1, 0)] - step
        b = g0[k][min(hit[-1] + 1, n - 1)] + step
        if hit[0] == 0 or hit[-1] == n - 1:
            raise ValueError("posterior mass reaches the edge of the log-tau grid")
        grids.append(np.linspace(a, b, fine))
    lp = _log_posterior_grid(ev, grids, prior_shape)
    w = np.exp(lp - lp.max())
    for k in range(K):
        shape = [1] * K
        shape[k] = fine
        w = w * _trapezoid_weights(grids[k]).reshape(shape)
    w /= w.sum()
    p = tbl.p
    m1 = np.zeros(p)
    m2 = np.zeros((p, p))
    lt_mean = np.zeros(K)
    for idx in itertools.product(*(range(fine) for _ in range(K))):
        wi = w[idx]
        if wi < 1e-300:
            continue
        lt = np.array([grids[k][i] for k, i in enumerate(idx)])
        _, mu, cov = ev(lt, moments=True)
        m1 += wi * mu
        m2 += wi * (cov + np.outer(mu, mu))
        lt_mean += wi * lt
    return {"mean": m1, "cov": m2 - np.outer(m1, m1), "log_tau_mean": lt_mean}
