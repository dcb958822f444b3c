"""Optional figures written to files with the Agg backend.

matplotlib is imported lazily so the rest of the package does not need it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise ImportError("plotting needs matplotlib: pip install 'artifact[plot]'") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    fig.clf()
    return path


def mixing_vs_n(rows, path) -> Path:
    """Numeric (solid) and theoretical (dashed) mixing times against ``N``.

    ``rows`` are dicts with keys ``scheme``, ``N``, ``mixing_numeric`` and
    ``mixing_theory``.
    """
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for scheme in sorted({r["scheme"] for r in rows}):
        sel = sorted((r for r in rows if r["scheme"] == scheme), key=lambda r: r["N"])
        N = [r["N"] for r in sel]
        line, = ax.plot(N, [r["mixing_numeric"] for r in sel], "o-", label=f"{scheme} numeric")
        th = [r.get("mixing_theory") for r in sel]
        if all(t is not None for t in th):
            ax.plot(N, th, "--", color=line.get_color(), label=f"{scheme} theory")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel("mixing time")
    ax.legend(fontsize=8)
    return _save(fig, path)


def acf_panels(curves: dict, path, max_lag: int | None = None) -> Path:
    """One panel per monitor, one line per scheme.

    ``curves`` maps ``monitor -> {scheme: acf values}``.
    """
    plt = _pyplot()
    names = list(curves)
    fig, axes = plt.subplots(1, len(names), figsize=(3 * len(names), 3), squeeze=False)
    for ax, name in zip(axes[0], names):
        for scheme, vals in curves[name].items():
            vals = np.asarray(vals)
            if max_lag is not None:
                vals = vals[:max_lag + 1]
            ax.plot(np.arange(vals.size), vals, label=scheme)
        ax.set_title(name)
        ax.set_ylim(-0.2, 1.05)
        ax.set_xlabel("lag")
    axes[0][0].legend(fontsize=7)
    return _save(fig, path)


def cross_correlogram(lags, values, n: int, path, band: float = 4.0) -> Path:
    """Cross-correlation by lag with the ``+-band/sqrt(n)`` envelope."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.vlines(lags, 0, values)
    h = band / np.sqrt(n)
    ax.axhline(h, ls="--", color="grey")
    ax.axhline(-h, ls="--", color="grey")
    ax.set_xlabel("lag")
    ax.set_ylabel("cross-correlation")
    return _save(fig, path)


def bench_scaling(rows, path, x: str = "p") -> Path:
    """Seconds per sweep against a size measure on log-log axes."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for scheme in sorted({r.scheme for r in rows}):
        sel = sorted((r for r in rows if r.scheme == scheme), key=lambda r: getattr(r, x))
        ax.plot([getattr(r, x) for r in sel], [r.seconds_per_sweep for r in sel], "o-", label=scheme)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel("seconds per sweep")
    ax.legend()
    return _save(fig, path)
