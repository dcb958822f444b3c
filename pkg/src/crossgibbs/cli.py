"""Command-line front end: ``crossgibbs {gen,rate,sample,diag,bench}``.

Outputs go to ``--out`` (default ``$CROSSGIBBS_OUT`` or the working
directory).  A ``--config`` file of ``key = value`` lines supplies defaults
for any option; flags given on the command line win.  The exit status is 0
when every requested computation converged, 1 when some did not, and 2 for
usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bench, datagen, diagnostics, spectral
from .datasets import load_insteval
from .model import IncidenceTable, Precisions, read_csv
from .samplers import Chain, ModelState, SamplerConfig, Scheme, run_chains

OUT_ENV = "CROSSGIBBS_OUT"
log = logging.getLogger("crossgibbs")


class UsageError(ValueError):
    pass


def _ints(text: str) -> list:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _words(text: str) -> list:
    return [v.strip() for v in str(text).split(",") if v.strip()]


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, default=_jsonable))
    return path


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    return str(o)


def _echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",)}


def _load_table(args) -> IncidenceTable:
    if getattr(args, "insteval", False):
        return load_insteval(args.insteval_path, args.factors, with_response=True)
    if not args.data:
        raise UsageError("give --data FILE or --insteval")
    tbl = read_csv(args.data, relabel=args.relabel)
    if args.factors:
        tbl = tbl.restrict(args.factors)
    return tbl


def _precisions(args, K: int) -> Precisions:
    tau = args.tau or [1.0]
    if len(tau) == 1:
        tau = tau * (K + 1)
    if len(tau) != K + 1:
        raise UsageError(f"--tau needs 1 or {K + 1} values, got {len(tau)}")
    return Precisions(tau)


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    kind = args.kind
    I = args.I
    if not I:
        raise UsageError("gen needs --I")
    if kind == "mcar":
        I1, I2 = (I * 2)[:2] if len(I) == 1 else I[:2]
        tbl = datagen.gen_mcar(I1, I2, args.q, args.seed, simulate_y=args.simulate_y,
                               on_empty="regenerate" if args.regenerate else "error")
    elif kind == "balanced-cells":
        tbl = datagen.gen_balanced_cells(I, args.n, args.seed, simulate_y=args.simulate_y)
    elif kind == "balanced-levels":
        if len(I) != 1 or args.m is None:
            raise UsageError("balanced-levels needs a single --I and --m")
        tbl = datagen.gen_balanced_levels_K2(I[0], args.m, args.seed, simulate_y=args.simulate_y)
    elif kind == "disconnected":
        if len(I) != 1:
            raise UsageError("disconnected needs a single --I (levels per community)")
        tbl = datagen.gen_disconnected(I[0], args.comms, args.n)
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(kind)
    out = _out_dir(args)
    name = args.name or kind
    csv_path, json_path = datagen.write_design(tbl, out / f"{name}.csv", {"generator": kind, "args": _echo(args)})
    print(f"wrote {csv_path} ({tbl.n_cells} rows) and {json_path}")
    return 0


# ---------------------------------------------------------------------------
# rate


def _rate_rows(tbl: IncidenceTable, tau: Precisions, schemes, opts: dict, tag: dict) -> tuple:
    rows, ok = [], True
    rho_aux = None
    for s in schemes:
        s = Scheme.parse(s)
        converged = True
        try:
            rep = spectral.rate_report(s, tbl, tau, rho_aux=rho_aux, **opts)
        except spectral.NotConvergedError as exc:
            log.warning("%s: %s", s.value, exc)
            rep = spectral.theory_rate(tbl, tau, s, rho_aux)
            rep.rho_numeric, rep.iterations_used, rep.residual = exc.estimate, exc.iterations, exc.residual
            rep.mixing_numeric = spectral.mixing_time(min(max(exc.estimate, 0.0), 1.0))
            converged = ok = False
        rho_aux = rep.rho_aux if rep.rho_aux is not None else rho_aux
        row = dict(tag)
        row.update(K=tbl.K, I=" ".join(map(str, tbl.I)), N=tbl.N, p=tbl.p, design=tbl.design.value)
        row.update(rep.as_dict())
        row["converged"] = converged
        rows.append(row)
    return rows, ok


def _mcar_point(task):
    size, q, seed, schemes, tau_list, opts = task
    tbl = datagen.gen_mcar(size, size, q, seed, on_empty="regenerate")
    tau = Precisions(tau_list * 3 if len(tau_list) == 1 else tau_list)
    return _rate_rows(tbl, tau, schemes, opts, {"grid_size": size, "q": q, "seed": seed})


def _write_rows_csv(rows, path: Path) -> Path:
    import csv
    fields = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path


def cmd_rate(args) -> int:
    opts = {"method": args.method, "tol": args.tol, "max_iters": args.max_iters,
            "subspace": args.subspace, "seed": args.seed}
    if args.mcar_grid:
        tasks = [(n, args.q, args.seed, args.schemes, args.tau or [1.0], opts) for n in args.mcar_grid]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as ex:
                results = list(ex.map(_mcar_point, tasks))
        else:
            results = [_mcar_point(t) for t in tasks]
        rows = [r for part, _ in results for r in part]
        ok = all(flag for _, flag in results)
    else:
        tbl = _load_table(args)
        rows, ok = _rate_rows(tbl, _precisions(args, tbl.K), args.schemes, opts, {})
    out = _out_dir(args)
    name = args.name or "rates"
    _write_rows_csv(rows, out / f"{name}.csv")
    _write_json(out / f"{name}.json", {"args": _echo(args), "rows": rows})
    for r in rows:
        th = r["mixing_theory"]
        print(f"{r['scheme']:>4}  N={r['N']:<7} numeric {r['mixing_numeric']:.6g}"
              f"  theory {'-' if th is None else format(th, '.6g')} ({r['theory_kind']})")
    if args.plot:
        from . import plotting
        plotting.mixing_vs_n(rows, out / f"{name}.png")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# sample


def cmd_sample(args) -> int:
    tbl = _load_table(args)
    tau = _precisions(args, tbl.K)
    out = _out_dir(args)
    report = {"args": _echo(args), "table": tbl.summary(), "schemes": {}}
    curves = {}
    for s in args.scheme:
        cfg = SamplerConfig(scheme=s, iterations=args.iters, burn_in=args.burn, seed=args.seed,
                            precisions_known=not args.unknown_tau, update_tau0=args.update_tau0,
                            monitor=args.monitor)
        chains = run_chains(cfg, tbl, args.runs, args.jobs, ModelState.zeros(tbl, tau))
        tag = cfg.scheme.value.replace("+", "_")
        per_run = []
        for i, ch in enumerate(chains):
            ch.to_csv(out / f"chain_{tag}_run{i}.csv")
            per_run.append(ch.summary())
        labels = chains[0].labels
        mean_ess_rate = {lab: float(np.mean([r["monitors"][lab].get("ess_per_second", np.nan)
                                             for r in per_run]))
                         for lab in labels}
        report["schemes"][cfg.scheme.value] = {"runs": per_run, "mean_ess_per_second": mean_ess_rate}
        for lab in labels:
            j = labels.index(lab)
            L = min(args.max_lag, chains[0].samples.shape[0] - 1)
            vals = np.mean([diagnostics.acf(ch.samples[:, j], L).values for ch in chains], axis=0)
            curves.setdefault(lab, {})[cfg.scheme.value] = vals
        print(cfg.scheme.value, " ".join(f"{k}:{v:.4g}" for k, v in mean_ess_rate.items()), "(ESS/s)")
    name = args.name or "sample"
    _write_json(out / f"{name}.json", report)
    acf_rows = [{"monitor": m, "scheme": s, "lag": l, "acf": float(v)}
                for m, d in curves.items() for s, vals in d.items() for l, v in enumerate(vals)]
    _write_rows_csv(acf_rows, out / f"{name}_acf.csv")
    if args.plot:
        from . import plotting
        plotting.acf_panels(curves, out / f"{name}_acf.png")
    return 0


# ---------------------------------------------------------------------------
# diag


def cmd_diag(args) -> int:
    out = _out_dir(args)
    name = args.name or "diag"
    report = {"args": _echo(args), "chains": {}}
    acf_rows, cc_rows = [], []
    curves = {}
    for path in args.chains:
        ch = Chain.read_csv(path)
        L = min(args.max_lag, ch.samples.shape[0] - 1)
        report["chains"][str(path)] = diagnostics.summarize(ch.samples, ch.labels, args.seconds_per_1000)
        for j, lab in enumerate(ch.labels):
            vals = diagnostics.acf(ch.samples[:, j], L).values
            curves.setdefault(lab, {})[Path(path).stem] = vals
            acf_rows += [{"chain": str(path), "monitor": lab, "lag": l, "acf": float(v)} for l, v in enumerate(vals)]
        if args.cross:
            if len(args.cross) != 2:
                raise UsageError("--cross takes exactly two monitor labels")
            a, b = args.cross
            if a not in ch.labels or b not in ch.labels:
                raise UsageError(f"{path}: monitors {a!r}, {b!r} not both present in {ch.labels}")
            res = diagnostics.cross_correlation(ch.samples[:, ch.labels.index(a)],
                                                ch.samples[:, ch.labels.index(b)], L)
            lags, cc = res.lags, res.values
            n = ch.samples.shape[0]
            cc_rows += [{"chain": str(path), "lag": int(l), "xcorr": float(v), "band": 4 / np.sqrt(n)}
                        for l, v in zip(lags, cc)]
            if args.plot:
                from . import plotting
                plotting.cross_correlogram(lags, cc, n, out / f"{name}_{Path(path).stem}_xcorr.png")
    _write_json(out / f"{name}.json", report)
    _write_rows_csv(acf_rows, out / f"{name}_acf.csv")
    if cc_rows:
        _write_rows_csv(cc_rows, out / f"{name}_xcorr.csv")
    if args.plot:
        from . import plotting
        plotting.acf_panels(curves, out / f"{name}_acf.png")
    for path, summ in report["chains"].items():
        for lab, s in summ.items():
            ess = "-" if s["ess"] is None else f"{s['ess']:.1f}"
            print(f"{path} {lab}: mean {s['mean']:.5g} sd {s['sd']:.4g} ess {ess}")
    return 0


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    rows = bench.run_bench(args.family, args.sizes, args.schemes, args.sweeps, args.repeats,
                           args.seed, args.jobs)
    out = _out_dir(args)
    name = args.name or "bench"
    bench.write_rows(rows, out / f"{name}.csv")
    slopes = bench.fit_slopes(rows) if len(set(args.sizes)) > 1 else {}
    ratio = bench.time_ratio(rows).tolist() if {"GS", "cGS"} <= {r.scheme for r in rows} else []
    _write_json(out / f"{name}.json", {"args": _echo(args), "slopes": slopes, "cgs_over_gs": ratio})
    for r in rows:
        print(f"{r.scheme:>6} p={r.p:<9} N={r.N:<9} {1e3 * r.seconds_per_sweep:.4f} ms/sweep")
    for s, d in slopes.items():
        print(f"{s}: slope vs p {d['slope_p']:.3f}, vs pair work {d['slope_pair_work']:.3f}")
    if args.plot:
        from . import plotting
        plotting.bench_scaling(rows, out / f"{name}.png")
    return 0


# ---------------------------------------------------------------------------
# parser


def _data_options(p):
    p.add_argument("--data", help="design CSV (f1..fK,y[,w])")
    p.add_argument("--relabel", action="store_true", help="map arbitrary level labels to dense indices")
    p.add_argument("--insteval", action="store_true", help="use the InstEval data")
    p.add_argument("--insteval-path", help="InstEval CSV location")
    p.add_argument("--factors", type=_ints, help="1-based factor subset, e.g. 1,2")
    p.add_argument("--tau", type=_floats, help="precisions tau0,tau1,..,tauK or one value for all")


def _global_options(p, suppress=False):
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)", **kw)
    p.add_argument("--config", help="key = value defaults file", **kw)
    p.add_argument("--jobs", type=int, help="parallel workers", **({"default": 1} | kw))
    p.add_argument("--plot", action="store_true", help="also render PNG figures (needs matplotlib)", **kw)
    p.add_argument("--name", help="output file stem", **kw)
    p.add_argument("-v", "--verbose", action="store_true", **kw)


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="crossgibbs", description=__doc__.splitlines()[0])
    _global_options(top)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = top.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic design")
    g.add_argument("kind", choices=["mcar", "balanced-cells", "balanced-levels", "disconnected"])
    g.add_argument("--I", type=_ints, help="levels per factor (comma-separated); required")
    g.add_argument("--q", type=float, default=0.1, help="MCAR cell probability")
    g.add_argument("--n", type=int, default=1, help="observations per cell")
    g.add_argument("--m", type=int, help="permutations in a balanced-levels design")
    g.add_argument("--comms", type=int, default=2, help="communities")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--simulate-y", action="store_true", help="draw responses from the model")
    g.add_argument("--regenerate", action="store_true", help="redraw empty MCAR designs")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("rate", parents=[common], help="numeric and theoretical convergence rates")
    _data_options(r)
    r.add_argument("--mcar-grid", type=_ints, help="MCAR sizes I1=I2 to sweep instead of --data")
    r.add_argument("--q", type=float, default=0.1)
    r.add_argument("--schemes", type=_words, default=["GS", "cGS"])
    r.add_argument("--method", default="auto", choices=["auto", "DenseEigen", "PowerIteration"])
    r.add_argument("--tol", type=float, default=1e-10)
    r.add_argument("--max-iters", type=int, default=10**6)
    r.add_argument("--subspace", default="Full", choices=["Full", "ZeroSumResiduals"])
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_rate)

    s = sub.add_parser("sample", parents=[common], help="run Gibbs chains")
    _data_options(s)
    s.add_argument("--scheme", type=_words, default=["GS"], help="GS, cGS, GS+PX, cGS+PX (comma-separated)")
    s.add_argument("--iters", type=int, default=1000)
    s.add_argument("--burn", type=int, default=0)
    s.add_argument("--runs", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--unknown-tau", action="store_true", help="sample tau_1..tau_K (flat prior on sigma)")
    s.add_argument("--update-tau0", action="store_true", help="also sample tau_0")
    s.add_argument("--monitor", type=_words, help="labels such as a0,abar1,sigma2,a1[3],da1[3]")
    s.add_argument("--max-lag", type=int, default=100)
    s.set_defaults(func=cmd_sample)

    d = sub.add_parser("diag", parents=[common], help="ACF, ESS and cross-correlation of chain CSVs")
    d.add_argument("chains", nargs="+")
    d.add_argument("--max-lag", type=int, default=50)
    d.add_argument("--cross", type=_words, help="two monitor labels, e.g. abar1,da1[1]")
    d.add_argument("--seconds-per-1000", type=float, default=None, help="chain timing for ESS per second")
    d.set_defaults(func=cmd_diag)

    b = sub.add_parser("bench", parents=[common], help="per-sweep timing over a size grid")
    b.add_argument("--family", choices=["cells", "mcar"], default="cells")
    b.add_argument("--sizes", type=_ints, default=[25000, 50000, 100000, 200000, 400000])
    b.add_argument("--schemes", type=_words, default=["GS", "cGS"])
    b.add_argument("--sweeps", type=int, default=20)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    top._subs = {"gen": g, "rate": r, "sample": s, "diag": d, "bench": b}
    return top


def _parse(parser, argv):
    pre, _ = parser.parse_known_args(argv)
    if not getattr(pre, "config", None):
        return parser.parse_args(argv)
    cfg = read_config(pre.config)
    sp = parser._subs[pre.command]
    known = {a.dest: a for a in sp._actions} | {a.dest: a for a in parser._actions}
    conv = {}
    for key, raw in cfg.items():
        act = known.get(key)
        if act is None:
            raise UsageError(f"{pre.config}: unknown option {key!r}")
        if act.nargs == 0:
            conv[key] = raw.lower() in ("1", "true", "yes", "on")
        elif act.type is not None:
            conv[key] = act.type(raw)
        else:
            conv[key] = raw
    sp.set_defaults(**conv)
    parser.set_defaults(**{k: v for k, v in conv.items() if any(a.dest == k for a in parser._actions)})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(parser, argv)
    except (UsageError, argparse.ArgumentTypeError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"crossgibbs: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"crossgibbs: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"crossgibbs: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
