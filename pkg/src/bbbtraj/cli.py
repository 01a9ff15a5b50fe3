"""Command-line entry point: run, compare, sweep and validate experiment configs.

Exit codes: 0 success, 1 invalid input, 2 integration failure, 3 comparison
outside tolerance.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config, io, models, runner
from .errors import (ConsistencyError, FrozenLinkError, InconsistentStateError, IntegrationError,
                     StepSizeError, UndefinedLinkError)

log = logging.getLogger("bbbtraj")

EXIT_OK, EXIT_INVALID, EXIT_INTEGRATION, EXIT_TOLERANCE = 0, 1, 2, 3
INTEGRATION_ERRORS = (IntegrationError, StepSizeError, FrozenLinkError, InconsistentStateError,
                      ConsistencyError, UndefinedLinkError)


def _setup_logging(quiet: bool, logfile: Path | None = None) -> None:
    root = logging.getLogger("bbbtraj")
    root.handlers.clear()
    root.setLevel(logging.INFO)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.WARNING if quiet else logging.INFO)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(console)
    if logfile is not None:
        fh = logging.FileHandler(logfile, mode="w")
        fh.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(fh)


def _load(args) -> config.RunConfig:
    return config.load(args.config, seed=args.seed, out=getattr(args, "out", None))


def _echo(args, text: str) -> None:
    if not args.quiet:
        print(text)


def cmd_validate(args) -> int:
    cfg = _load(args)
    _echo(args, f"ok {cfg.formulation} on {cfg.model.kind}, {cfg.steps} steps, hash {io.config_hash(cfg)}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    outdir = Path(cfg.output.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    _setup_logging(args.quiet, outdir / "run.log")
    h = io.config_hash(cfg)
    log.info("run %s on %s: dt=%g horizon=%g seed=%d hash=%s", cfg.formulation, cfg.model.kind,
             cfg.dt, cfg.horizon, cfg.seed, h)
    res = runner.execute(cfg)
    res.series.write(outdir / io.SERIES_FILE, h)
    io.write_json(outdir / io.SUMMARY_FILE, {"hash": h, "seed": cfg.seed, "formulation": cfg.formulation,
                                             "checks": res.checks, "summary": res.summary})
    io.write_manifest(outdir, cfg, h, res.wall_time)
    failed = [k for k, ok in res.checks.items() if not ok]
    _echo(args, f"wrote {outdir} ({len(res.series.rows)} rows, {res.wall_time:.3f} s)")
    if failed:
        log.error("invariant checks failed: %s", ", ".join(failed))
        return EXIT_INTEGRATION
    return EXIT_OK


def compare_series(a: io.Series, b: io.Series, quantity: str, norm: str) -> dict:
    ta, la, va = a.select(quantity)
    tb, lb, vb = b.select(quantity)
    if la != lb:
        raise ValueError(f"index labels of {quantity} differ between runs")
    if ta.shape != tb.shape or np.abs(ta - tb).max(initial=0.0) > 1e-9 * max(1.0, np.abs(ta).max()):
        raise ValueError("runs do not share a time grid")
    d = va - vb
    ok = np.isfinite(d)
    d = np.where(ok, d, 0.0)
    worst = np.argmax(np.abs(d), axis=1)
    per_time = np.abs(d)[np.arange(d.shape[0]), worst]
    l2 = np.linalg.norm(d, axis=1)
    rel = l2 / np.maximum(np.linalg.norm(np.where(ok, vb, 0.0), axis=1), np.finfo(float).tiny)
    errs = {"sup": float(per_time.max()), "l2": float(l2.max()), "rel-l2": float(rel.max())}
    return {"quantity": quantity, "norm": norm, "error": errs[norm], "sup": errs["sup"], "l2": errs["l2"],
            "rel_l2": errs["rel-l2"], "n_times": int(ta.size), "skipped_nonfinite": int((~ok).sum()),
            "worst": [{"t": float(t), "index": la[w], "abs_error": float(e)}
                      for t, w, e in zip(ta, worst, per_time)]}


def compare_cos2(a: io.Series) -> dict:
    """Fit cos^2(gamma t + delta) to P of label 1 and report the sup residual."""
    t, labels, P = a.select("P")
    if labels != ["0", "1"]:
        raise ValueError("the cos2 comparison needs a two-label (spin-1/2) run")
    P2 = P[:, 1]
    # initial guess from the mean crossing rate of P2 - 1/2
    d = P2 - 0.5
    cross = np.flatnonzero(np.signbit(d[1:]) != np.signbit(d[:-1]))
    if cross.size < 2:
        raise ValueError("P_2 does not oscillate enough to fit")
    gamma0 = 0.5 * np.pi * (cross.size - 1) / (t[cross[-1]] - t[cross[0]])
    _, _, Tb = a.select("Tbar")
    sgn = np.sign(Tb[0, 0]) if np.isfinite(Tb[0, 0]) and Tb[0, 0] != 0 else 1.0
    fit = models.fit_cos2(t, P2, gamma0, sgn * np.arccos(np.sqrt(min(P2[0], 1.0))))
    res = float(np.abs(P2 - fit.P2(t)).max())
    return {"quantity": "P", "norm": "sup", "error": res, "gamma": fit.gamma, "delta": fit.delta,
            "n_times": int(t.size)}


def cmd_compare(args) -> int:
    a = io.read_series(args.run_a)
    if args.analytic:
        rep = compare_cos2(a)
    else:
        if args.run_b is None:
            raise ValueError("compare needs a second run or --analytic")
        b = io.read_series(args.run_b)
        rep = compare_series(a, b, args.quantity, args.norm)
    rep["tolerance"] = args.tol
    rep["passed"] = args.tol is None or rep["error"] <= args.tol
    if not args.quiet:
        print(f"{rep['quantity']} {rep['norm']} error {rep['error']:.6g} over {rep['n_times']} times")
        if "worst" in rep:
            w = max(rep["worst"], key=lambda r: r["abs_error"])
            print(f"worst at t={w['t']:.6g} index {w['index']} ({w['abs_error']:.3g})")
    if args.json:
        io.write_json(args.json, rep)
    print(json.dumps({k: v for k, v in rep.items() if k != "worst"}, sort_keys=True))
    return EXIT_OK if rep["passed"] else EXIT_TOLERANCE


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = [float(v) for v in args.values.split(",")]
    rep = runner.sweep(cfg, args.axis, values)
    if not args.quiet:
        print(f"{'value':>14} {'error':>14} {'ratio':>8}")
        for i, (v, e) in enumerate(zip(rep["values"], rep["errors"])):
            r = f"{rep['errors'][i - 1] / e:8.3f}" if i else " " * 8
            print(f"{v:14.6g} {e:14.6g} {r}")
        print(f"fitted order {rep['fitted_order']:.3f}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        io.write_json(Path(args.out) / "sweep.json", {"hash": io.config_hash(cfg), **rep})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bbbtraj", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, needs_config=True):
        if needs_config:
            sp.add_argument("--config", required=True, help="JSON run configuration")
            sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--quiet", action="store_true", help="only warnings and errors on stderr")

    sp = sub.add_parser("run", help="run one configuration and write outputs")
    common(sp)
    sp.add_argument("--out", default=None, help="output directory (overrides the config)")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("validate", help="check a configuration without running it")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("compare", help="compare two runs, or one spin run against a cos^2 fit")
    common(sp, needs_config=False)
    sp.add_argument("run_a")
    sp.add_argument("run_b", nargs="?")
    sp.add_argument("--quantity", default="P", choices=io.QUANTITIES)
    sp.add_argument("--norm", default="sup", choices=("sup", "l2", "rel-l2"))
    sp.add_argument("--analytic", choices=("spin-cos2",), default=None)
    sp.add_argument("--tol", type=float, default=None, help="exit 3 if the error exceeds this")
    sp.add_argument("--json", default=None, help="write the full report here")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="convergence table over dt, a or M")
    common(sp)
    sp.add_argument("--axis", required=True, choices=("dt", "a", "M"))
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--out", default=None, help="directory for sweep.json")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.quiet)
    try:
        return args.func(args)
    except config.ConfigError as exc:
        for line in exc.messages:
            print(f"invalid config: {line}", file=sys.stderr)
        return EXIT_INVALID
    except INTEGRATION_ERRORS as exc:
        extra = getattr(exc, "diagnostics", None) or {}
        req = getattr(exc, "required", None)
        msg = f"integration failure: {exc}"
        if req is not None:
            msg += f" (required dt <= {req:.6g})"
        if extra:
            msg += f" {json.dumps(extra, default=str, sort_keys=True)}"
        print(msg, file=sys.stderr)
        return EXIT_INTEGRATION
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
