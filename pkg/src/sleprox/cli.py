"""Command-line entry point.

    sleprox simulate [key=value ...] [--zero-driving] [--svg]
    sleprox experiment KIND [key=value ...]
    sleprox criterion FAMILY --kappa K [--r R]

Configuration is a flat key=value file (--config) followed by key=value
overrides on the command line; later values win.  A run manifest written
by `experiment` is itself a valid config, so

    sleprox experiment --config out/manifest.txt --out elsewhere

reproduces the results file byte for byte.

Boundary-function grammar (criterion, graph_hit, q_statistic):

    powlog(beta=B[,scale=S][,r=R])      h(x) = S x / (log x)^B
    itloglog(alpha=A[,scale=S][,r=R])   h(x) = S x^(-(log log x)^A)
    const(c=C[,r=R])                    h(x) = C
    custom(expr=E[,r=R][,hint=FAMILY])  E over x, numbers, e, pi, + - * / **,
                                        log, exp, sqrt, pow
    any of the above followed by |clip  h(x) ^ x/2

Exit codes: 0 success or bounded, 10 unbounded, 20 inconclusive,
1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, criterion, mc
from .loewner import (ClockParams, DrivingPath, LoewnerError, SimParams, generate_driving,
                      trace_points)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
EXIT_VERDICT = {"bounded": 0, "unbounded": 10, "inconclusive": 20}
OUT_ENV = "SLEPROX_OUT"
# manifest-only keys, skipped when a manifest is read back as a config
_META = ("artifact_version", "command", "duration_s")


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------
# config and output formats


def parse_pairs(lines, source="config"):
    out = {}
    for no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{no}: expected key=value, got {raw.strip()!r}")
        k, v = line.split("=", 1)
        k = k.strip()
        if not k:
            raise UsageError(f"{source}:{no}: empty key")
        if k in _META or k.startswith("sha256."):
            continue
        out[k] = v.strip()
    return out


def load_config(path, overrides=()):
    cfg = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        cfg.update(parse_pairs(text.splitlines(), str(path)))
    cfg.update(parse_pairs(overrides, "argv"))
    return cfg


def fmt(v):
    """Shortest round-trip text for floats; everything else via str."""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def csv_text(cols, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_file(path: Path, text: str) -> str:
    path.write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def manifest_text(command, cfg, digests, duration):
    lines = [f"artifact_version={__version__}", f"command={command}"]
    lines += [f"{k}={cfg[k]}" for k in sorted(cfg)]
    lines.append(f"duration_s={duration:.3f}")
    lines += [f"sha256.{name}={d}" for name, d in sorted(digests.items())]
    return "\n".join(lines) + "\n"


def svg_plot(series, width=480, height=360, logx=False, logy=False, title=""):
    """Minimal SVG: series = [(xs, ys, kind, colour)], kind 'line' or 'dots'."""
    pts = []
    for xs, ys, _, _ in series:
        for x, y in zip(xs, ys):
            if math.isfinite(x) and math.isfinite(y) and (x > 0 or not logx) and (y > 0 or not logy):
                pts.append((x, y))
    tx = (lambda v: math.log10(v)) if logx else float
    ty = (lambda v: math.log10(v)) if logy else float
    if pts:
        x0, x1 = min(tx(p[0]) for p in pts), max(tx(p[0]) for p in pts)
        y0, y1 = min(ty(p[1]) for p in pts), max(ty(p[1]) for p in pts)
    else:
        x0 = y0 = 0.0
        x1 = y1 = 1.0
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    m = 30

    def px(x, y):
        return (m + (tx(x) - x0) / (x1 - x0) * (width - 2 * m),
                height - m - (ty(y) - y0) / (y1 - y0) * (height - 2 * m))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" '
           'fill="none" stroke="#999"/>']
    if title:
        out.append(f'<text x="{m}" y="{m - 8}" font-size="12" font-family="sans-serif">{title}</text>')
    for xs, ys, kind, colour in series:
        xy = [px(x, y) for x, y in zip(xs, ys)
              if math.isfinite(x) and math.isfinite(y) and (x > 0 or not logx) and (y > 0 or not logy)]
        if kind == "line" and xy:
            d = " ".join(f"{a:.2f},{b:.2f}" for a, b in xy)
            out.append(f'<polyline points="{d}" fill="none" stroke="{colour}" stroke-width="1"/>')
        else:
            out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{colour}"/>' for a, b in xy]
    out.append("</svg>")
    return "\n".join(out) + "\n"


def out_dir(args):
    d = Path(args.out or os.environ.get(OUT_ENV) or "sleprox_out")
    d.mkdir(parents=True, exist_ok=True)
    return d


# ----------------------------------------------------------------------
# commands


def _clock(cfg):
    kw = {k: float(cfg[k]) for k in ("c", "eta", "refine") if k in cfg}
    if "max_steps" in cfg:
        kw["max_steps"] = int(cfg["max_steps"])
    return ClockParams(**kw)


def cmd_simulate(args, cfg):
    kappa = float(cfg.get("kappa", 8.0 / 3.0))
    dt = float(cfg.get("dt", 1e-3))
    t_max = float(cfg.get("t_max", 1.0))
    seed = int(cfg.get("seed", 0))
    run = int(cfg.get("run", 0))
    samples = int(cfg.get("samples", 100))
    if args.zero_driving:
        cfg["zero_driving"] = "1"
    zero = cfg.get("zero_driving", "0") not in ("0", "false", "")
    params = SimParams(kappa, dt, t_max, seed, run)
    path = DrivingPath.constant_zero(dt, params.n_steps) if zero else generate_driving(params)
    n = path.n_steps
    steps = np.unique(np.linspace(0, n, min(samples, n) + 1).round().astype(int)) if n else np.array([0])
    pts = trace_points(path, [int(k) for k in steps])
    rows = [(p.step, float(path.times[p.step]), p.point.real, p.point.imag) for p in pts]
    d = out_dir(args)
    digests = {"trace.csv": write_file(d / "trace.csv", csv_text(("step", "t", "re", "im"), rows))}
    if args.svg:
        svg = svg_plot([([r[2] for r in rows], [r[3] for r in rows], "line", "#1f4e9c")],
                       title=f"trace, kappa={kappa:g}")
        digests["trace.svg"] = write_file(d / "trace.svg", svg)
    return digests, EXIT_OK


def _spec(kind, cfg):
    params = {k: v for k, v in cfg.items()
              if k not in ("kind", "kappa", "n", "seed", "threads", "c", "eta", "refine", "max_steps")}
    if "c" in cfg:
        params["c"] = cfg["c"]
    return mc.ExperimentSpec(kind, float(cfg.get("kappa", 6.0)), int(cfg.get("n", 10_000)),
                             int(cfg.get("seed", 0)), params, _clock(cfg), int(cfg.get("threads", 1)))


def cmd_experiment(args, cfg):
    kind = args.kind or cfg.get("kind")
    if kind is None:
        raise UsageError("experiment kind missing")
    if kind not in mc.KINDS and kind != "criterion":
        raise UsageError(f"unknown experiment kind {kind!r}; choose from {', '.join(mc.KINDS)}, criterion")
    cfg["kind"] = kind
    try:
        spec = _spec(kind, cfg)
    except (ValueError, criterion.ParseError) as exc:
        raise UsageError(str(exc)) from exc
    cols, rows = mc.run_experiment(spec)
    d = out_dir(args)
    digests = {"results.csv": write_file(d / "results.csv", csv_text(cols, rows))}
    if args.svg:
        i_est, i_ex = cols.index("estimate"), cols.index("exact_or_bound")
        idx = list(range(len(rows)))
        svg = svg_plot([(idx, [r[i_ex] for r in rows], "dots", "#c03030"),
                        (idx, [r[i_est] for r in rows], "dots", "#1f4e9c")],
                       title=f"{kind}: estimate (blue) vs exact or bound (red)")
        digests["results.svg"] = write_file(d / "results.svg", svg)
    failed = any(r[-1] for r in rows)
    for r in rows:
        if r[-1]:
            print(f"row error: {r[-1]}", file=sys.stderr)
    return digests, EXIT_RUNTIME if failed else EXIT_OK


def cmd_criterion(args, cfg):
    try:
        h = criterion.parse_family(args.family)
    except criterion.ParseError as exc:
        raise UsageError(str(exc)) from exc
    kappa = float(args.kappa if args.kappa is not None else cfg.get("kappa", 4.0))
    r = args.r if args.r is not None else (float(cfg["r"]) if "r" in cfg else None)
    try:
        v = criterion.integral_test(h, kappa, r, int(cfg.get("block_count", 40)))
    except criterion.CriterionDomainError as exc:
        raise UsageError(str(exc)) from exc
    print(f"family      {h.tag}")
    print(f"kappa       {kappa:g}")
    print(f"verdict     {v.classification}")
    print(f"level       {v.level}")
    print(f"regularity  {fmt(float(v.regularity))}")
    if v.note:
        print(f"note        {v.note}")
    print("block  log2(I_k)")
    for k, b in enumerate(v.block_integrals):
        print(f"{k:5d}  {b:.6g}")
    return {}, EXIT_VERDICT[v.classification]


# ----------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="sleprox", description=__doc__.split("\n\n")[0],
                                epilog=__doc__.split("\n\n", 1)[1],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value config file (a manifest also works)")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./sleprox_out)")
        sp.add_argument("--threads", type=int, help="worker threads")
        sp.add_argument("--svg", action="store_true", help="also write an SVG plot")

    s = sub.add_parser("simulate", help="sample a trace and write step,t,re,im")
    common(s)
    s.add_argument("--zero-driving", action="store_true", help="use W = 0 (trace is 2i sqrt(t))")
    s.add_argument("overrides", nargs="*", metavar="key=value")

    e = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    common(e)
    e.add_argument("kind", nargs="?", help=", ".join(mc.KINDS) + ", criterion")
    e.add_argument("overrides", nargs="*", metavar="key=value")

    c = sub.add_parser("criterion", help="integral test for a boundary function")
    common(c)
    c.add_argument("family", help="e.g. powlog(beta=0.6)")
    c.add_argument("--kappa", type=float)
    c.add_argument("--r", type=float)
    c.add_argument("overrides", nargs="*", metavar="key=value")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        # key=value overrides may follow options, which argparse leaves unparsed
        args, extra = parser.parse_known_args(argv)
        stray = [a for a in extra if a.startswith("-") or "=" not in a]
        if stray:
            parser.error(f"unrecognized arguments: {' '.join(stray)}")
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    args.overrides = list(args.overrides) + extra
    # a kind given as key=value-looking text is really an override
    if getattr(args, "kind", None) and "=" in args.kind:
        args.overrides.insert(0, args.kind)
        args.kind = None
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config, args.overrides)
        if args.seed is not None:
            cfg["seed"] = str(args.seed)
        if args.threads is not None:
            cfg["threads"] = str(args.threads)
        run = {"simulate": cmd_simulate, "experiment": cmd_experiment,
               "criterion": cmd_criterion}[args.command]
        digests, code = run(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LoewnerError, ValueError, ArithmeticError, OSError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if digests:
        d = out_dir(args)
        (d / "manifest.txt").write_text(
            manifest_text(args.command, cfg, digests, time.perf_counter() - t0))
        for name in digests:
            print(d / name)
    return code


if __name__ == "__main__":
    sys.exit(main())
