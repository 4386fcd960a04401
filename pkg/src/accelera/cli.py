"""Command-line front end: ``accelera analyze | compare | bench``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import benchmarks
from .acceleration import AnalysisOptions, accelerate, make_template
from .exceptions import AcceleraError, ModelError
from .lgg import lgg_propagate
from .linalg import jordan_decompose
from .model_io import FORMAT_VERSION, jsonable, load_model, parse_model, write_results

EXIT_OK = 0
EXIT_ANALYSIS = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _load(spec):
    if spec.startswith("builtin:"):
        key = spec.split(":", 1)[1]
        if key.startswith("convoyCar") and key[9:].isdigit():
            return benchmarks.convoy_car(int(key[9:]))
        if key not in benchmarks.BUILTIN:
            raise UsageError(f"unknown builtin model {key!r}")
        return benchmarks.BUILTIN[key]()
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"model file not found: {spec}")
    try:
        return load_model(path)
    except ModelError as e:
        raise ModelError(e.message, e.line, e.column) from None


def _template(spec, model):
    if spec is None:
        return None
    if spec.startswith("file:"):
        path = Path(spec[5:])
        if not path.exists():
            raise UsageError(f"template file not found: {path}")
        rows = [list(map(float, ln.split())) for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
        T = np.array(rows, dtype=float).reshape(len(rows), -1) if rows else np.zeros((0, model.p))
        if T.shape[1] != model.p:
            raise UsageError(f"template file rows need {model.p} entries")
        return T
    jf = None
    if "eigen" in spec:
        jf = jordan_decompose(model.A)
    try:
        return make_template(spec, model.p, jf)
    except ModelError as e:
        raise UsageError(e.message) from None


def _options(args, model):
    opts = dict(model.options)
    if getattr(args, "dirs", None) is not None:
        opts["dir_budget"] = args.dirs
    if getattr(args, "input_mode", None):
        opts["input_mode"] = args.input_mode
    if getattr(args, "horizon", None) is not None and args.command == "analyze":
        opts["horizon"] = args.horizon
    try:
        return AnalysisOptions.from_dict(opts)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_analyze(args):
    model = _load(args.model)
    T = _template(args.template, model)
    opts = _options(args, model)
    tube = accelerate(model, T, opts)
    text = write_results(tube, fmt=args.format, model_name=model.name, include_timings=not args.no_timings)
    _emit(text, args.out)
    if not args.quiet:
        print(f"{model.name}: n_lower={tube.n_lower} n_upper={tube.n_upper} mode={tube.mode} "
              f"({tube.timings['total']:.3f} s)", file=sys.stderr)
    return EXIT_OK


def compare_runs(model, N, T=None, opts=None):
    """Acceleration (unbounded) and LGG (horizon ``N``) side by side."""
    t0 = time.perf_counter()
    tube = accelerate(model, T, opts)
    t_acc = time.perf_counter() - t0
    run = lgg_propagate(model, N, tube.template)
    rows = []
    for d, alo, ahi, llo, lhi in zip(tube.template, tube.lo, tube.hi, run.lo, run.hi):
        rows.append({"direction": d, "acceleration": {"lo": alo, "hi": ahi}, "lgg": {"lo": llo, "hi": lhi}})
    return {
        "format_version": FORMAT_VERSION,
        "model": model.name,
        "N": int(N),
        "n_lower": tube.n_lower,
        "n_upper": tube.n_upper,
        "directions": rows,
        "timings": {"acceleration": t_acc, "lgg": run.elapsed},
    }


def cmd_compare(args):
    if args.horizon is None:
        raise UsageError("compare needs --horizon")
    model = _load(args.model)
    T = _template(args.template, model)
    opts = _options(args, model)
    res = compare_runs(model, int(args.horizon), T, opts)
    if args.no_timings:
        res.pop("timings")
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        p = model.p
        w.writerow([f"d{i}" for i in range(p)] + ["acc_lo", "acc_hi", "lgg_lo", "lgg_hi"])
        for r in res["directions"]:
            w.writerow([repr(float(x)) for x in r["direction"]]
                       + [repr(float(r["acceleration"]["lo"])), repr(float(r["acceleration"]["hi"])),
                          repr(float(r["lgg"]["lo"])), repr(float(r["lgg"]["hi"]))])
        text = buf.getvalue()
    else:
        text = json.dumps(jsonable(res), indent=2, sort_keys=True)
    _emit(text, args.out)
    if not args.quiet and "timings" in res:
        t = res["timings"]
        print(f"{model.name}: acceleration {t['acceleration']:.3f} s, LGG N={args.horizon} {t['lgg']:.3f} s",
              file=sys.stderr)
    return EXIT_OK


def _bench_one(label, loader, opts_override):
    t0 = time.perf_counter()
    try:
        model = loader()
        opts = AnalysisOptions.from_dict({**model.options, **opts_override})
        tube = accelerate(model, None, opts)
        width = tube.hi - tube.lo
        return {
            "model": label,
            "status": "ok",
            "p": model.p,
            "runtime": time.perf_counter() - t0,
            "n_lower": tube.n_lower,
            "n_upper": tube.n_upper,
            "mean_width": float(np.mean(width)) if width.size else 0.0,
            "max_hi": float(np.max(tube.hi)) if width.size else 0.0,
        }
    except (AcceleraError, ValueError, OSError) as e:
        return {"model": label, "status": "failed", "error": str(e), "runtime": time.perf_counter() - t0}


def _threads(requested):
    cap = os.environ.get("ACCELERA_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


def cmd_bench(args):
    jobs = []
    d = Path(args.dir) if args.dir else None
    if d is not None:
        if not d.is_dir():
            raise UsageError(f"benchmark directory not found: {d}")
        for path in sorted(list(d.glob("*.model")) + list(d.glob("*.json"))):
            jobs.append((path.name, (lambda p=path: load_model(p))))
    for n in args.sizes or []:
        jobs.append((f"convoyCar{n}", (lambda n=n: benchmarks.convoy_car(n))))
    override = {}
    if args.dirs is not None:
        override["dir_budget"] = args.dirs
    workers = _threads(args.jobs)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        report = list(pool.map(lambda j: _bench_one(j[0], j[1], override), jobs))
    if args.no_timings:
        for r in report:
            r.pop("runtime", None)
    text = json.dumps(jsonable({"format_version": FORMAT_VERSION, "results": report}), indent=2, sort_keys=True)
    _emit(text, args.out)
    if not args.quiet:
        for r in report:
            extra = f"{r['runtime']:.2f} s" if "runtime" in r else ""
            print(f"{r['model']}: {r['status']} {extra}", file=sys.stderr)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="accelera", description="Reach tubes of linear loops by abstract acceleration.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--template", default=None,
                       help="box, octagon, eigen (joined with +) or file:<path>; default octagon+eigen")
        p.add_argument("--dirs", type=int, default=None, help="support directions per coordinate pair")
        p.add_argument("--input-mode", choices=["varying", "ball", "constant"], default=None)
        p.add_argument("--out", default=None, help="write results here instead of stdout")
        p.add_argument("--format", choices=["json", "csv"], default="json")
        p.add_argument("--seed", type=int, default=0, help="recorded for reproducibility; the analysis is deterministic")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--no-timings", action="store_true", help="omit wall-clock fields")

    a = sub.add_parser("analyze", help="accelerated reach tube of one model")
    a.add_argument("--model", required=True, help="model file or builtin:<name>")
    a.add_argument("--horizon", type=int, default=None, help="limit the tube to this many iterations")
    common(a)

    c = sub.add_parser("compare", help="acceleration against bounded LGG propagation")
    c.add_argument("--model", required=True)
    c.add_argument("--horizon", type=int, default=None, help="LGG horizon N")
    common(c)

    b = sub.add_parser("bench", help="run every model in a directory plus a convoy sweep")
    b.add_argument("--dir", default=None)
    b.add_argument("--sizes", type=lambda s: [int(x) for x in s.split(",") if x], default=None,
                   help="comma-separated convoy sizes, e.g. 2,5,9,17,33")
    b.add_argument("--jobs", type=int, default=None)
    b.add_argument("--dirs", type=int, default=None)
    b.add_argument("--out", default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--quiet", action="store_true")
    b.add_argument("--no-timings", action="store_true")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE
    handlers = {"analyze": cmd_analyze, "compare": cmd_compare, "bench": cmd_bench}
    try:
        return handlers[args.command](args)
    except UsageError as e:
        print(f"accelera: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as e:
        print(f"{getattr(args, 'model', '')}:{e}", file=sys.stderr)
        return EXIT_USAGE
    except AcceleraError as e:
        print(f"accelera: {e}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
