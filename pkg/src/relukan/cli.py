"""Command-line entry point: ``relukan {fit,bench,forget,gradcheck}``.

Every file a command produces goes under ``--out``.  Output schemas:

fit
    runs/<fn>_<model>_seed<s>.csv       iter,loss,seconds (+ .json sidecar)
    runs/<fn>_<model>_seed<s>_curve.csv x,target,prediction      (arity 1)
    runs/<fn>_<model>_seed<s>_scatter.csv target,prediction      (arity > 1)
    summary.csv                         model,seed,final_train_mse,final_test_mse,seconds
    summary_median.csv                  model,runs,median_train_mse,median_test_mse,median_seconds
bench
    runs/<fn>_<model>.csv               iter,loss,seconds
    bench.csv                           see BENCH_COLUMNS
    bench.json                          device, warmup and environment metadata
forget
    phase<p>.csv                        x,target,prediction
    phase<p>_loss.csv                   iter,loss
    rmse.csv                            phase,region1..regionP
    forget.json                         config echo
gradcheck
    gradcheck.csv                       group,max_rel_error,passed  (only with --out)

Exit codes: 0 success, 1 usage or parameter error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gradcheck
from .core import ParameterError
from .network import build
from .training import (
    TEST_SEED_OFFSET,
    Adam,
    ForgetConfig,
    TrainConfig,
    TrainingDiverged,
    fit,
    forgetting_protocol,
    get_function,
    make_dataset,
    train,
)

SCHEMA_VERSION = 1
MODELS = ("relukan1", "relukan2", "bspline")
WARMUP = 10
BLOCK = 50
CURVE_POINTS = 200
BENCH_COLUMNS = [
    "function", "model", "widths", "G", "k", "iters", "samples", "seed",
    "total_seconds", "mean_iter_seconds", "median_iter_seconds", "final_loss",
    "ratio_bspline_over_model",
]

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list of integers, got {text!r}")


def _model_list(text: str) -> list[str]:
    models = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in models if m not in MODELS]
    if bad or not models:
        raise argparse.ArgumentTypeError(f"models must be drawn from {', '.join(MODELS)}; got {text!r}")
    return models


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relukan", description="ReLU-KAN experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, function, models, seeds, out_required=True):
        p.add_argument("--function", default=function)
        p.add_argument("--model", type=_model_list, default=models,
                       help="comma list of relukan1, relukan2, bspline")
        p.add_argument("--widths", type=_int_list, help="layer widths, e.g. 2,5,1")
        p.add_argument("--grid", type=int, help="grid count G")
        p.add_argument("--span", type=int, help="span parameter k")
        p.add_argument("--iters", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--seeds", type=_int_list, default=seeds)
        p.add_argument("--norm-mode", choices=("constant", "dynamic"), default="constant")
        p.add_argument("--out", type=Path, required=out_required)

    p = sub.add_parser("fit", help="fitting accuracy runs")
    common(p, "f1", ["relukan2"], [1, 2, 3, 4, 5])
    p.add_argument("--jobs", type=int, default=1, help="worker processes for the seed sweep")

    p = sub.add_parser("bench", help="training speed benchmark")
    common(p, "all", list(MODELS), [1])

    p = sub.add_parser("forget", help="catastrophic forgetting protocol")
    common(p, "forget5", ["relukan2"], [1])

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--out", type=Path)
    p.add_argument("--inject-grad-s-flip", action="store_true", help=argparse.SUPPRESS)
    return parser


# -- helpers ----------------------------------------------------------------


def _positive(name, value):
    if value is not None and value < 1:
        raise UsageError(f"--{name} must be >= 1, got {value}")


def _check_lr(args):
    if args.lr is not None and not args.lr > 0:
        raise UsageError(f"--lr must be positive, got {args.lr}")


def _resolve(args, fn):
    """Width vector, G and k for a function, after command-line overrides."""
    widths = list(args.widths) if args.widths else list(fn.widths)
    G = args.grid if args.grid is not None else fn.G
    k = args.span if args.span is not None else fn.k
    if len(widths) < 2 or widths[0] != fn.arity or widths[-1] != 1:
        raise UsageError(
            f"widths {widths} do not fit {fn.name}: need input width {fn.arity} and output width 1"
        )
    if min(widths) < 1 or G < 1 or k < 0:
        raise UsageError(f"invalid architecture widths={widths} G={G} k={k}")
    return widths, G, k


def _net(model, widths, G, k, seed, norm_mode):
    kind = "bspline" if model == "bspline" else "relukan"
    return build(kind, widths, G, k, trainable_endpoints=(model == "relukan2"),
                 rng=seed, norm_mode=norm_mode)


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v: float) -> str:
    return repr(float(v))


# -- fit --------------------------------------------------------------------


def _fit_one(job):
    fn_name, model, widths, G, k, seed, cfg, norm_mode, out = job
    fn = get_function(fn_name, "fit")
    net = _net(model, widths, G, k, seed, norm_mode)
    data = make_dataset(fn, cfg.samples, seed)
    report = train(net, data, cfg)
    report.config["model"] = model
    stem = out / "runs" / f"{fn.name}_{model}_seed{seed}"
    stem.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(stem.with_suffix(".csv"))
    if fn.arity == 1:
        x = (np.arange(CURVE_POINTS) + 0.5) / CURVE_POINTS
        pred = net.forward(x[:, None])[0][:, 0]
        _write_csv(stem.with_name(stem.name + "_curve.csv"), ["x", "target", "prediction"],
                   [(_num(a), _num(b), _num(c)) for a, b, c in zip(x, fn(x[:, None]), pred)])
    else:
        test = make_dataset(fn, cfg.test_samples, seed + TEST_SEED_OFFSET)
        pred = net.forward(test.inputs)[0][:, 0]
        _write_csv(stem.with_name(stem.name + "_scatter.csv"), ["target", "prediction"],
                   [(_num(a), _num(b)) for a, b in zip(test.targets, pred)])
    return model, seed, report.final_train_mse, report.final_test_mse, report.total_seconds


def cmd_fit(args) -> int:
    fn = get_function(args.function, "fit")
    widths, G, k = _resolve(args, fn)
    _check_lr(args)
    _positive("samples", args.samples)
    _positive("jobs", args.jobs)
    if args.iters is not None and args.iters < 0:
        raise UsageError(f"--iters must be >= 0, got {args.iters}")
    cfg = TrainConfig()
    cfg.iterations = cfg.iterations if args.iters is None else args.iters
    cfg.samples = args.samples or cfg.samples
    cfg.lr = args.lr or cfg.lr
    jobs = [(fn.name, m, widths, G, k, s, cfg, args.norm_mode, args.out)
            for m in args.model for s in args.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_fit_one, jobs))
    else:
        rows = [_fit_one(j) for j in jobs]

    _write_csv(args.out / "summary.csv",
               ["model", "seed", "final_train_mse", "final_test_mse", "seconds"],
               [(m, s, _num(a), _num(b), f"{t:.6f}") for m, s, a, b, t in rows])
    medians = []
    for m in args.model:
        mine = [r for r in rows if r[0] == m]
        medians.append((m, len(mine),
                        _num(statistics.median(r[2] for r in mine)),
                        _num(statistics.median(r[3] for r in mine)),
                        f"{statistics.median(r[4] for r in mine):.6f}"))
    _write_csv(args.out / "summary_median.csv",
               ["model", "runs", "median_train_mse", "median_test_mse", "median_seconds"], medians)
    for m, n, _, test_mse, _ in medians:
        print(f"{fn.name} {m}: median test MSE {float(test_mse):.3e} over {n} seed(s)")
    return EXIT_OK


# -- bench ------------------------------------------------------------------


def cmd_bench(args) -> int:
    names = ["f1", "f2", "f3", "f4", "f5"] if args.function == "all" else args.function.split(",")
    fns = [get_function(n.strip(), "speed") for n in names]
    if args.widths and len(fns) > 1:
        raise UsageError("--widths needs a single --function")
    iters = 500 if args.iters is None else args.iters
    if iters <= WARMUP:
        raise UsageError(f"--iters must exceed the {WARMUP} warmup iterations, got {iters}")
    _positive("samples", args.samples)
    _check_lr(args)
    samples = args.samples or 1000
    seed = args.seeds[0]
    plans = [(fn,) + _resolve(args, fn) for fn in fns]  # validate everything first

    rows = []
    for fn, widths, G, k in plans:
        data = make_dataset(fn, samples, seed)
        cfg = TrainConfig(lr=args.lr or 1e-3, iterations=iters, seed=seed, samples=samples)
        # Models take turns in short blocks so slow drifts in machine load
        # hit every model alike.  Each keeps its own optimizer, so the result
        # equals one uninterrupted run per model.
        runs = {}
        for model in args.model:
            net = _net(model, widths, G, k, seed, args.norm_mode)
            runs[model] = (net, Adam(net.flat_params(), cfg.lr), [], [])
        for start in range(0, iters, BLOCK):
            block = replace(cfg, iterations=min(BLOCK, iters - start))
            for net, opt, losses, secs in runs.values():
                l, t = fit(net, data, block, opt)
                losses += l
                secs += t
        timed = {}
        for model, (_, _, losses, secs) in runs.items():
            kept = secs[WARMUP:]
            timed[model] = (losses, secs, statistics.median(kept), statistics.fmean(kept))
            _write_csv(args.out / "runs" / f"{fn.name}_{model}.csv", ["iter", "loss", "seconds"],
                       [(i + 1, _num(l), f"{t:.6f}") for i, (l, t) in enumerate(zip(losses, np.cumsum(secs)))])
        base = timed.get("bspline")
        for model, (losses, secs, med, mean) in timed.items():
            ratio = base[2] / med if base else float("nan")
            rows.append((fn.name, model, "-".join(map(str, widths)), G, k, iters, samples, seed,
                         f"{sum(secs):.6f}", f"{mean:.3e}", f"{med:.3e}", _num(losses[-1]), f"{ratio:.3f}"))
            print(f"{fn.name} {model}: median {med * 1e3:.3f} ms/iter, total {sum(secs):.3f} s, "
                  f"bspline/model {ratio:.2f}")
    _write_csv(args.out / "bench.csv", BENCH_COLUMNS, rows)
    meta = {
        "schema": f"relukan-bench/{SCHEMA_VERSION}",
        "device": "cpu",
        "note": "CPU only; no GPU timings are measured",
        "warmup_iterations_discarded": WARMUP,
        "schedule": f"models interleaved in blocks of {BLOCK} iterations",
        "timing_scope": "forward, backward and optimizer step; excludes data generation and file output",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "machine": platform.machine(),
        "processor": platform.processor(),
    }
    (args.out / "bench.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return EXIT_OK


# -- forget -----------------------------------------------------------------


def cmd_forget(args) -> int:
    fn = get_function(args.function)
    if fn.arity != 1:
        raise UsageError(f"the forgetting protocol needs a unary function, {fn.name} has arity {fn.arity}")
    widths, G, k = _resolve(args, fn)
    if len(args.model) != 1:
        raise UsageError("forget runs a single --model")
    model = args.model[0]
    _check_lr(args)
    cfg = ForgetConfig(seed=args.seeds[0])
    if args.iters is not None:
        _positive("iters", args.iters)
        cfg.iterations = args.iters
    if args.samples is not None:
        _positive("samples", args.samples)
        cfg.samples_per_phase = args.samples
    cfg.lr = args.lr or cfg.lr

    net = _net(model, widths, G, k, cfg.seed, args.norm_mode)
    phases = forgetting_protocol(net, cfg)
    targets = None
    for ph in phases:
        if targets is None:
            targets = fn(ph.grid_x[:, None])
        _write_csv(args.out / f"phase{ph.phase}.csv", ["x", "target", "prediction"],
                   [(_num(a), _num(b), _num(c)) for a, b, c in zip(ph.grid_x, targets, ph.grid_pred)])
        _write_csv(args.out / f"phase{ph.phase}_loss.csv", ["iter", "loss"],
                   [(i + 1, _num(l)) for i, l in enumerate(ph.losses)])
    P = cfg.phases
    _write_csv(args.out / "rmse.csv", ["phase"] + [f"region{r + 1}" for r in range(P)],
               [[ph.phase] + [_num(v) for v in ph.region_rmse] for ph in phases])
    meta = {
        "schema": f"relukan-forget/{SCHEMA_VERSION}",
        "model": model, "widths": widths, "G": G, "k": k, "norm_mode": args.norm_mode,
        "phases": P, "iterations": cfg.iterations, "samples_per_phase": cfg.samples_per_phase,
        "lr": cfg.lr, "seed": cfg.seed, "grid_points": cfg.grid_points,
        "keep_optimizer_state": cfg.keep_optimizer_state,
    }
    (args.out / "forget.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    for ph in phases:
        print(f"phase {ph.phase}: " + " ".join(f"{v:.4f}" for v in ph.region_rmse))
    return EXIT_OK


# -- gradcheck --------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    _positive("probes", args.probes)
    report = gradcheck.run_all(seed=args.seeds[0], probes=args.probes,
                               flip_grad_S=args.inject_grad_s_flip)
    rows = []
    for group, err in sorted(report.max_error.items()):
        ok = err < gradcheck.THRESHOLD
        rows.append((group, f"{err:.3e}", "yes" if ok else "no"))
        print(f"{group:24s} {err:.3e} {'ok' if ok else 'FAIL'}")
    print("probes: " + ", ".join(f"{k} {v}" for k, v in report.probes.items()))
    if args.out is not None:
        _write_csv(args.out / "gradcheck.csv", ["group", "max_rel_error", "passed"], rows)
    print("PASS" if report.passed else f"FAIL: some group reached {gradcheck.THRESHOLD:g}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


COMMANDS = {"fit": cmd_fit, "bench": cmd_bench, "forget": cmd_forget, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if getattr(args, "out", None) is not None:
            args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except (UsageError, ParameterError) as exc:
        print(f"relukan {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"relukan {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
