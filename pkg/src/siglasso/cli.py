"""Command-line entry point: ``siglasso {simulate,fit,reconstruct,evaluate,sigcheck,forecast}``.

Every command writes a ``*.manifest.json`` next to its main output recording the resolved
arguments, seeds, input/output SHA-256 digests and wall-clock timings. Outputs are written
atomically and removed again if the command fails part-way.
"""

from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, formats, metrics
from .pipeline import (
    MAX_FIT_DEPTH,
    NORMALIZATIONS,
    Dataset,
    build_lagged_dataset,
    feature_importance,
    fit,
    reconstruct,
)
from .regression import DEFAULT_MAX_ITER, DEFAULT_N_LAMBDAS, DEFAULT_RATIO, DEFAULT_TOL
from .sigcheck import DEFAULT_NOISES, DEFAULT_SAMPLES, SIGCHECK_HEADER, loglog_slope, run_sigcheck
from .simulate import SETTINGS, SimulationConfig, simulate

log = logging.getLogger("siglasso")

THREADS_ENV = "SIGLASSO_THREADS"


class CommandError(Exception):
    """A user-facing failure; reported without a traceback."""


# ---------------------------------------------------------------- argument parsing helpers

def int_range(text):
    """``"5"`` -> (5, 5); ``"30:60"`` -> (30, 60)."""
    try:
        parts = [int(p) for p in text.split(":")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected N or LO:HI, got {text!r}") from exc
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or parts[0] < 1 or parts[0] > parts[1]:
        raise argparse.ArgumentTypeError(f"expected N or LO:HI with 1 <= LO <= HI, got {text!r}")
    return tuple(parts)


def int_list(text):
    """Comma list with inclusive ``a..b`` / ``a:b`` ranges, e.g. ``"2..6"`` or ``"1,3,5"``."""
    out = []
    try:
        for part in text.split(","):
            for sep in ("..", ":"):
                if sep in part:
                    lo, hi = (int(p) for p in part.split(sep))
                    out.extend(range(lo, hi + 1))
                    break
            else:
                out.append(int(part))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def float_list(text):
    try:
        return [float(p) for p in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc


def default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- run bookkeeping

class Run:
    """Tracks inputs, outputs and timings of one command; cleans up on failure."""

    def __init__(self, args, manifest_path):
        self.args = args
        self.manifest_path = Path(manifest_path)
        self.inputs, self.outputs, self.timings = [], [], {}
        self.extra = {}
        self._t0 = time.perf_counter()

    def input(self, path):
        path = Path(path)
        if not path.is_file():
            raise CommandError(f"cannot read {path}")
        self.inputs.append(path)
        return path

    def write(self, path, text):
        path = Path(path)
        self.outputs.append(path)
        formats.write_text(path, text)
        return path

    def timed(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = round(time.perf_counter() - self.t, 6)

        return _Timer()

    def finish(self):
        self.timings["total"] = round(time.perf_counter() - self._t0, 6)
        args = {k: v for k, v in vars(self.args).items() if k != "func"}
        manifest = {
            "command": self.args.command,
            "argv": sys.argv[1:],
            "args": {k: list(v) if isinstance(v, tuple) else v for k, v in args.items()},
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "inputs": {str(p): formats.digest(p) for p in self.inputs},
            "outputs": {str(p): formats.digest(p) for p in self.outputs},
            "timings_s": self.timings,
            **self.extra,
        }
        self.outputs.append(self.manifest_path)
        formats.write_text(self.manifest_path, formats.dumps(manifest))

    def abort(self):
        for p in self.outputs:
            for q in (p, p.with_name(p.name + ".tmp")):
                if q.exists():
                    q.unlink()


def sibling(path, suffix):
    """``out/data.jsonl`` + ``.manifest.json`` -> ``out/data.manifest.json``."""
    path = Path(path)
    return path.with_name(path.name.split(".")[0] + suffix)


# ---------------------------------------------------------------- commands

def cmd_simulate(args, run):
    config = SimulationConfig(
        setting=args.setting, n=args.n, dense_points=args.dense_points,
        feature_samples=args.feature_samples, target_samples=args.target_samples,
        noise_x=args.noise_x, noise_y=args.noise_y, seed=args.seed, dims=args.dims, p=args.p,
        system_seed=args.system_seed, downsample=not args.dense, lags=args.lags,
    )
    with run.timed("simulate"):
        samples = simulate(config)
    records = [s.record for s in samples]
    run.write(args.out, formats.dataset_to_jsonl(records))
    run.write(sibling(args.out, ".config.json"), formats.dumps(config.to_dict()))
    if args.emit_truth:
        run.write(sibling(args.out, ".truth.json"), formats.dumps(formats.truth_to_json(samples, config.to_dict())))
    run.extra["config"] = config.to_dict()
    run.extra["seeds"] = {"seed": config.seed, "system_seed": config.system_seed}
    ds = Dataset(records)
    print(f"wrote {ds.n} records (M={ds.M}) to {args.out}")


def cmd_fit(args, run):
    ds = formats.read_dataset(run.input(args.data))
    bad = [N for N in args.depth_grid if not 1 <= N <= MAX_FIT_DEPTH]
    if bad:
        raise CommandError(f"depths {bad} outside 1..{MAX_FIT_DEPTH}")
    with run.timed("fit"):
        model = fit(ds, args.depth_grid, args.folds, args.seed, n_lambdas=args.n_lambdas,
                    ratio=args.ratio, tol=args.tol, max_iter=args.max_iter,
                    time_augment=not args.no_time, normalize=args.normalize,
                    threads=args.threads)
    run.write(args.out, formats.dumps(formats.model_to_json(model)))
    curve_rows = [(N, c, e) for N, cur in sorted(model.diagnostics["cv_curves"].items())
                  for c, e in zip(cur["C"], cur["cv_error"])]
    run.write(sibling(args.out, ".cv.csv"), formats.csv_text(["N", "C", "cv_error"], curve_rows))
    imp = feature_importance(model, include_time=args.include_time)
    run.write(sibling(args.out, ".importance.csv"), formats.csv_text(["channel", "pfi", "cfi"], imp))
    run.extra["seeds"] = {"cv_seed": args.seed}
    run.extra["selected"] = {"N": model.N, "C": model.C, "cv_error": model.diagnostics["cv_error"],
                             "converged": model.diagnostics["converged"]}
    print(f"selected N={model.N} C={model.C:.6g} cv_error={model.diagnostics['cv_error']:.6g}")


def _t_grid(spec, rec):
    times = rec.features.times
    if spec == "train":
        return rec.targets.times
    if spec == "features":
        return times
    if spec.startswith("dense:"):
        k = int(spec.split(":", 1)[1])
        if k < 2:
            raise CommandError("dense:K needs K >= 2")
        grid = np.linspace(0.0, 1.0, k)
        return grid[(grid >= times[0]) & (grid <= times[-1])]
    ts = np.asarray(float_list(spec.removeprefix("list:")))
    if np.any(ts < times[0]) or np.any(ts > times[-1]):
        raise CommandError(f"t-grid leaves the feature range of individual {rec.id}")
    return np.sort(ts)


def cmd_reconstruct(args, run):
    model = formats.read_model(run.input(args.model))
    ds = formats.read_dataset(run.input(args.data))
    if ds.d != model.channels:
        raise CommandError(f"model expects {model.channels} feature channels, data has {ds.d}")
    blocks = []
    with run.timed("reconstruct"):
        for rec in ds:
            ts = _t_grid(args.t_grid, rec)
            blocks.append((rec.id, ts, reconstruct(model, rec.features, ts)))
    run.write(args.out, formats.predictions_csv(blocks))
    print(f"wrote predictions for {len(blocks)} individuals to {args.out}")


def cmd_evaluate(args, run):
    preds = formats.read_predictions(run.input(args.pred))
    truth = formats.read_truth(run.input(args.truth))
    missing = sorted(set(truth) - set(preds))
    unknown = sorted(set(preds) - set(truth))
    if missing or unknown:
        raise CommandError(f"id mismatch: missing predictions for {missing}; unknown ids {unknown}")
    report = metrics.evaluate(preds, truth, forecast=args.forecast)
    run.write(args.out, formats.dumps(report.to_dict()))
    rows = [(k, v["l2_error"], v["sq_error_last"]) for k, v in sorted(report.per_individual.items())]
    run.write(sibling(args.out, ".per_individual.csv"),
              formats.csv_text(["id", "l2_error", "sq_error_last"], rows))
    msg = f"L2={report.l2_error:.6g} mse_last={report.mse_last_point:.6g}"
    if report.rmse is not None:
        msg += f" rmse={report.rmse:.6g}"
    print(msg)


def cmd_sigcheck(args, run):
    with run.timed("sigcheck"):
        rows = run_sigcheck(args.noise, args.depths, args.samples_list, args.reps, args.seed)
    run.write(args.out, formats.csv_text(SIGCHECK_HEADER, rows))
    slopes = {f"noise={v:g},depth={k}": loglog_slope(rows, v, k) for v in args.noise for k in args.depths}
    run.extra["seeds"] = {"seed": args.seed}
    run.extra["loglog_slopes"] = slopes
    run.extra["bound_violations"] = int(sum(r[-1] for r in rows))
    for key, s in slopes.items():
        print(f"{key}: slope {s:.3f}")


def cmd_forecast(args, run):
    _, fvals = formats.read_series_csv(run.input(args.features))
    _, tvals = formats.read_series_csv(run.input(args.target))
    if len(fvals) != len(tvals):
        raise CommandError(f"feature series has {len(fvals)} samples, target has {len(tvals)}")
    end = args.train_end
    if not 0 < end < len(tvals) - 1:
        raise CommandError(f"--train-end must lie in 1..{len(tvals) - 2}")
    rows, summary = [], {}
    for h in args.horizons:
        if args.window + h > end:
            raise CommandError(f"window {args.window} + horizon {h} exceeds the training span ({end + 1} samples)")
        ds = build_lagged_dataset(fvals, tvals, args.window, h)
        train = [r for r in ds if int(r.id) <= end]
        test = [r for r in ds if int(r.id) > end]
        if len(train) < args.folds:
            raise CommandError(f"horizon {h}: {len(train)} training rows cannot fill {args.folds} folds")
        with run.timed(f"fit_h{h}"):
            model = fit(Dataset(train), args.depth_grid, args.folds, args.seed, n_lambdas=args.n_lambdas,
                        ratio=args.ratio, normalize=args.normalize, threads=args.threads)
        err = []
        for span, recs in (("train", train), ("test", test)):
            for rec in recs:
                pred = reconstruct(model, rec.features, [1.0])[0]
                truth = rec.targets.values[0]
                rows.append((h, int(rec.id), span, *map(float, truth), *map(float, pred)))
                if span == "test":
                    err.append(pred - truth)
        summary[str(h)] = {"N": model.N, "C": model.C,
                           "test_rmse": float(np.sqrt(np.mean(np.square(err)))) if err else None,
                           "test_points": len(err)}
    p = tvals.shape[1]
    header = (["horizon", "index", "span"] + [f"target_{j + 1}" for j in range(p)]
              + [f"pred_{j + 1}" for j in range(p)])
    run.write(args.out, formats.csv_text(header, rows))
    run.write(sibling(args.out, ".report.json"), formats.dumps(summary))
    run.extra["seeds"] = {"cv_seed": args.seed}
    for h, s in summary.items():
        rm = "n/a" if s["test_rmse"] is None else f"{s['test_rmse']:.6g}"
        print(f"h={h}: N={s['N']} test RMSE={rm}")


# ---------------------------------------------------------------- parser

def _add_fit_options(p):
    p.add_argument("--depth-grid", type=int_list, default=[2, 3, 4, 5, 6],
                   help="candidate truncation depths, e.g. 2..6 or 2,4 (default 2..6)")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0, help="seed of the cross-validation split")
    p.add_argument("--n-lambdas", type=int, default=DEFAULT_N_LAMBDAS)
    p.add_argument("--ratio", type=float, default=DEFAULT_RATIO,
                   help="smallest / largest penalty on the path")
    p.add_argument("--normalize", choices=NORMALIZATIONS, default="prefix",
                   help="feature rescaling: each prefix by its own total variation (prefix), "
                        "all paths by the largest training total variation (dataset), or none")
    p.add_argument("--no-normalize", dest="normalize", action="store_const", const="none",
                   help="same as --normalize none")
    p.add_argument("--threads", type=int, default=default_threads(),
                   help=f"worker threads across depths (default: ${THREADS_ENV} or 1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="siglasso", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--setting", choices=SETTINGS, required=True)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--feature-samples", type=int_range, default=(30, 60), metavar="K|LO:HI")
    p.add_argument("--target-samples", type=int_range, default=(5, 5), metavar="M|LO:HI")
    p.add_argument("--noise-x", type=float, default=0.0, help="feature noise variance")
    p.add_argument("--noise-y", type=float, default=0.0, help="target noise variance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--system-seed", type=int, default=None,
                   help="seed of the shared CDE matrix (well_specified); defaults to --seed")
    p.add_argument("--dims", type=int, default=2, help="driver channels (well/ill-specified)")
    p.add_argument("--p", type=int, default=1, help="response dimension (well_specified)")
    p.add_argument("--lags", type=int, default=10)
    p.add_argument("--dense-points", type=int, default=1001)
    p.add_argument("--dense", action="store_true", help="keep the full dense grid (test data)")
    p.add_argument("--emit-truth", action="store_true", help="also write the dense ground truth")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="cross-validate and fit a SigLasso model")
    p.add_argument("--data", required=True)
    _add_fit_options(p)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--no-time", action="store_true", help="do not prepend the time channel")
    p.add_argument("--include-time", action="store_true", help="list the time channel in the importance CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("reconstruct", help="predict target trajectories")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--t-grid", default="train",
                   help="train | features | dense:K | list:t1,t2,... (default train)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True, help="truth sidecar JSON or JSON-Lines dataset")
    p.add_argument("--forecast", action="store_true", help="also report RMSE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sigcheck", help="discretization convergence curves of signatures")
    p.add_argument("--noise", type=float_list, default=list(DEFAULT_NOISES), help="noise variances")
    p.add_argument("--depths", type=int_list, default=[1, 2, 3, 4])
    p.add_argument("--samples-list", type=int_list, default=list(DEFAULT_SAMPLES))
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sigcheck)

    p = sub.add_parser("forecast", help="lagged-window forecasting on a single series")
    p.add_argument("--features", required=True, help="CSV, header row, one column per channel")
    p.add_argument("--target", required=True, help="CSV, header row, one column per response")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--horizons", type=int_list, default=[1], help="e.g. 1:14")
    p.add_argument("--train-end", type=int, required=True, help="last target index used for training")
    _add_fit_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    run = Run(args, sibling(args.out, ".manifest.json"))
    try:
        args.func(args, run)
        run.finish()
    except (CommandError, ValueError, KeyError, OSError) as exc:
        run.abort()
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"siglasso {args.command}: error: {msg}", file=sys.stderr)
        return 1
    except BaseException:
        run.abort()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
