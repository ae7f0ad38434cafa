"""Command-line front end.

Subcommands: ``estimate``, ``ci``, ``simulate``, ``quantiles`` and
``bands-input``. Exit status is 0 on success, 1 on usage errors and 2 on
data or convergence errors. Every run that knows its output location
writes a JSON manifest next to its outputs, including failed runs.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from functools import partial
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._parallel import THREADS_ENV, resolve_threads
from .data import default_grid, load_csv
from .exceptions import ConvergenceError, DataError, DrlogconError, UsageError
from .inference import (PIVOTS_ENV, PivotTable, crossfit_chi, default_bandwidth,
                        default_pivot_path, difference_ci, estimate_chi, log_ratio_ci,
                        pointwise_ci, simulate_pivots, band_order_statistics)
from .logconcave import LogConcaveFit, cdf, density, left_derivative, log_density_array
from .nuisance import fit_nuisances, load_predictions
from .onestep import estimate_density, estimate_density_crossfit, make_folds
from . import sim  # noqa: E402

NUISANCE_SPECS = ("logistic+ls-uniform", "logistic+ls-normal")
KIND_MAP = {"density": "density", "deriv": "derivative", "diff": "difference",
            "logratio": "log_ratio"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker processes (default ${THREADS_ENV} or 1)")
    common.add_argument("--seed", type=int, default=0, help="master seed")

    data = _Parser(add_help=False)
    data.add_argument("--data", required=True, help="CSV file with a header row")
    data.add_argument("--treatment", default="A", help="treatment column (default A)")
    data.add_argument("--outcome", default="Y", help="outcome column (default Y)")
    data.add_argument("--covariates", default=None,
                      help="comma-separated covariate columns (default: all other columns)")
    data.add_argument("--delimiter", default=",")
    data.add_argument("--nuisance", default="logistic+ls-uniform",
                      help="logistic+ls-uniform | logistic+ls-normal | external:FILE")
    data.add_argument("--crossfit", type=int, default=None, metavar="K",
                      help="cross-fit with K folds")
    data.add_argument("--grid-n", type=int, default=None,
                      help="grid resolution (default: total sample size)")
    data.add_argument("--eps", type=float, default=0.01, help="propensity clipping bound")

    p = _Parser(prog="drlogcon", description="Doubly-robust log-concave counterfactual densities.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("estimate", parents=[common, data], help="fit a counterfactual density")
    e.add_argument("--arm", type=int, choices=(0, 1), required=True)
    e.add_argument("--out", required=True, help="fit JSON path; the density CSV goes beside it")

    c = sub.add_parser("ci", parents=[common, data], help="pointwise confidence intervals")
    c.add_argument("--arm", type=int, choices=(0, 1), default=1)
    c.add_argument("--s0", required=True, help="comma-separated evaluation points")
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--kind", choices=tuple(KIND_MAP), default="density")
    c.add_argument("--pivots", default=None, help=f"pivot table (default ${PIVOTS_ENV} or shipped)")
    c.add_argument("--fit", default=None, help="fit JSON for --arm (density/deriv)")
    c.add_argument("--fit1", default=None, help="arm-1 fit JSON (diff/logratio)")
    c.add_argument("--fit0", default=None, help="arm-0 fit JSON (diff/logratio)")
    c.add_argument("--bandwidth-exp", type=float, default=0.1, help="h = n^(-b)")
    c.add_argument("--out", required=True, help="CSV of intervals")

    s = sub.add_parser("simulate", parents=[common], help="run the synthetic study")
    s.add_argument("--experiment", choices=("l1", "coverage", "contrast-coverage"), required=True)
    s.add_argument("--case", type=int, choices=sim.CASES, default=None,
                   help="nuisance case (l1 runs all three by default)")
    s.add_argument("--n-list", default="500,1000,2500")
    s.add_argument("--reps", type=int, default=200)
    s.add_argument("--arm", type=int, choices=(0, 1), default=1)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--crossfit", type=int, default=None, metavar="K")
    s.add_argument("--kind", default=None,
                   help="density|deriv for coverage, diff|logratio for contrast-coverage")
    s.add_argument("--points", default=None, help="comma-separated evaluation points")
    s.add_argument("--pivots", default=None)
    s.add_argument("--full-scale", action="store_true",
                   help="1000 replications and n up to 8000 unless given explicitly")
    s.add_argument("--out-dir", required=True)

    q = sub.add_parser("quantiles", parents=[common], help="simulate a pivot table")
    q.add_argument("--k", type=int, default=2)
    q.add_argument("--nsim", type=int, default=100_000)
    q.add_argument("--B", type=int, default=10_000)
    q.add_argument("--out", required=True)

    b = sub.add_parser("bands-input", parents=[common], help="order statistics for band algorithms")
    b.add_argument("--fit", required=True, help="fit JSON")
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--out", required=True)
    return p


# ---------------------------------------------------------------------------
# helpers


def _load_sample(args):
    path = Path(args.data)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    if args.covariates:
        covs = [c.strip() for c in args.covariates.split(",") if c.strip()]
    else:
        with path.open(newline="") as fh:
            header = next(csv.reader(fh, delimiter=args.delimiter), None)
        if header is None:
            raise DataError(f"{path}: empty file")
        covs = [h.strip() for h in header if h.strip() not in (args.treatment, args.outcome)]
    return load_csv(path, covs, args.treatment, args.outcome, args.delimiter)


def _nuisance_plan(args):
    spec = args.nuisance
    if spec.startswith("external:"):
        if args.crossfit:
            raise UsageError("--crossfit cannot be combined with external per-row predictions")
        return "external", spec.split(":", 1)[1]
    if spec not in NUISANCE_SPECS:
        raise UsageError(f"unknown --nuisance {spec!r}")
    if args.crossfit is not None and args.crossfit < 2:
        raise UsageError("--crossfit needs K >= 2")
    return "model", spec


def _arm_estimate(args, sample, arm, kind, spec, fit_path=None):
    """Return (fit, chi_builder) for one arm."""
    grid = default_grid(sample, arm, args.grid_n)
    if kind == "external":
        nuis = load_predictions(spec, sample.n, arm, args.eps)
        fit = LogConcaveFit.from_json(Path(fit_path).read_text()) if fit_path else \
            estimate_density(sample, arm, nuis, grid)
        return fit, lambda s0, h: estimate_chi(sample, arm, nuis, s0, h)
    if args.crossfit:
        factory = partial(fit_nuisances, arm=arm, spec=spec, eps=args.eps)
        folds = make_folds(sample.n, args.crossfit, args.seed)
        fit = LogConcaveFit.from_json(Path(fit_path).read_text()) if fit_path else \
            estimate_density_crossfit(sample, arm, factory, grid=grid, folds=folds)
        return fit, lambda s0, h: crossfit_chi(sample, arm, factory, folds, s0, h)
    nuis = fit_nuisances(sample, arm, spec, args.eps)
    fit = LogConcaveFit.from_json(Path(fit_path).read_text()) if fit_path else \
        estimate_density(sample, arm, nuis, grid)
    return fit, lambda s0, h: estimate_chi(sample, arm, nuis, s0, h)


def _density_rows(fit: LogConcaveFit, points):
    logp, inside = log_density_array(fit, points)
    lo, _ = fit.support
    rows = []
    for s, lp, ok in zip(points, logp, inside):
        ld = left_derivative(fit, s) if s > lo else math.nan
        rows.append((s, density(fit, s), lp if ok else -math.inf, ld, cdf(fit, s)))
    return rows


# ---------------------------------------------------------------------------
# commands


def cmd_estimate(args, outputs):
    kind, spec = _nuisance_plan(args)
    sample = _load_sample(args)
    fit, _ = _arm_estimate(args, sample, args.arm, kind, spec)
    out = Path(args.out)
    dens = out.with_suffix(".density.csv")
    outputs.extend([str(out), str(dens)])
    out.write_text(fit.to_json() + "\n")
    _write_csv(dens, ["s", "p_hat", "log_p_hat", "left_deriv", "F_hat"],
               _density_rows(fit, fit.meta["grid"].points))


def cmd_ci(args, outputs):
    kind_name = KIND_MAP[args.kind]
    contrast = kind_name in ("difference", "log_ratio")
    if contrast:
        if args.fit is not None:
            raise UsageError(f"--kind {args.kind} needs both arms' fits (--fit1 and --fit0), not --fit")
        if (args.fit1 is None) != (args.fit0 is None):
            raise UsageError(f"--kind {args.kind} needs both arms' fits (--fit1 and --fit0)")
    elif args.fit1 is not None or args.fit0 is not None:
        raise UsageError("--fit1/--fit0 apply only to --kind diff or logratio")
    if not 0.0 < args.alpha < 1.0:
        raise UsageError("--alpha must lie in (0, 1)")
    points = _float_list(args.s0)
    if not points:
        raise UsageError("--s0 needs at least one point")
    nkind, spec = _nuisance_plan(args)
    if contrast and nkind == "external":
        raise UsageError("contrast intervals need fitted nuisance models for both arms")
    pivots = PivotTable.load(args.pivots or default_pivot_path())
    sample = _load_sample(args)
    h = default_bandwidth(sample.n, args.bandwidth_exp)
    rows = []
    if contrast:
        f1, chi1 = _arm_estimate(args, sample, 1, nkind, spec, args.fit1)
        f0, chi0 = _arm_estimate(args, sample, 0, nkind, spec, args.fit0)
        build = difference_ci if kind_name == "difference" else log_ratio_ci
        for s0 in points:
            ci = build(f1, f0, chi1(s0, h), chi0(s0, h), pivots, s0, args.alpha, sample.n)
            rows.append((s0, ci.kind, ci.center, ci.lower, ci.upper, ci.half_width, ci.status))
    else:
        fit, chi = _arm_estimate(args, sample, args.arm, nkind, spec, args.fit)
        for s0 in points:
            ci = pointwise_ci(fit, chi(s0, h), pivots, s0, args.alpha, kind_name, sample.n)
            rows.append((s0, ci.kind, ci.center, ci.lower, ci.upper, ci.half_width, ci.status))
    out = Path(args.out)
    outputs.append(str(out))
    _write_csv(out, ["s0", "kind", "estimate", "lower", "upper", "half_width", "status"], rows)


def cmd_simulate(args, outputs):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_list = _int_list(args.n_list)
    reps = args.reps
    if args.full_scale:
        if args.n_list == "500,1000,2500":
            n_list = [500, 1000, 2500, 4000, 6000, 8000]
        if args.reps == 200:
            reps = 1000
    threads = resolve_threads(args.threads)
    if args.experiment == "l1":
        cases = (args.case,) if args.case else sim.CASES
        rows = sim.run_l1_experiment(n_list, reps, cases, args.arm, args.crossfit, args.seed,
                                     threads)
        path = out_dir / "l1.csv"
    else:
        contrast = args.experiment == "contrast-coverage"
        default_kind = "diff" if contrast else "density"
        kind = KIND_MAP.get(args.kind or default_kind)
        if kind is None or (kind in ("difference", "log_ratio")) != contrast:
            raise UsageError(f"--kind {args.kind} does not fit --experiment {args.experiment}")
        if args.points:
            points = _float_list(args.points)
        else:
            points = sim.CONTRAST_POINTS if contrast else (5.5, 6.0, 6.5, 7.0)
        pivots = PivotTable.load(args.pivots or default_pivot_path())
        rows = []
        for n in n_list:
            rows += sim.run_coverage_experiment(n, reps, args.case or 1, args.arm, kind, points,
                                                args.alpha, args.crossfit, args.seed, pivots,
                                                threads)
        path = out_dir / f"{args.experiment}.csv"
    outputs.append(str(path))
    sim.write_table(rows, path)
    failures = sum(r["failures"] for r in rows)
    if failures:
        print(f"{failures} replication(s) failed; see the failures column", file=sys.stderr)


def cmd_quantiles(args, outputs):
    out = Path(args.out)
    outputs.append(str(out))
    table = simulate_pivots(args.k, args.nsim, args.B, args.seed, resolve_threads(args.threads))
    table.save(out)


def cmd_bands_input(args, outputs):
    fit = LogConcaveFit.from_json(Path(args.fit).read_text())
    out = Path(args.out)
    outputs.append(str(out))
    vals = band_order_statistics(fit, args.n, args.seed)
    _write_csv(out, ["i", "order_statistic"], [(i + 1, v) for i, v in enumerate(vals)])


COMMANDS = {"estimate": cmd_estimate, "ci": cmd_ci, "simulate": cmd_simulate,
            "quantiles": cmd_quantiles, "bands-input": cmd_bands_input}


def _manifest_path(args) -> Path | None:
    if getattr(args, "out_dir", None):
        return Path(args.out_dir) / "manifest.json"
    out = getattr(args, "out", None)
    if out:
        return Path(out).with_suffix(".manifest.json")
    return None


def _write_manifest(args, outputs, error):
    path = _manifest_path(args)
    if path is None:
        return
    config = {k: v for k, v in sorted(vars(args).items()) if k != "threads"}
    manifest = {
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "versions": {"drlogcon": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": sys.version.split()[0]},
        "outputs": outputs,
        "status": "error" if error else "ok",
        "error": error,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"warning: could not write manifest: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    outputs: list[str] = []
    try:
        COMMANDS[args.command](args, outputs)
    except UsageError as exc:
        _write_manifest(args, outputs, {"type": "usage", "message": str(exc)})
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ConvergenceError, DrlogconError, OSError) as exc:
        _write_manifest(args, outputs, {"type": exc.__class__.__name__, "message": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _write_manifest(args, outputs, None)
    return 0


if __name__ == "__main__":
    sys.exit(main())
