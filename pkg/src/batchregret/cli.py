"""Command-line runner.

Subcommands: memoryless-regret, markov-regret, theorem-sweep, predict.
Every output starts with the version, the full configuration and the seed,
so a file is enough to reproduce itself. Exit codes: 0 success, 2 bad
configuration, 3 evaluation budget exceeded, 4 malformed data file.
"""

import argparse
import csv
import io
import json
import math
import sys
import time

import numpy as np

from batchregret import __version__
from batchregret.errors import BudgetExceededError, DomainError, MalformedDataError
from batchregret.predictors import BETA_0, Family, InitialEstimator, PredictorSpec
from batchregret.regret_markov import (
    SWEEP3_HEADER,
    SWEEP5_HEADER,
    band_check,
    decay_exponent,
    default_initial_grid,
    markov_regret_brute_force,
    markov_regret_mc,
    theorem3_initial_sweep,
    theorem5_transition_sweep,
)
from batchregret.regret_memoryless import (
    SWEEP1_HEADER,
    SWEEP2_HEADER,
    regret,
    residuals_decreasing,
    theorem1_residual_sweep,
    theorem2_sweep,
)
from batchregret.sources import (
    EllRule,
    ExperimentShape,
    MarkovParam,
    ThetaRange,
    extract_counts,
    parse_training_text,
)

EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_DATA = 4

MEMORYLESS_HEADER = ("theta", "n", "ell", "beta", "predictor", "regret", "method", "std_error")
MARKOV_HEADER = (
    "p1", "p", "q", "n", "ell", "predictor", "beta", "method",
    "total", "total_se", "initial", "initial_se", "transition", "transition_se",
)
PREDICT_HEADER = ("position", "symbol", "prob_one", "prob_symbol", "loss", "cumulative_loss")

THEOREM1_BAND = "scaled residual strictly decreasing over the last three rows"
THEOREM3_BAND = (0.4, 0.62)
THEOREM5_BAND = (0.35, 0.7)


class Report:
    """A table plus PASS/FAIL checks and free-form notes."""

    def __init__(self, header, rows=None):
        self.header = tuple(header)
        self.rows = list(rows or [])
        self.checks = []
        self.notes = []

    def check(self, name, passed):
        self.checks.append((name, bool(passed)))


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def render(report, config, fmt):
    seed = config.get("seed")
    if fmt == "json":
        doc = {
            "version": __version__,
            "config": config,
            "seed": seed,
            "columns": list(report.header),
            "rows": [{k: _jsonable(r[k]) for k in report.header} for r in report.rows],
            "checks": [{"name": n, "passed": p} for n, p in report.checks],
            "notes": report.notes,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    buf.write(f"# batchregret {__version__}\n")
    buf.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
    buf.write(f"# seed: {seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.header)
    for r in report.rows:
        w.writerow([_fmt(r[k]) for k in report.header])
    for name, passed in report.checks:
        buf.write(f"# {'PASS' if passed else 'FAIL'}: {name}\n")
    for note in report.notes:
        buf.write(f"# {note}\n")
    return buf.getvalue()


def _spec_from(args):
    fam = Family(args.predictor)
    est = getattr(args, "initial_estimator", None) if fam.is_markov else None
    return PredictorSpec(
        fam,
        args.beta if not isinstance(args.beta, list) else args.beta[0],
        initial_estimator=est,
        initial_beta=getattr(args, "initial_beta", BETA_0),
        allow_any_beta=args.allow_any_beta,
    )


# ---------------------------------------------------------------------------
# subcommands


def run_memoryless_regret(args):
    header = MEMORYLESS_HEADER + (("wall_time",) if args.timing else ())
    report = Report(header)
    for theta in args.theta:
        for n in args.n:
            for ell in args.ell:
                for beta in args.beta:
                    spec = PredictorSpec(args.predictor, beta, allow_any_beta=args.allow_any_beta)
                    start = time.perf_counter()
                    est = regret(theta, ExperimentShape(n, ell), spec, args.method)
                    row = {
                        "theta": theta,
                        "n": n,
                        "ell": ell,
                        "beta": beta,
                        "predictor": spec.label,
                        "regret": est.value,
                        "method": est.method,
                        "std_error": est.std_error,
                    }
                    if args.timing:
                        row["wall_time"] = time.perf_counter() - start
                    report.rows.append(row)
    return report


def run_markov_regret(args):
    spec = _spec_from(args)
    report = Report(MARKOV_HEADER)
    param = MarkovParam(args.p1, args.p, args.q)
    for n in args.n:
        for ell in args.ell:
            shape = ExperimentShape(n, ell)
            if args.method == "brute-force":
                res = markov_regret_brute_force(param, shape, spec)
            else:
                res = markov_regret_mc(
                    param, shape, spec, args.replicas, args.seed, args.inner_samples
                )
            report.rows.append(
                {
                    "p1": param.p1,
                    "p": param.p,
                    "q": param.q,
                    "n": n,
                    "ell": ell,
                    "predictor": spec.label,
                    "beta": spec.beta,
                    "method": res.total.method,
                    "total": res.total.value,
                    "total_se": res.total.std_error,
                    "initial": res.initial.value,
                    "initial_se": res.initial.std_error,
                    "transition": res.transition.value,
                    "transition_se": res.transition.std_error,
                }
            )
    return report


_SWEEP_DEFAULTS = {
    1: {"n": [8, 16, 32, 64], "ell_rule": "ell=n"},
    2: {"n": None, "ell_rule": None},
    3: {"n": [256], "ell_rule": "ell=const:16"},
    5: {"n": [32, 64, 128], "ell_rule": "ell=n"},
}


def run_theorem_sweep(args):
    defaults = _SWEEP_DEFAULTS[args.theorem]
    n_values = args.n or defaults["n"]
    rule = EllRule.parse(args.ell_rule or defaults["ell_rule"] or "ell=n")
    if args.theorem == 1:
        beta = args.beta[0] if args.beta else 0.5
        rows = theorem1_residual_sweep(
            ThetaRange(args.delta), beta, n_values, rule, workers=args.workers
        )
        report = Report(SWEEP1_HEADER, rows)
        report.check(THEOREM1_BAND, residuals_decreasing(rows))
        return report
    if args.theorem == 2:
        betas = args.beta or [0.5, 0.75, 1.0]
        rows = theorem2_sweep(range(1, args.t_max + 1), args.ells, betas)
        report = Report(SWEEP2_HEADER, rows)
        bad = sum(not r["within"] for r in rows)
        report.check(f"exact boundary regret within bounds on all rows ({bad} violations)", bad == 0)
        return report
    if args.theorem == 3:
        beta = args.beta[0] if args.beta else BETA_0
        grid = default_initial_grid(args.p, args.q)
        rows = theorem3_initial_sweep(
            grid, n_values, rule, args.estimator, args.replicas, args.seed, beta, args.workers
        )
        report = Report(SWEEP3_HEADER, rows)
        if args.estimator == InitialEstimator.FIRST_COORDINATE.value:
            lo, hi = THEOREM3_BAND
            report.check(
                f"n*max R1 in [{lo}, {hi}] at the largest n", band_check(rows, "n_times_R1", lo, hi)
            )
        report.notes.append(f"decay exponent of max_R1: {decay_exponent(rows, 'max_R1')!r}")
        if args.compare_leakage:
            extra = theorem3_initial_sweep(
                grid, n_values, rule, "leakage-averaged", args.replicas, args.seed, beta,
                args.workers,
            )
            report.rows.extend(extra)
        return report
    beta = args.beta[0] if args.beta else 0.5
    spec = PredictorSpec(Family.MARKOV_TRANSITION_ONLY, beta)
    rows = theorem5_transition_sweep(
        args.delta, n_values, rule, args.replicas, args.seed, spec=spec, step=args.step,
        workers=args.workers,
    )
    report = Report(SWEEP5_HEADER, rows)
    lo, hi = THEOREM5_BAND
    report.check(
        f"n*max RT in [{lo}, {hi}] at the two largest n",
        band_check(rows, "n_times_RT", lo, hi, last=2),
    )
    report.notes.append(f"decay exponent of max_RT: {decay_exponent(rows, 'max_RT')!r}")
    if args.compare_composite:
        comp = theorem5_transition_sweep(
            args.delta, n_values, rule, args.replicas, args.seed,
            spec=PredictorSpec(Family.MARKOV_COMPOSITE, beta), step=args.step,
            inner_samples=args.inner_samples, workers=args.workers,
        )
        for r in comp:
            report.notes.append(
                f"markov-composite n={r['n']} ell={r['ell']}: max_RT={r['max_RT']!r} "
                f"n_times_RT={r['n_times_RT']!r} std_error={r['std_error']!r}"
            )
    return report


def run_predict(args):
    if args.data == "-":
        text = sys.stdin.read()
    else:
        with open(args.data) as fh:
            text = fh.read()
    ts, test = parse_training_text(text)
    spec = _spec_from(args)
    counts = extract_counts(ts)
    report = Report(PREDICT_HEADER)
    cum = 0.0
    for i, sym in enumerate(test):
        p_one = float(spec.next_prob(counts, test[:i]))
        p_sym = p_one if sym == 1 else 1.0 - p_one
        loss = -math.log(p_sym)
        cum += loss
        report.rows.append(
            {
                "position": i + 1,
                "symbol": sym,
                "prob_one": p_one,
                "prob_symbol": p_sym,
                "loss": loss,
                "cumulative_loss": cum,
            }
        )
    return report


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p, seed=True):
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--output", "-o", default="-", help="output path, '-' for stdout")
    p.add_argument("--allow-any-beta", action="store_true", help="accept beta outside [1/2, 1]")
    if seed:
        p.add_argument("--seed", type=int, default=2024)


def build_parser():
    parser = _Parser(prog="batchregret", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"batchregret {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    memoryless = [f.value for f in Family if not f.is_markov]

    p = sub.add_parser("memoryless-regret", help="exact batch regret for i.i.d. sources")
    p.add_argument("--theta", type=float, nargs="+", required=True)
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--ell", type=int, nargs="+", required=True)
    p.add_argument("--beta", type=float, nargs="+", default=[0.5])
    p.add_argument("--predictor", choices=memoryless, default=Family.ADD_BETA_BATCH.value)
    p.add_argument(
        "--method",
        choices=("auto", "exact-single-sum", "exact-double-sum", "brute-force"),
        default="auto",
    )
    p.add_argument("--timing", action="store_true", help="add a wall_time column")
    _common(p, seed=False)

    p = sub.add_parser("markov-regret", help="batch regret for first-order Markov sources")
    p.add_argument("--p1", type=float, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--ell", type=int, nargs="+", required=True)
    p.add_argument("--predictor", choices=[f.value for f in Family],
                   default=Family.MARKOV_COMPOSITE.value)
    p.add_argument("--initial-estimator", choices=[e.value for e in InitialEstimator],
                   default=InitialEstimator.FIRST_COORDINATE.value)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--initial-beta", type=float, default=BETA_0)
    p.add_argument("--method", choices=("mc", "brute-force"), default="mc")
    p.add_argument("--replicas", type=int, default=10000)
    p.add_argument("--inner-samples", type=int, default=256)
    _common(p)

    p = sub.add_parser("theorem-sweep", help="asymptotic trend / band checks")
    p.add_argument("--theorem", type=int, choices=(1, 2, 3, 5), required=True)
    p.add_argument("--n", type=int, nargs="+")
    p.add_argument("--ell-rule", help="ell=n | ell=const:<k> | ell=sqrt")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--beta", type=float, nargs="+")
    p.add_argument("--t-max", type=int, default=1000, help="with --theorem 2: t runs over 1..t_max")
    p.add_argument("--ells", type=int, nargs="+", default=[1, 8, 64], help="with --theorem 2: batch lengths")
    p.add_argument("--estimator", choices=[e.value for e in InitialEstimator],
                   default=InitialEstimator.FIRST_COORDINATE.value)
    p.add_argument("--p", type=float, default=0.3, help="with --theorem 3: p of the p1 grid")
    p.add_argument("--q", type=float, default=0.3, help="with --theorem 3: q of the p1 grid")
    p.add_argument("--step", type=float, default=0.05, help="with --theorem 5: (p, q) grid step")
    p.add_argument("--replicas", type=int)
    p.add_argument("--inner-samples", type=int, default=256)
    p.add_argument("--compare-leakage", action="store_true")
    p.add_argument("--compare-composite", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    _common(p)

    p = sub.add_parser("predict", help="per-symbol predictions on a data file")
    p.add_argument("--data", required=True, help="one batch per line; optional final 'test:' line")
    p.add_argument("--predictor", choices=[f.value for f in Family],
                   default=Family.ADD_BETA_BATCH.value)
    p.add_argument("--initial-estimator", choices=[e.value for e in InitialEstimator],
                   default=InitialEstimator.FIRST_COORDINATE.value)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--initial-beta", type=float, default=BETA_0)
    _common(p, seed=False)
    return parser


_RUNNERS = {
    "memoryless-regret": run_memoryless_regret,
    "markov-regret": run_markov_regret,
    "theorem-sweep": run_theorem_sweep,
    "predict": run_predict,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand == "theorem-sweep" and args.replicas is None:
        args.replicas = {3: 10000, 5: 1000}.get(args.theorem, 0)
    config = {k: v for k, v in sorted(vars(args).items())}
    try:
        report = _RUNNERS[args.subcommand](args)
    except MalformedDataError as exc:
        print(f"batchregret: malformed data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BudgetExceededError as exc:
        print(f"batchregret: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (DomainError, ValueError, OSError) as exc:
        print(f"batchregret: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = render(report, config, args.format)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        with open(args.output, "w") as fh:
            fh.write(text)
    for name, passed in report.checks:
        print(f"{'PASS' if passed else 'FAIL'}: {name}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
