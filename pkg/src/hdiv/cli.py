"""Command-line interface: `hdiv estimate` and `hdiv simulate`.

Exit codes: 0 success, 2 validation error (bad flags, malformed input,
under-identified data), 3 numerical failure (solver breakdown, singular
matrices, degenerate noise). Flag values override --config JSON entries,
which override built-in defaults; the resolved configuration is echoed
into manifest.json next to the outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import fileio
from .estimator import desparsify, fit_iv_lasso, omega2_hat
from .inference import (
    confidence_interval,
    estimate_covariance_homoscedastic,
    estimate_covariance_sandwich,
    scaled_lasso_sigma,
    wald_test,
)
from .model import (
    DegenerateIdentificationError,
    HdivError,
    IVDataset,
    NumericalError,
    TuningConfig,
    ValidationError,
    validate_dataset,
)
from .regularized_matrices import (
    estimate_precision_nodewise,
    estimate_structural_inverse,
    orthonormalized_cross_moment,
    threshold_cross_moment,
)
from .simulation import (
    GENERATOR_VERSION,
    SimulationConfig,
    build_truth,
    resolve_threads,
    run_monte_carlo,
)
from .tuning import CVConfig, cv_iv_lasso_lambda, cv_nodewise_lambda

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _add_estimate_parser(sub):
    p = sub.add_parser("estimate", help="fit the desparsified IV Lasso on CSV data")
    p.add_argument("--y", required=True, help="CSV file with the outcome column")
    p.add_argument("--x", required=True, help="CSV file with the covariate matrix")
    p.add_argument("--z", required=True, help="CSV file with the instrument matrix")
    p.add_argument("--header", action="store_true", help="input files carry a header row")
    p.add_argument("--center", action="store_true",
                   help="center all columns before estimation (default off)")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="IV Lasso penalty; omit with --cv to cross-validate")
    p.add_argument("--cv", action="store_true", help="choose --lambda by 10-fold CV")
    p.add_argument("--lambda-node", dest="lam_node", type=float, default=None,
                   help="shared nodewise penalty for the precision estimate")
    p.add_argument("--cv-node", action="store_true",
                   help="choose the nodewise penalties by 10-fold CV")
    p.add_argument("--lambda-node-m", dest="lam_node_m", type=float, default=None,
                   help="shared nodewise penalty for the structural inverse "
                        "(defaults to --lambda-node unless --cv-node)")
    p.add_argument("--c0", type=float, default=None,
                   help="cross-moment thresholding constant (default 0.5)")
    p.add_argument("--exact", action="store_true",
                   help="low-dimensional exact-inverse path (requires n > q)")
    p.add_argument("--target", default="1",
                   help="comma-separated 1-based coefficient indices, or a CSV file "
                        "whose rows are target vectors a")
    p.add_argument("--level", type=float, default=0.95, help="confidence level")
    p.add_argument("--cov", choices=["sandwich", "homoscedastic"], default="sandwich")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="fold-assignment seed for CV")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON file with flag defaults")


def _add_simulate_parser(sub):
    p = sub.add_parser("simulate", help="run the Monte Carlo study")
    p.add_argument("--rho", type=float, action="append", required=True,
                   help="endogeneity level; repeat for a grid")
    p.add_argument("--alpha1", type=float, action="append", required=True,
                   help="instrument strength; repeat for a grid")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--p", type=int, default=200)
    p.add_argument("--q", type=int, default=200)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--tuning", choices=["per-rep", "once"], default="once")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON file with flag defaults")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hdiv",
        description="Desparsified IV Lasso estimation and simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_estimate_parser(sub)
    _add_simulate_parser(sub)
    return parser


def _collect_dests(parser):
    mapping = {}
    stack = [parser]
    while stack:
        p = stack.pop()
        for action in p._actions:
            if isinstance(action, argparse._SubParsersAction):
                stack.extend(action.choices.values())
                continue
            for opt in action.option_strings:
                mapping[opt.lstrip("-")] = action.dest
            mapping[action.dest] = action.dest
    return mapping


def _apply_config_file(args, parser):
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            overrides = json.load(fh)
        dests = _collect_dests(parser)
        for key, value in overrides.items():
            dest = dests.get(key, dests.get(key.replace("-", "_")))
            if dest is None or not hasattr(args, dest):
                raise ValidationError(f"unknown config key {key!r}")
            # flags given on the command line win; argparse stores non-default
            # values there already, so only fill entries still at None/False
            current = getattr(args, dest, None)
            if current in (None, False):
                setattr(args, dest, value)
    return args


def _parse_targets(selector, p):
    if os.path.exists(selector):
        mat = fileio._parse_matrix(selector, header=False)
        if mat.shape[1] != p:
            raise ValidationError(
                f"target vectors have length {mat.shape[1]}, expected p={p}"
            )
        return [(f"a{i + 1}", mat[i]) for i in range(mat.shape[0])]
    targets = []
    for token in selector.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            idx = int(token)
        except ValueError:
            raise ValidationError(
                f"--target must be 1-based indices or an existing file, got {token!r}"
            ) from None
        if not 1 <= idx <= p:
            raise ValidationError(f"target index {idx} outside 1..{p}")
        a = np.zeros(p)
        a[idx - 1] = 1.0
        targets.append((f"beta_{idx}", a))
    if not targets:
        raise ValidationError("no target specified")
    return targets


def _center(data):
    return validate_dataset(
        IVDataset(
            Y=data.Y - data.Y.mean(),
            X=data.X - data.X.mean(axis=0),
            Z=data.Z - data.Z.mean(axis=0),
        )
    )


def _cmd_estimate(args):
    started = fileio.utc_now()
    data = fileio.load_dataset_csv(args.y, args.x, args.z, header=args.header)
    if args.center:
        data = _center(data)
    c0 = 0.5 if args.c0 is None else args.c0
    threads = resolve_threads(args.threads)
    deviations = []

    if args.exact:
        from .regularized_matrices import exact_inverses

        theta, m, theta_m = exact_inverses(data.Z, data.X)
        tuning = TuningConfig(lam=args.lam or 0.0, c0=0.0)
    else:
        cv = CVConfig(folds=min(10, data.n), seed=args.seed)
        if args.cv_node:
            lam_node = cv_nodewise_lambda(
                data.Z, cv, scale_rows=True, solver_config=TuningConfig(c0=c0)
            ).chosen_lambda
        elif args.lam_node is not None:
            lam_node = args.lam_node
        else:
            raise ValidationError("provide --lambda-node or --cv-node")
        tuning = TuningConfig(lam_node=lam_node, c0=c0)
        theta = estimate_precision_nodewise(data.Z, lam_node, tuning, threads=threads)
        m = threshold_cross_moment(data.Z, data.X, c0)
        if args.lam_node_m is not None:
            lam_node_m = args.lam_node_m
        elif args.cv_node:
            # smallest certificate-feasible penalty; held-out prediction
            # error keeps improving as this penalty shrinks, so a CV
            # minimizer over-penalizes the relaxed structural inverse
            from .simulation import structural_penalty_floor

            lam_node_m = structural_penalty_floor(theta, m, tuning)
        else:
            lam_node_m = lam_node
        tuning = TuningConfig(lam_node=lam_node, lam_node_m=lam_node_m, c0=c0)
        theta_m = estimate_structural_inverse(theta, m, lam_node_m, tuning, threads=threads)
        if args.cv:
            # one-SE rule: the moment-loss curve is flat within fold noise
            # above its minimizer; take the heavy-shrinkage representative
            from .tuning import one_se_lambda

            lam = one_se_lambda(cv_iv_lasso_lambda(data, cv, tuning))
        elif args.lam is not None:
            lam = args.lam
        else:
            raise ValidationError("provide --lambda or --cv")
        tuning = TuningConfig(
            lam=lam, lam_node=lam_node, lam_node_m=lam_node_m, c0=c0
        )

    beta_tilde = fit_iv_lasso(data, theta, m, tuning.lam, tuning)
    bundle = desparsify(data, beta_tilde, theta, m, theta_m)

    sigma_hat = None
    if args.cov == "homoscedastic":
        sigma_hat, _ = scaled_lasso_sigma(data, theta, m, config=tuning)
        cov = estimate_covariance_homoscedastic(theta_m, sigma_hat**2)
    else:
        cov = estimate_covariance_sandwich(bundle)

    try:
        omega2 = omega2_hat(theta, m)
    except DegenerateIdentificationError as exc:
        omega2 = None
        deviations.append(f"omega2_hat degenerate: {exc}")

    targets = _parse_targets(args.target, data.p)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    target_diag = {}
    for name, a in targets:
        ci = confidence_interval(bundle, cov, a, args.level)
        test = wald_test(bundle, cov, a, np.zeros(data.p), 1.0 - args.level)
        rows.append(
            (name, ci.center, ci.lower, ci.upper, ci.upper - ci.lower,
             test.statistic, test.p_value)
        )
        # l1/l2 ratio of a: the admissibility condition for linear
        # functionals restricts this ratio, so report it as a diagnostic
        target_diag[name] = float(
            np.sum(np.abs(a)) / np.sqrt(float(a @ a))
        )
    fileio.write_csv(
        os.path.join(args.out, "intervals.csv"),
        ["a_id", "center", "lower", "upper", "width", "statistic", "p_value"],
        rows,
    )
    resolved = {
        "command": "estimate",
        "lambda": tuning.lam,
        "lambda_node": tuning.lam_node,
        "lambda_node_m": tuning.lam_node_m,
        "c0": tuning.c0,
        "cov": args.cov,
        "level": args.level,
        "center": bool(args.center),
        "exact": bool(args.exact),
        "target": args.target,
        "seed": args.seed,
    }
    estimates = {
        "config_digest": fileio.config_digest(resolved),
        "beta_tilde": [float(v) for v in bundle.beta_tilde],
        "beta_hat": [float(v) for v in bundle.beta_hat],
        "certificates": {
            "theta": {
                "observed": [float(v) for v in theta.cert_observed],
                "bound": [_json_float(v) for v in theta.cert_bound],
            },
            "theta_m": {
                "observed": [float(v) for v in theta_m.cert_observed],
                "bound": [_json_float(v) for v in theta_m.cert_bound],
                "observed_raw": [float(v) for v in theta_m.cert_observed_raw],
            },
        },
        "omega2_hat": omega2,
        "target_l1_l2_ratio": target_diag,
        "penalties": {
            "lambda": tuning.lam,
            "lambda_node": tuning.lam_node,
            "lambda_node_m": tuning.lam_node_m,
            "c0": tuning.c0,
        },
        "sigma_hat": sigma_hat,
        "covariance_mode": cov.mode,
    }
    fileio.write_json(os.path.join(args.out, "estimates.json"), estimates)
    manifest = fileio.build_manifest(
        "estimate", resolved, args.seed, deviations, started
    )
    fileio.write_json(os.path.join(args.out, "manifest.json"), manifest)
    return EXIT_OK


def _json_float(v):
    v = float(v)
    if np.isinf(v):
        return "inf"
    return v


def _cmd_simulate(args):
    started = fileio.utc_now()
    os.makedirs(args.out, exist_ok=True)
    threads = resolve_threads(args.threads)
    table_rows = []
    deviations = []
    if args.tuning == "once":
        deviations.append("tune-once: penalties cross-validated on replication 0 and reused")
    for rho in args.rho:
        for alpha1 in args.alpha1:
            config = SimulationConfig(
                n=args.n, p=args.p, q=args.q, rho=rho, alpha1=alpha1,
                replications=args.reps, seed=args.seed, level=args.level,
                tuning_mode=args.tuning,
            )
            truth = build_truth(config)
            summary = run_monte_carlo(truth, config, threads=threads)
            table_rows.append(
                (rho, alpha1,
                 summary.abs_mean_bias_desparsified,
                 summary.abs_mean_bias_lasso,
                 summary.coverage,
                 summary.mean_ci_width,
                 float(summary.replication_failures))
            )
            stats = summary.standardized_stats
            mth = len(stats)
            from .inference import normal_quantile

            theo = normal_quantile((np.arange(1, mth + 1) - 0.5) / mth)
            tag = f"{rho:g}_{alpha1:g}"
            fileio.write_csv(
                os.path.join(args.out, f"qq_{tag}.csv"),
                ["theoretical_quantile", "empirical_quantile"],
                list(zip(theo, stats)),
            )
            fileio.render_qq_svg(
                theo, stats,
                f"Normal Q-Q, rho={rho:g}, alpha1={alpha1:g}",
                os.path.join(args.out, f"qq_{tag}.svg"),
            )
    fileio.write_csv(
        os.path.join(args.out, "table1.csv"),
        ["rho", "alpha1", "abs_mean_bias_desparsified", "abs_mean_bias_lasso",
         "coverage", "mean_width", "failures"],
        table_rows,
    )
    resolved = {
        "command": "simulate",
        "rho": args.rho,
        "alpha1": args.alpha1,
        "n": args.n, "p": args.p, "q": args.q,
        "reps": args.reps,
        "seed": args.seed,
        "level": args.level,
        "tuning": args.tuning,
        "generator": GENERATOR_VERSION,
    }
    manifest = fileio.build_manifest(
        "simulate", resolved, args.seed, deviations, started
    )
    fileio.write_json(os.path.join(args.out, "manifest.json"), manifest)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(args, parser)
        if args.command == "estimate":
            return _cmd_estimate(args)
        return _cmd_simulate(args)
    except ValidationError as exc:
        print(f"hdiv: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"hdiv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except HdivError as exc:
        print(f"hdiv: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"hdiv: i/o error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
