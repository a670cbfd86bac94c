"""Command-line front end.

Subcommands
-----------
estimate   point estimates (ipw / aipw / aipw_cf) for one shift or a grid
band       simultaneous confidence band over a shift grid
test-null  flat-effect-curve test (p-value + band) on one dataset
truth      benchmark true values by quadrature (+ optional Monte Carlo check)
simulate   repeated-sampling study on the built-in benchmark

Artifacts default to CSV; with ``--out FILE`` a JSON sidecar ``FILE.json``
records the full configuration and seed so every run can be replayed.
``--format json`` emits a single JSON document (config included) instead.
Exit codes: 0 success, 2 malformed input data, 3 fit/numeric failure,
4 bad configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import sim
from .core import (
    ConstantShift,
    CovariateBox,
    Dataset,
    HazardShift,
    ThetaGrid,
    load_shifts,
    read_csv,
)
from .errors import ConfigError, IncrhazError, SchemaError
from .estimators import (
    EstimateResult,
    estimate_aipw,
    estimate_cf,
    estimate_ipw,
    normal_quantile,
    wald_ci,
)
from .inference import bayesian_bootstrap_se, global_null_pvalue, uniform_band
from .nuisance import (
    HAZARD_LEARNERS,
    OUTCOME_LEARNERS,
    LearnerConfig,
    fit_hazard,
    fit_outcome,
)

__all__ = ["main", "build_parser"]

_ESTIMATORS = ("ipw", "aipw", "aipw_cf")


class _Parser(argparse.ArgumentParser):
    """Routes argparse usage errors through the package's exit-code map."""

    def error(self, message):  # noqa: D102 - argparse hook
        raise ConfigError(message)


def _add_io_flags(p: _Parser) -> None:
    p.add_argument("--input", required=True, help="CSV with header y,u,delta,l1..lp")
    p.add_argument("--tau", type=float, required=True,
                   help="administrative horizon the data were collected under")


def _add_shift_flags(p: _Parser) -> None:
    p.add_argument("--theta", type=float, default=None,
                   help="constant hazard multiplier")
    p.add_argument("--theta-grid", default=None, metavar="LO:HI:COUNT",
                   help="inclusive grid of constant multipliers")
    p.add_argument("--shift-file", default=None,
                   help="JSON file with one shift object or an array of them")


def _add_learner_flags(p: _Parser) -> None:
    p.add_argument("--hazard", default="cox", choices=HAZARD_LEARNERS)
    p.add_argument("--outcome", default="linear", choices=OUTCOME_LEARNERS)
    p.add_argument("--K", type=int, default=5, help="cross-fitting folds")


def _add_run_flags(p: _Parser, default_B: int | None) -> None:
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--B", type=int, default=default_B, help="bootstrap draws")
    p.add_argument("--seed", type=int, default=None,
                   help="RNG seed (falls back to IH_SEED, then 0)")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--format", default="csv", choices=("csv", "json"))
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for replication studies")


def build_parser() -> _Parser:
    parser = _Parser(prog="incrhaz",
                     description="Effects of multiplicative shifts to a "
                                 "time-to-treatment hazard.")
    sub = parser.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("estimate", help="point estimates for shifts",
                        description="Estimate the mean outcome under each "
                                    "requested hazard shift.")
    _add_io_flags(pe)
    _add_shift_flags(pe)
    _add_learner_flags(pe)
    pe.add_argument("--estimators", default="ipw,aipw,aipw_cf",
                    help="comma-separated subset of ipw,aipw,aipw_cf")
    _add_run_flags(pe, default_B=200)

    pb = sub.add_parser("band", help="uniform confidence band over a grid",
                        description="Simultaneous confidence band for the "
                                    "effect curve over a shift grid.")
    _add_io_flags(pb)
    _add_shift_flags(pb)
    _add_learner_flags(pb)
    pb.add_argument("--estimator", default="aipw_cf", choices=("aipw_cf", "aipw"))
    pb.add_argument("--multiplier", default="rademacher",
                    choices=("rademacher", "gaussian"))
    _add_run_flags(pb, default_B=2000)

    pt = sub.add_parser("test-null", help="test a flat effect curve",
                        description="Multiplier-bootstrap test that the "
                                    "effect curve is constant over the grid "
                                    "(default grid 0.6:1.4:21).")
    _add_io_flags(pt)
    _add_shift_flags(pt)
    _add_learner_flags(pt)
    pt.add_argument("--estimator", default="aipw_cf", choices=("aipw_cf", "aipw"))
    pt.add_argument("--multiplier", default="rademacher",
                    choices=("rademacher", "gaussian"))
    _add_run_flags(pt, default_B=2000)

    pv = sub.add_parser("truth", help="benchmark true values",
                        description="True effect values on the built-in "
                                    "benchmark, by quadrature.")
    pv.add_argument("--scenario", default="all",
                    help="benchmark scenario label or 'all'")
    _add_shift_flags(pv)
    pv.add_argument("--mc-draws", type=int, default=0,
                    help="also run a Monte Carlo check with this many draws")
    pv.add_argument("--seed", type=int, default=None)
    pv.add_argument("--out", default=None)
    pv.add_argument("--format", default="csv", choices=("csv", "json"))

    ps = sub.add_parser("simulate", help="repeated-sampling study",
                        description="Replicate the benchmark study: bias, "
                                    "spread, and coverage per estimator.")
    ps.add_argument("--scenario", default="theta1",
                    help="benchmark scenario label")
    ps.add_argument("--n", type=int, default=1000)
    ps.add_argument("--R", type=int, default=300)
    ps.add_argument("--estimators", default="ipw,aipw,aipw_cf,oracle",
                    help="comma-separated subset of ipw,aipw,aipw_cf,oracle,truth")
    _add_learner_flags(ps)
    _add_run_flags(ps, default_B=200)

    return parser


def _seed_of(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("IH_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"IH_SEED must be an integer, got {env!r}") from None
    return 0


def _parse_theta_grid(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"--theta-grid must look like LO:HI:COUNT, got {text!r}")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"--theta-grid must look like LO:HI:COUNT, got {text!r}") from None
    if count < 2:
        raise ConfigError("--theta-grid needs at least 2 points")
    if not lo < hi:
        raise ConfigError("--theta-grid needs LO < HI")
    return np.linspace(lo, hi, count)


def _resolve_shifts(args, tau: float,
                    domain: CovariateBox | None) -> list[HazardShift]:
    chosen = [f for f, v in (("--theta", args.theta),
                             ("--theta-grid", args.theta_grid),
                             ("--shift-file", args.shift_file)) if v is not None]
    if len(chosen) > 1:
        raise ConfigError(f"choose one of {', '.join(chosen)}")
    if args.theta is not None:
        return [ConstantShift(args.theta, tau, domain)]
    if args.theta_grid is not None:
        vals = _parse_theta_grid(args.theta_grid)
        return list(ThetaGrid.constant(vals, tau, domain).shifts)
    if args.shift_file is not None:
        try:
            return load_shifts(args.shift_file, tau, domain)
        except OSError as exc:
            raise ConfigError(f"cannot read shift file: {exc}") from None
    raise ConfigError("a shift is required: --theta, --theta-grid, or --shift-file")


def _load_dataset(args) -> Dataset:
    try:
        return read_csv(args.input, args.tau)
    except OSError as exc:
        raise SchemaError(f"cannot read input: {exc}") from None


def _emit(rows: list[dict], fieldnames: list[str], config: dict,
          extra: dict | None, args) -> None:
    """Write the artifact per --format/--out; CSV gets a JSON sidecar."""
    payload = {"config": config}
    if extra:
        payload.update(extra)
    if args.format == "json":
        payload["results"] = rows
        text = json.dumps(payload, indent=2)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text + "\n")
        else:
            print(text)
        return
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k))
                         for k in fieldnames})
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(buf.getvalue())
        with open(args.out + ".json", "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        print(f"wrote {args.out} (+ .json sidecar)")
    else:
        sys.stdout.write(buf.getvalue())
        print(json.dumps(payload), file=sys.stderr)


def _config_echo(args, seed: int, skip=("out", "format")) -> dict:
    cfg = {k: v for k, v in vars(args).items()
           if k not in skip and not k.startswith("_") and k != "func"}
    cfg["seed"] = seed
    return cfg


def _estimate_record(res: EstimateResult, alpha: float,
                     se_override: float | None = None) -> dict:
    se = res.se if se_override is None else se_override
    if se is None:
        lo = hi = None
    elif se_override is None:
        lo, hi = wald_ci(res, alpha)
    else:
        z = normal_quantile(1.0 - alpha / 2.0)
        lo, hi = res.psi_hat - z * se, res.psi_hat + z * se
    return {
        "estimator": res.estimator,
        "theta": res.theta,
        "psi_hat": res.psi_hat,
        "se": se,
        "ci_low": lo,
        "ci_high": hi,
        "n": res.n,
        "K": res.K,
        "seed": res.seed,
    }


def _run_estimate(args) -> int:
    seed = _seed_of(args)
    ds = _load_dataset(args)
    domain = ds.covariate_box() if ds.p else None
    shifts = _resolve_shifts(args, ds.tau, domain)
    wanted = tuple(s.strip() for s in args.estimators.split(",") if s.strip())
    unknown = set(wanted) - set(_ESTIMATORS)
    if unknown or not wanted:
        raise ConfigError(f"--estimators must be a subset of {_ESTIMATORS}")
    learners = LearnerConfig(hazard=args.hazard, outcome=args.outcome,
                             K=args.K, seed=seed)

    Lam = fit_hazard(ds, args.hazard) if {"ipw", "aipw"} & set(wanted) else None
    mu = fit_outcome(ds, args.outcome) if "aipw" in wanted else None

    rows = []
    for g, shift in enumerate(shifts):
        label = shift.constant_value()
        if label is None:
            label = float(g)
        if "ipw" in wanted:
            res = estimate_ipw(ds, shift, Lam, label=label)
            se = bayesian_bootstrap_se(ds, shift, hazard=args.hazard,
                                       B=args.B, seed=seed)
            rows.append(_estimate_record(res, args.alpha, se_override=se))
        if "aipw" in wanted:
            rows.append(_estimate_record(
                estimate_aipw(ds, shift, Lam, mu, label=label), args.alpha))
        if "aipw_cf" in wanted:
            rows.append(_estimate_record(
                estimate_cf(ds, shift, learners=learners, label=label), args.alpha))

    fields = ["estimator", "theta", "psi_hat", "se", "ci_low", "ci_high",
              "n", "K", "seed"]
    _emit(rows, fields, _config_echo(args, seed), None, args)
    if args.out:
        for r in rows:
            se_txt = "-" if r["se"] is None else f"{r['se']:.6g}"
            print(f"  {r['estimator']:<8} theta={r['theta']:<10g} "
                  f"psi_hat={r['psi_hat']:.6g} se={se_txt}")
    return 0


def _band_like(args, want_pvalue: bool) -> int:
    seed = _seed_of(args)
    ds = _load_dataset(args)
    domain = ds.covariate_box() if ds.p else None
    if want_pvalue and args.theta is None and args.theta_grid is None \
            and args.shift_file is None:
        args.theta_grid = "0.6:1.4:21"
    shifts = _resolve_shifts(args, ds.tau, domain)
    if len(shifts) < 2:
        raise ConfigError("a grid of at least 2 shifts is required")
    grid = ThetaGrid.from_shifts(shifts)
    learners = LearnerConfig(hazard=args.hazard, outcome=args.outcome,
                             K=args.K, seed=seed)
    band = uniform_band(ds, grid, learners=learners, estimator=args.estimator,
                        alpha=args.alpha, B=args.B, seed=seed,
                        multiplier=args.multiplier)
    extra = {"c_alpha": band.c_alpha, "n": band.n, "estimator": band.estimator}
    if want_pvalue:
        p, q_star = global_null_pvalue(band)
        extra.update(p_value=p, q_star=q_star)
        print(f"flat-curve test: p = {p:.4g} (q* = {q_star:.6g}, "
              f"c_{1 - args.alpha:g} = {band.c_alpha:.6g})")
    rows = band.to_rows()
    _emit(rows, ["theta", "psi_hat", "se", "lower", "upper"],
          _config_echo(args, seed), extra, args)
    return 0


def _run_band(args) -> int:
    return _band_like(args, want_pvalue=False)


def _run_test_null(args) -> int:
    return _band_like(args, want_pvalue=True)


def _run_truth(args) -> int:
    seed = _seed_of(args)
    has_custom = args.theta is not None or args.theta_grid is not None \
        or args.shift_file is not None
    if has_custom:
        shifts = _resolve_shifts(args, sim.TAU, sim.covariate_domain())
        entries = []
        for g, shift in enumerate(shifts):
            label = shift.constant_value()
            entries.append(("custom", float(g) if label is None else label, shift))
    else:
        labels = sorted(sim.SCENARIOS) if args.scenario == "all" else [args.scenario]
        entries = []
        for lab in labels:
            if lab not in sim.SCENARIOS:
                raise ConfigError(f"unknown scenario '{lab}' "
                                  f"(choose from {sorted(sim.SCENARIOS)})")
            entries.append((lab, None, sim.SCENARIOS[lab].shift()))
    rows = []
    for lab, theta, shift in entries:
        row = {"scenario": lab, "theta": theta, "psi": sim.true_psi(shift)}
        if args.mc_draws:
            mc, mc_se = sim.mc_true_psi(shift, n_draws=args.mc_draws, seed=seed)
            row["mc_psi"], row["mc_se"] = mc, mc_se
        rows.append(row)
    fields = ["scenario", "theta", "psi"] + (["mc_psi", "mc_se"] if args.mc_draws else [])
    _emit(rows, fields, _config_echo(args, seed), None, args)
    return 0


def _run_simulate(args) -> int:
    seed = _seed_of(args)
    wanted = tuple(s.strip() for s in args.estimators.split(",") if s.strip())
    learners = LearnerConfig(hazard=args.hazard, outcome=args.outcome,
                             K=args.K, seed=seed)
    report = sim.replicate_study(args.scenario, n=args.n, R=args.R, seed=seed,
                                 estimators=wanted, learners=learners,
                                 ipw_B=args.B, alpha=args.alpha,
                                 threads=args.threads)
    rows = [
        {
            "estimator": r.estimator,
            "psi_true": r.psi_true,
            "bias": r.bias,
            "pct_bias": r.pct_bias,
            "sd": r.sd,
            "se": r.mean_se,
            "cp": 100.0 * r.coverage,
            "n_reps": r.n_reps,
        }
        for r in report.rows
    ]
    extra = {"scenario": report.scenario, "psi_true": report.psi_true,
             "failures": report.failures}
    _emit(rows, ["estimator", "psi_true", "bias", "pct_bias", "sd", "se",
                 "cp", "n_reps"], _config_echo(args, seed), extra, args)
    return 0


_RUNNERS = {
    "estimate": _run_estimate,
    "band": _run_band,
    "test-null": _run_test_null,
    "truth": _run_truth,
    "simulate": _run_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _RUNNERS[args.command](args)
    except IncrhazError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
