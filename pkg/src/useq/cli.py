"""Command-line frontend.

Subcommands: ``scenarios`` (registry), ``limits`` (projection and limit
constants as JSON), ``zpath`` (limit-process simulation), ``renewal``
(threshold-crossing runs as CSV), ``verify`` (Monte-Carlo theorem checks
with a versioned JSON report).

Exit codes: 0 pass, 1 tolerance failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import BudgetError, ConfigError, DegenerateError, EnumerationError
from .harness import Tolerances, mc_clt_ustat, mc_fclt, mc_renewal_clt, mc_stopped_clt
from .kernels import parse_kernel
from .limitlaw import mc_degeneracy
from .scenarios import REGISTRY, ScenarioSpec, bind, get_scenario, list_scenarios, load_config
from .sources import parse_source, substream
from . import gausssim, renewal


def _fmt(value) -> str:
    """Serialize one number for CSV: '.' decimal separator, 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _emit_json(payload: dict, out_path: str | None):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _scenario_from_args(args) -> ScenarioSpec:
    if getattr(args, "config", None):
        return load_config(args.config)
    if getattr(args, "scenario", None):
        return get_scenario(args.scenario)
    if not getattr(args, "kernel", None) or not getattr(args, "dist", None):
        raise ConfigError("give --scenario, --config, or both --kernel and --dist")
    return ScenarioSpec(
        id="adhoc",
        kernel=args.kernel,
        dist=args.dist,
        companion=getattr(args, "companion", None),
        seed=getattr(args, "seed", 20260810) or 20260810,
    )


def cmd_scenarios(args) -> int:
    for sid in list_scenarios():
        spec = REGISTRY[sid]
        companion = f" + {spec.companion}" if spec.companion else ""
        print(f"{sid:26s} {spec.kernel}{companion} on {spec.dist} -- {spec.notes}")
    return 0


def cmd_limits(args) -> int:
    spec = _scenario_from_args(args)
    if args.method != "auto":
        spec = ScenarioSpec(**{**spec.__dict__, "projection_method": args.method,
                               "mc_budget": args.budget})
    bound = bind(spec)
    model = bound.projections
    payload = {
        "kernel": bound.kernel.name,
        "dist": bound.source.name,
        "method": model.method,
        "error_bound": model.error_bound,
        "mu": float(model.mu),
        "sigma": [[float(v) for v in row] for row in model.sigma],
        "limit_variance": float(bound.limit_law.variance),
        "degenerate": bool(bound.limit_law.degenerate),
    }
    if model.method == "monte-carlo":
        payload["degeneracy_call"] = str(mc_degeneracy(model))
    if bound.companion is not None:
        stopped = bound.stopped_law
        payload["companion"] = bound.companion.name
        payload["companion_mu"] = float(bound.companion_projections.mu)
        payload["cross_cov"] = [[float(v) for v in row] for row in bound.cross_cov]
        payload["gamma2"] = float(stopped.variance)
        payload["centering_ratio"] = float(stopped.centering_ratio)
    payload["expected_references"] = bound.expected_references()
    _emit_json(payload, args.out)
    return 0


def cmd_zpath(args) -> int:
    spec = _scenario_from_args(args)
    bound = bind(spec)
    times = (
        [float(t) for t in args.times.split(",")]
        if args.times
        else [k / 16.0 for k in range(17)]
    )
    rng = substream(args.seed, 0x5A)
    sigma = bound.projections.sigma_array()
    d = bound.kernel.arity
    if args.sampler == "path":
        draws = gausssim.simulate_limit_paths(sigma, d, times, args.draws, rng, steps=args.grid)
    else:
        draws = gausssim.simulate_limit_exact_grid(sigma, d, times, args.draws, rng)
    if args.csv:
        rows = (
            (r, t, draws[r, c])
            for r in range(draws.shape[0])
            for c, t in enumerate(times)
        )
        _write_csv(args.csv, ["draw", "t", "value"], rows)
        return 0
    centered = draws - draws.mean(axis=0)
    cov = centered.T @ centered / (draws.shape[0] - 1)
    payload = {
        "kernel": bound.kernel.name,
        "dist": bound.source.name,
        "sampler": args.sampler,
        "times": times,
        "draws": args.draws,
        "seed": args.seed,
        "empirical_covariance": cov.tolist(),
        "predicted_covariance": [
            [float(bound.limit_law.covariance(s, t)) for t in times] for s in times
        ],
    }
    _emit_json(payload, args.out)
    return 0


def cmd_renewal(args) -> int:
    spec = _scenario_from_args(args)
    bound = bind(spec)
    mean = float(bound.projections.mu)
    condition = _parse_condition(args.condition)
    if condition is None:
        batch = renewal.run_batch(
            bound.kernel,
            bound.source,
            args.x,
            args.seed,
            np.arange(args.reps),
            companion=bound.companion,
            mean=mean,
        )
    else:
        batch = renewal.condition_on_overshoot(
            bound.kernel,
            bound.source,
            args.x,
            condition,
            args.seed,
            args.reps,
            companion=bound.companion,
            mean=mean,
        )
    comp_minus = (
        batch.companion_at_nminus
        if batch.companion_at_nminus is not None
        else np.full(len(batch.n_plus), float("nan"))
    )
    rows = zip(range(len(batch.n_plus)), batch.n_minus, batch.n_plus, batch.overshoot, comp_minus)
    _write_csv(args.csv, ["rep", "n_minus", "n_plus", "overshoot", "companion_value"], rows)
    print(f"wrote {len(batch.n_plus)} outcomes to {args.csv}")
    return 0


def _parse_condition(text: str | None):
    if text is None or text == "none":
        return None
    if text == "exact-hit":
        return "exact-hit"
    if text.startswith("overshoot="):
        try:
            return ("overshoot", int(text.split("=", 1)[1]))
        except ValueError:
            raise ConfigError(f"bad overshoot target in {text!r}") from None
    raise ConfigError(f"unknown condition {text!r} (use overshoot=K or exact-hit)")


def _tolerances_for(spec: ScenarioSpec) -> Tolerances:
    tol = Tolerances()
    if "variance" in spec.tolerance_overrides:
        v = spec.tolerance_overrides["variance"]
        tol.variance_low, tol.variance_high = 1.0 - v, 1.0 + v
        tol.ratio_low, tol.ratio_high = 1.0 - v, 1.0 + v
    if "ks" in spec.tolerance_overrides:
        tol.ks_max = spec.tolerance_overrides["ks"]
    return tol


def cmd_verify(args) -> int:
    if args.config:
        spec = load_config(args.config)
    elif args.scenario:
        spec = get_scenario(args.scenario)
    else:
        raise ConfigError("verify needs a scenario id or --config file")
    overrides = {}
    for name in ("n", "x", "reps", "seed"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.grid:
        overrides["grid"] = tuple(float(t) for t in args.grid.split(","))
    if overrides:
        spec = ScenarioSpec(**{**spec.__dict__, **overrides})
    bound = bind(spec)
    bound.regenerate_expected()  # derived constants must rebuild from first principles
    threads = args.threads or int(os.environ.get("USEQ_THREADS", "1"))
    tol = _tolerances_for(spec)
    seed = spec.seed
    if args.theorem == "clt":
        report = mc_clt_ustat(bound, spec.n, spec.reps, seed, threads, tol)
    elif args.theorem == "fclt":
        report = mc_fclt(bound, spec.n, spec.grid, spec.reps, seed, threads, tol)
    elif args.theorem == "renewal":
        report = mc_renewal_clt(bound, spec.x, spec.reps, seed, threads, tol)
    elif args.theorem == "stopped":
        condition = _parse_condition(args.condition) if args.condition else (
            _parse_condition(spec.conditioning)
        )
        report = mc_stopped_clt(
            bound, spec.x, spec.reps, seed, threads, tol, conditioning=condition
        )
    else:
        raise ConfigError(f"unknown theorem {args.theorem!r}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    if args.csv and report.samples is not None:
        stat = report.samples["statistic"]
        over = report.samples.get("overshoot")
        rows = (
            (r, stat[r], over[r] if over is not None else float("nan"))
            for r in range(len(stat))
        )
        _write_csv(args.csv, ["rep", "statistic", "overshoot"], rows)
    for name, ok in report.checks.items():
        print(f"[{'PASS' if ok else 'FAIL'}] {spec.id}/{args.theorem}: {name}")
    if not args.out:
        print(report.to_json())
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="useq",
        description="Asymmetric U-statistics laboratory: limits, simulation, verification",
    )
    parser.add_argument("--version", action="version", version=f"useq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("scenarios", help="list built-in scenarios").set_defaults(fn=cmd_scenarios)

    p = sub.add_parser("limits", help="projection model and limit constants as JSON")
    _common_scenario_args(p)
    p.add_argument("--method", default="auto", choices=["auto", "exact", "order", "mc"])
    p.add_argument("--budget", type=int, default=4096, help="MC projection sample budget")
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")
    p.set_defaults(fn=cmd_limits)

    p = sub.add_parser("zpath", help="simulate the Gaussian limit process")
    _common_scenario_args(p)
    p.add_argument("--sampler", default="path", choices=["path", "exact"])
    p.add_argument("--grid", type=int, default=2048, help="path discretization steps")
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=20260810)
    p.add_argument("--times", default=None, help="comma list of output times (default dyadic)")
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None, help="dump raw draws as CSV instead of a summary")
    p.set_defaults(fn=cmd_zpath)

    p = sub.add_parser("renewal", help="threshold-crossing outcomes as CSV")
    _common_scenario_args(p)
    p.add_argument("--x", type=float, default=10_000.0)
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--condition", default=None, help="overshoot=K or exact-hit")
    p.add_argument("--seed", type=int, default=20260810)
    p.add_argument("--csv", required=True, help="output CSV path")
    p.set_defaults(fn=cmd_renewal)

    p = sub.add_parser("verify", help="Monte-Carlo verification of one limit theorem")
    p.add_argument("scenario", nargs="?", default=None)
    p.add_argument("--config", default=None, help="key=value scenario file")
    p.add_argument(
        "--theorem", default="clt", choices=["clt", "fclt", "renewal", "stopped"]
    )
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--x", type=float, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--grid", default=None, help="comma list of fclt grid times")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--condition", default=None)
    p.add_argument("--threads", type=int, default=None, help="fallback: USEQ_THREADS")
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--csv", default=None, help="dump standardized samples")
    p.set_defaults(fn=cmd_verify)
    return parser


def _common_scenario_args(p):
    p.add_argument("--scenario", default=None, help="a built-in scenario id")
    p.add_argument("--config", default=None, help="key=value scenario file")
    p.add_argument("--kernel", default=None, help="kernel spec, e.g. pattern:10@binary")
    p.add_argument("--dist", default=None, help="source spec, e.g. bernoulli:0.5@binary")
    p.add_argument("--companion", default=None, help="companion kernel spec")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.fn(args)
    except (ConfigError, DegenerateError, EnumerationError, BudgetError) as exc:
        print(f"useq: error: {exc}", file=sys.stderr)
        return 2
    return code


if __name__ == "__main__":
    sys.exit(main())
