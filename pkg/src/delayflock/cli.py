"""Command-line entry point: ``delayflock <subcommand> ...``.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import meanfield as mf
from .errors import ConfigurationError, DomainError, FlockError
from .io import write_json, write_series_csv
from .scenarios import ScenarioConfig, builtin, builtin_names, run_scenario, sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _load(args) -> ScenarioConfig:
    if args.config and args.scenario:
        raise ConfigurationError("give either a builtin scenario name or --config, not both")
    if args.config:
        cfg = ScenarioConfig.load(args.config)
    elif args.scenario:
        cfg = builtin(args.scenario)
    else:
        raise ConfigurationError("a builtin scenario name or --config is required")
    return cfg.with_overrides(tau=args.tau, dt=args.dt, scheme=args.scheme)


def _scenario_args(p):
    p.add_argument("scenario", nargs="?", help="builtin scenario name (see `scenarios list`)")
    p.add_argument("--config", help="scenario JSON file")
    p.add_argument("--tau", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--scheme", choices=["euler", "rk4"])


def _print_json(obj):
    from .io import _jsonable

    print(json.dumps(_jsonable(obj), indent=2, sort_keys=True))


def cmd_simulate(args):
    res = run_scenario(_load(args), args.out)
    _print_json({**res.summary(), "out_dir": str(res.out_dir)})


def cmd_certify(args):
    cfg = _load(args)
    cert = diag.check_flocking_condition(cfg.build_history(), cfg.psi, cfg.diagnostics.certificate_intervals)
    _print_json(cert.to_dict())


def cmd_sweep(args):
    cfg = _load(args)
    rows = sweep(cfg, args.param, [float(v) for v in args.values.split(",") if v.strip()], args.workers)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_json(Path(args.out) / f"sweep_{cfg.name}_{args.param}.json", rows)
    _print_json(rows)


def cmd_converge(args):
    ns = [int(v) for v in args.n.split(",")]
    datum = mf.SampledDatum(tau=args.tau if args.tau is not None else 0.25, seed=args.seed)
    table = mf.convergence_study(datum, ns, args.T, dt=args.dt)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        table.write_csv(Path(args.out) / "convergence.csv", {"datum": datum.to_dict(), "T": args.T})
    _print_json({"seed": args.seed, "max_d1": {str(k): v for k, v in table.max_distance.items()}})


def cmd_stability(args):
    datum = mf.SampledDatum(tau=args.tau if args.tau is not None else 0.25, seed=args.seed)
    res = mf.stability_ratio(datum.history(args.N), datum.psi, args.eps, args.T, seed=args.seed + 1,
                             dt=args.dt, compare_every=args.compare_every)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_series_csv(out / "stability.csv", ["t", "ratio"], [res.times, res.ratio])
        write_json(out / "stability.json", {"datum": datum.to_dict(), "N": args.N, "eps": args.eps,
                                            "perturbation_seed": args.seed + 1, "T": args.T})
    _print_json({"max_ratio": float(np.max(res.ratio)), "log_slope": res.log_slope,
                 "initial_distance": res.initial_distance})


def cmd_roots(args):
    if args.tau is None:
        raise ConfigurationError("--tau is required", "tau")
    roots = diag.characteristic_roots(args.tau, args.count)
    print(f"{'mu':>24} {'sigma':>24} {'residual':>10}")
    for r in roots:
        print(f"{r.mu:24.16g} {r.sigma:24.16g} {r.residual:10.2e}")


def cmd_scenarios(args):
    if args.action != "list":
        raise ConfigurationError(f"unknown action {args.action!r}")
    for name in builtin_names():
        cfg = builtin(name)
        n, d = cfg.shape
        print(f"{name}\tN={n}\ttau={cfg.tau:g}\tpsi={cfg.psi.family.value}\tt_max={cfg.integrator.t_max:g}")


def build_parser():
    parser = argparse.ArgumentParser(prog="delayflock", description="Delayed flocking simulations and diagnostics")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate a scenario and write its outputs")
    _scenario_args(p)
    p.add_argument("--out", help="output root (default: the config's 'output')")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("certify", help="evaluate the flocking condition for a scenario")
    _scenario_args(p)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("sweep", help="classify a scenario over a range of tau, dt or beta")
    _scenario_args(p)
    p.add_argument("--param", choices=["tau", "dt", "beta"], required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("converge", help="empirical-measure convergence study")
    p.add_argument("--n", default="16,32,64,128", help="comma-separated increasing N values")
    p.add_argument("--T", type=float, default=5.0)
    p.add_argument("--tau", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("stability", help="distance ratio under a perturbed initial history")
    p.add_argument("--N", type=int, default=16)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--tau", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--compare-every", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("roots", help="characteristic roots of the two-agent delay equation")
    p.add_argument("--tau", type=float)
    p.add_argument("--count", type=int, default=5)
    p.set_defaults(func=cmd_roots)

    p = sub.add_parser("scenarios", help="builtin scenario library")
    p.add_argument("action", choices=["list"])
    p.set_defaults(func=cmd_scenarios)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FlockError, FloatingPointError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
