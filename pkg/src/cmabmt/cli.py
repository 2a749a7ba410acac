"""Command-line entry point: ``cmabmt run|audit|sweep|gen``.

Exit codes: 0 success, 1 configuration error, 2 invariant-audit failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import audits
from .episodic import random_mdp, write_mdp
from .harness import ConfigError, _parse_triple, load_config, run_experiment, run_sweep
from .pmcgd import random_instance, write_instance

EXIT_OK, EXIT_CONFIG, EXIT_AUDIT = 0, 1, 2

OVERRIDABLE = ("env", "oracle", "generator", "instance_seed", "instance_file", "T",
               "replications", "seed", "delta", "output", "jobs")


def _add_overrides(p: argparse.ArgumentParser):
    p.add_argument("config", help="INI file with an [experiment] section")
    for name in OVERRIDABLE:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None)
    for name in ("audit", "warm_start", "lazy_greedy"):
        flag = name.replace("_", "-")
        p.add_argument(f"--{flag}", dest=name, action="store_const", const=True, default=None)
        p.add_argument(f"--no-{flag}", dest=name, action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmabmt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_overrides(sub.add_parser("run", help="run an experiment and write regret curves"))
    _add_overrides(sub.add_parser("audit", help="run the invariant audit suite"))
    sweep = sub.add_parser("sweep", help="repeat an experiment over parameter values")
    _add_overrides(sweep)
    sweep.add_argument("--param", required=True, help="NAME=v1,v2,... e.g. T=1000,4000,16000")

    gen = sub.add_parser("gen", help="write a random instance file")
    gen.add_argument("kind", choices=["mdp", "pmcgd"])
    gen.add_argument("spec", help="S,A,H for mdp or U,V,k for pmcgd")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("-o", "--output", required=True)
    return parser


def _overrides(args) -> dict:
    names = OVERRIDABLE + ("audit", "warm_start", "lazy_greedy")
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _cmd_run(args) -> int:
    config = load_config(args.config, _overrides(args))
    curve = run_experiment(config)
    print(f"{config.replications} replication(s), T={config.T}: mean cumulative regret "
          f"{curve.mean[-1]:.6g} +/- {curve.stderr[-1]:.3g} -> {config.output}")
    return EXIT_OK


def _cmd_audit(args) -> int:
    config = load_config(args.config, _overrides(args))
    suite = audits.rl_suite if config.env == "episodic-rl" else audits.pmc_suite
    results = suite(seed=config.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_AUDIT


def _cmd_sweep(args) -> int:
    config = load_config(args.config, _overrides(args))
    name, sep, values = args.param.partition("=")
    if not sep or not values:
        raise ConfigError(f"--param must look like NAME=v1,v2, got {args.param!r}")
    rows = run_sweep(config, name.strip(), [v.strip() for v in values.split(",")])
    for r in rows:
        print(f"{name}={r['value']}: mean cumulative regret {r['final_mean_cum']:.6g} "
              f"+/- {r['final_stderr_cum']:.3g}")
    return EXIT_OK


def _cmd_gen(args) -> int:
    a, b, c = _parse_triple(args.spec)
    try:
        if args.kind == "mdp":
            write_mdp(random_mdp(a, b, c, args.seed), args.output)
        else:
            write_instance(random_instance(a, b, c, args.seed), args.output)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(f"wrote {args.kind} instance to {args.output}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "audit": _cmd_audit, "sweep": _cmd_sweep, "gen": _cmd_gen}
    try:
        return handler[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
