"""Command-line surface: run, compare, gradcheck, list-schemes.

Exit codes: 0 success, 1 configuration/usage error, 2 divergence. The
default seed can be overridden by the NCB_SEED environment variable; an
explicit --seed beats both the environment and the config file.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .errors import ConfigError
from .gradcheck import gradcheck_passed, run_gradcheck
from .harness import (
    SCHEMES,
    export,
    load_config,
    run_episode,
)

ENV_SEED = "NCB_SEED"


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract here is usage text + exit 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="ncbench",
                     description="Benchmark neural control schemes on simulated plants.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment from a config file")
    run_p.add_argument("config", help="path to a JSON experiment config")
    run_p.add_argument("--out", default=None, metavar="PREFIX",
                       help="write PREFIX.csv and PREFIX.meta.json")
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    run_p.add_argument("--plot", action="store_true",
                       help="also render PREFIX.png (requires --out)")

    cmp_p = sub.add_parser("compare", help="run several schemes on the same plant/schedule")
    cmp_p.add_argument("config", help="path to a JSON experiment config")
    cmp_p.add_argument("--schemes", required=True,
                       help="comma-separated scheme names")
    cmp_p.add_argument("--out", default=None, metavar="PREFIX",
                       help="write PREFIX.<scheme>.csv exports")
    cmp_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    cmp_p.add_argument("--plot", action="store_true",
                       help="also render PREFIX.compare.png (requires --out)")

    gc_p = sub.add_parser("gradcheck", help="finite-difference check of the backward passes")
    gc_p.add_argument("--cases", type=int, default=24)
    gc_p.add_argument("--seed", type=int, default=0)

    sub.add_parser("list-schemes", help="enumerate the available control schemes")
    return parser


def _effective_seed(cfg, args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {env!r}") from exc
    return cfg.seed


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg = replace(cfg, seed=_effective_seed(cfg, args))
    log, metrics, artifacts = run_episode(cfg)
    print(f"scheme={cfg.scheme} ticks={len(log)} iae={metrics.iae:.6g} "
          f"final_mean_abs_e={metrics.final_window_mean_abs_e:.6g} "
          f"max_abs_u={metrics.max_abs_u:.6g} diverged={metrics.diverged}")
    if args.out:
        csv_path, meta_path = export(log, metrics, args.out, config=cfg,
                                     artifacts=artifacts)
        print(f"wrote {csv_path} and {meta_path}")
        if args.plot:
            from . import report
            print(f"wrote {report.render_episode(log, metrics, args.out + '.png')}")
    elif args.plot:
        raise ConfigError("--plot requires --out")
    return 2 if metrics.diverged else 0


def _cmd_compare(args) -> int:
    cfg = load_config(args.config)
    cfg = replace(cfg, seed=_effective_seed(cfg, args))
    names = [s.strip() for s in args.schemes.split(",") if s.strip()]
    if not names:
        raise ConfigError("--schemes needs at least one scheme name")
    for name in names:
        if name not in SCHEMES:
            raise ConfigError(f"unknown scheme {name!r}; see `ncbench list-schemes`")
    if args.plot and not args.out:
        raise ConfigError("--plot requires --out")

    results = []
    for name in names:
        sub_cfg = replace(cfg, scheme=name,
                          scheme_params=dict(cfg.scheme_overrides.get(name, {})))
        log, metrics, artifacts = run_episode(sub_cfg)
        results.append((name, log, metrics))
        if args.out:
            export(log, metrics, f"{args.out}.{name}", config=sub_cfg,
                   artifacts=artifacts)

    width = max(len(n) for n in names)
    print(f"{'scheme':<{width}}  {'iae':>12}  {'final|e|':>12}  {'max|u|':>10}  status")
    for name, _, m in results:
        status = "diverged" if m.diverged else "ok"
        print(f"{name:<{width}}  {m.iae:>12.6g}  {m.final_window_mean_abs_e:>12.6g}  "
              f"{m.max_abs_u:>10.6g}  {status}")
    if args.plot:
        from . import report
        print(f"wrote {report.render_compare(results, args.out + '.compare.png')}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradcheck(cases=args.cases, seed=args.seed)
    for r in results:
        flag = "ok" if r.passed else "FAIL"
        print(f"{flag:4} {r.description:<28} weights {r.weight_error:.3e}  "
              f"inputs {r.input_error:.3e}")
    if gradcheck_passed(results):
        print(f"gradcheck passed ({len(results)} cases)")
        return 0
    print("gradcheck FAILED")
    return 1


def _cmd_list_schemes() -> int:
    for name, info in SCHEMES.items():
        print(f"{name:<20} {info.description}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        return _cmd_list_schemes()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
