"""Command-line entry point: ``mdbd {run,bench,verify,gen}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import ConfigError, cmd_bench, cmd_gen, cmd_run, cmd_verify, load_config
from .oracle import OracleError


def _add_common(p):
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--family", choices=["simplex", "scalar2"])
    p.add_argument("--N", type=int, help="number of agents")
    p.add_argument("--n", type=int, help="per-agent dimension")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (MDBD_OUTPUT_DIR takes precedence)")
    p.add_argument("--oracle", dest="oracle", action="store_true", default=None,
                   help="solve for a reference saddle point")
    p.add_argument("--no-oracle", dest="oracle", action="store_false")
    p.add_argument("--oracle-tol", type=float)


def _add_dynamics(p):
    p.add_argument("--h", type=float, help="integration step")
    p.add_argument("--T", type=float, help="horizon")
    p.add_argument("--record-every", type=int)
    p.add_argument("--scheme", choices=["euler", "rk4"])
    p.add_argument("--algorithm", choices=["mdbd", "projection"])
    p.add_argument("--projection-mode", choices=["fast", "generic-qp"])
    p.add_argument("--edge-weight", type=float, help="cycle edge weight")


def _overrides(args):
    o = {}

    def put(section, key, value):
        if value is not None:
            o.setdefault(section, {})[key] = value

    put("family", "name", args.family)
    put("family", "N", args.N)
    put("family", "n", args.n)
    put("family", "seed", args.seed)
    put("output", "dir", args.out)
    put("oracle", "enabled", args.oracle)
    put("oracle", "tol", args.oracle_tol)
    for key, attr in (("step", "h"), ("horizon", "T"), ("record_every", "record_every"), ("scheme", "scheme")):
        put("integrator", key, getattr(args, attr, None))
    put("algorithm", "name", getattr(args, "algorithm", None))
    put("algorithm", "projection_mode", getattr(args, "projection_mode", None))
    put("graph", "weight", getattr(args, "edge_weight", None))
    return o


def build_parser():
    parser = argparse.ArgumentParser(prog="mdbd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one configuration and write artifacts")
    _add_common(run)
    _add_dynamics(run)

    bench = sub.add_parser("bench", help="timing table across dimensions")
    _add_common(bench)
    _add_dynamics(bench)
    bench.add_argument("--dims", type=int, nargs="+", default=[4, 64, 256])
    bench.add_argument("--threshold", type=float, default=1e-2)
    bench.add_argument("--limit", type=float, default=60.0, help="seconds per to-threshold cell")
    bench.add_argument("--repeats", type=int, default=5)
    bench.add_argument("--per-step-only", action="store_true")

    verify = sub.add_parser("verify", help="re-check an instance and saddle point")
    verify.add_argument("instance")
    verify.add_argument("saddle", nargs="?")
    verify.add_argument("--tol", type=float)

    gen = sub.add_parser("gen", help="write an instance (and optionally its saddle point)")
    _add_common(gen)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            ok, _ = cmd_verify(args.instance, args.saddle, args.tol)
            return 0 if ok else 1
        cfg = load_config(args.config, _overrides(args))
        if args.command == "run":
            res = cmd_run(cfg)
            s = res.summary
            print(json.dumps({k: s.get(k) for k in ("status", "eq_residual", "ineq_violation",
                                                    "x_error", "gap", "kkt_residual")}, indent=2))
            print(f"artifacts in {res.directory}")
            return res.exit_code
        if args.command == "gen":
            for path in cmd_gen(cfg, with_oracle=bool(args.oracle)):
                print(path)
            return 0
        if args.command == "bench":
            _, exps = cmd_bench(args.dims, cfg, args.threshold, args.limit,
                                to_threshold=not args.per_step_only, repeats=args.repeats)
            for k, v in exps.items():
                print(f"per-step exponent {k}: {v:.2f}")
            return 0
    except ConfigError as exc:
        parser.exit(2, f"mdbd: config error: {exc}\n")
    except OracleError as exc:
        print(f"mdbd: {exc}", file=sys.stderr)
        return 4
    return 1


if __name__ == "__main__":
    sys.exit(main())
