"""Command-line entry point: ``cogmac plan|solve|sim|verify``.

Results go to stdout (JSON) or to files under ``--out``; logging goes to
stderr. Failures exit nonzero after printing one JSON object on stderr::

    {"error": "ConfigError", "message": "..."}
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from .belief import BetaBelief
from .core_model import ModelError, ThetaVector
from .harness import (
    MULTI_USER_STRATEGIES,
    SINGLE_USER_STRATEGIES,
    ConfigError,
    _json_safe,
    load_config,
    run_and_emit,
)
from .multi_user import (
    centralized_loss,
    decay_constants,
    expected_total_throughput,
    nash_strategy,
    optimal_symmetric_strategy,
)
from .planning import (
    GittinsParams,
    PlanningBudgetError,
    gittins_index,
    gittins_table,
    optimal_value,
    stopping_index,
)

log = logging.getLogger("cogmac")

EXIT_USAGE = 2
EXIT_BUDGET = 3
EXIT_IO = 4
EXIT_FAILED_CHECK = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers: {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers: {text!r}") from exc


def _dump(obj, path: str | None = None) -> None:
    text = json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _beta_belief(args) -> BetaBelief:
    a, b = args.alpha, args.beta
    if len(a) != len(b):
        raise ModelError("--alpha and --beta need the same number of entries")
    return BetaBelief(a, b)


# -- subcommands ------------------------------------------------------------------


def cmd_plan(args) -> int:
    if args.kind == "dp":
        result = optimal_value(_beta_belief(args), args.horizon, args.bits, budget=args.budget)
        out = result.to_dict()
        if not args.policy:
            out.pop("policy")
        _dump(out, args.json_out)
    elif args.kind == "stopping":
        belief = _beta_belief(args)
        if belief.n_channels != 1:
            raise ModelError("stopping index takes a single channel prior")
        value = stopping_index(belief, args.horizon)
        _dump({"alpha": args.alpha[0], "beta": args.beta[0], "horizon": args.horizon, "index": value},
              args.json_out)
    else:
        params = GittinsParams(args.discount, args.truncation, args.tolerance)
        base = {"discount": params.discount, "state_truncation": params.state_truncation,
                "tolerance": params.tolerance}
        if args.table:
            _dump(gittins_table(params).to_dict(args.max_sum), args.json_out)
        else:
            states = args.state or [[1, 1]]
            entries = []
            for st in states:
                if len(st) != 2:
                    raise ModelError("--state takes a,b")
                entries.append({"a": st[0], "b": st[1], "index": gittins_index(st[0], st[1], params)})
            _dump({**base, "entries": entries}, args.json_out)
    return 0


def cmd_solve(args) -> int:
    theta = ThetaVector(args.theta)
    K, T, B = args.users, args.slots, args.bits
    tau = nash_strategy(theta)
    dc = decay_constants(theta)
    out = {
        "theta": list(theta.values),
        "users": K,
        "slots": T,
        "bits_per_slot": B,
        "tau": list(tau.p),
        "c1": dc.c1,
        "c2": dc.c2,
        "theta_lstar": dc.theta_lstar,
        "Q": dc.Q,
        "nash_total_throughput": expected_total_throughput(theta, tau, K, T, B),
        "nash_centralized_loss": centralized_loss(theta, tau, K, T, B),
    }
    if K >= 2:
        opt = optimal_symmetric_strategy(theta, K)
        out.update(
            p_star=list(opt.p),
            lambda_star=opt.lam,
            optimal_total_throughput=expected_total_throughput(theta, opt, K, T, B),
            optimal_centralized_loss=centralized_loss(theta, opt, K, T, B),
        )
    _dump(out, args.json_out)
    return 0


def cmd_sim(args) -> int:
    overrides = {
        "theta": args.theta,
        "slots": args.slots,
        "users": args.users,
        "seed": args.seed,
        "strategy": args.strategy,
        "replications": args.replications,
        "out": args.out,
        "format": args.format,
        "figures": True if args.figures else None,
        "workers": args.workers,
    }
    config = load_config(args.config, overrides)
    log.info("running %s: N=%d T=%d K=%d R=%d seed=%d", config.strategy, config.block.n_channels,
             config.block.n_slots, config.block.n_users, config.replications, config.block.seed)
    stats, files = run_and_emit(config)
    for f in files:
        log.info("wrote %s", f)
    _dump(stats.summary)
    return 0


def cmd_verify(args) -> int:
    from .verify import CHECKS, run_checks

    numbers = args.only or sorted(CHECKS)
    unknown = [n for n in numbers if n not in CHECKS]
    if unknown:
        raise UsageError(f"unknown check numbers {unknown} (known: 1-{max(CHECKS)})")
    out = Path(args.out) if args.out else None
    results = run_checks(numbers, out, report=lambda line: print(line, flush=True))
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", flush=True)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        rows = [{"number": r.number, "title": r.title, "passed": r.passed, "detail": r.detail}
                for r in results]
        (out / "verify.json").write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_FAILED_CHECK if failed else 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # logging flags work before or after the subcommand
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS,
                        help="more logging on stderr")
    common.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="only errors on stderr")
    p = _Parser(prog="cogmac", description="Cognitive medium-access strategies: planning and simulation.",
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    plan = sub.add_parser("plan", parents=[common], help="exact planning: DP value, stopping index, Gittins indices")
    plan.add_argument("kind", choices=("dp", "stopping", "gittins"))
    plan.add_argument("--alpha", type=_floats, default=[1.0], help="Beta a per channel (dp, stopping)")
    plan.add_argument("--beta", type=_floats, default=[1.0], help="Beta b per channel (dp, stopping)")
    plan.add_argument("--horizon", type=int, default=2, help="slots T (dp, stopping)")
    plan.add_argument("--bits", type=float, default=1.0, help="bits per free slot (dp)")
    plan.add_argument("--budget", type=int, default=10**7, help="max DP states (dp)")
    plan.add_argument("--policy", action="store_true", help="include the full policy table (dp)")
    plan.add_argument("--discount", type=float, default=0.9, help="discount factor (gittins)")
    plan.add_argument("--truncation", type=int, default=400, help="state truncation a+b (gittins)")
    plan.add_argument("--tolerance", type=float, default=1e-4, help="truncation tolerance (gittins)")
    plan.add_argument("--state", type=_ints, action="append", help="a,b state; repeatable (gittins)")
    plan.add_argument("--table", action="store_true", help="whole index lattice (gittins)")
    plan.add_argument("--max-sum", type=int, default=None, help="limit table to a+b <= M (gittins)")
    plan.add_argument("--json-out", help="write JSON here instead of stdout")
    plan.set_defaults(func=cmd_plan)

    solve = sub.add_parser("solve", parents=[common], help="symmetric optimum, Nash strategy and decay constants")
    solve.add_argument("--theta", type=_floats, required=True)
    solve.add_argument("--users", type=int, required=True, help="number of users K")
    solve.add_argument("--slots", type=int, default=1, help="slots T for throughput/loss totals")
    solve.add_argument("--bits", type=float, default=1.0)
    solve.add_argument("--json-out", help="write JSON here instead of stdout")
    solve.set_defaults(func=cmd_solve)

    sim = sub.add_parser("sim", parents=[common], help="run a Monte Carlo experiment")
    sim.add_argument("--config", help="INI experiment file")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--strategy", choices=SINGLE_USER_STRATEGIES + MULTI_USER_STRATEGIES)
    sim.add_argument("--theta", help="comma-separated channel availabilities")
    sim.add_argument("--slots", type=int)
    sim.add_argument("--users", type=int)
    sim.add_argument("--replications", type=int)
    sim.add_argument("--out", help="output directory")
    sim.add_argument("--format", choices=("csv", "json"))
    sim.add_argument("--figures", action="store_true", help="also write PNG figures to --out")
    sim.add_argument("--workers", type=int, help="worker processes")
    sim.set_defaults(func=cmd_sim)

    ver = sub.add_parser("verify", parents=[common], help="run the desk-scale acceptance experiments")
    ver.add_argument("--only", type=_ints, help="comma-separated check numbers")
    ver.add_argument("--out", help="directory for experiment outputs and verify.json")
    ver.set_defaults(func=cmd_verify)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    verbose = getattr(args, "verbose", 0)
    level = logging.ERROR if getattr(args, "quiet", False) else (
        logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    warnings.simplefilter("default")
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    except PlanningBudgetError as exc:
        return _fail("PlanningBudgetError", str(exc), EXIT_BUDGET)
    except (ConfigError, ModelError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_USAGE)
    except OSError as exc:
        return _fail("OSError", str(exc), EXIT_IO)


if __name__ == "__main__":
    sys.exit(main())
