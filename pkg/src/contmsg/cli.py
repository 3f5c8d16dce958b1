"""Command line interface: ``contmsg run <scenario> [options]``.

Exit codes: 0 on success, 2 when a scenario reports an assertion failure,
3 on configuration errors.  The CONTMSG_LOG environment variable selects
the log level (error, info, or trace).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .scenarios import RUNNERS, ScenarioConfig
from .scenarios.config import ConfigError
from .scenarios.csvio import write_result

log = logging.getLogger("contmsg")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "trace": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contmsg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario")
    run.add_argument("scenario", choices=sorted(RUNNERS))
    run.add_argument("--world", type=int, default=2, metavar="N")
    run.add_argument("--transport", choices=("loopback", "tcp"), default="loopback")
    run.add_argument("--roster", metavar="FILE",
                     help="rank host:port lines for the tcp transport")
    run.add_argument("--seed", type=int, default=1, metavar="S")
    run.add_argument("--iters", type=int, default=100, metavar="I")
    run.add_argument("--variant", choices=("continuations", "activeset", "groups"),
                     default="continuations")
    run.add_argument("--K", type=int, default=32, dest="k",
                     help="active-set capacity / group poll width")
    run.add_argument("--max-poll", type=int, default=-1)
    run.add_argument("--poll-only", action="store_true")
    run.add_argument("--enqueue-complete", action="store_true")
    run.add_argument("--imbalance", type=float, default=1.0)
    run.add_argument("--csv", metavar="PATH", help="write rows here ('-' = stdout)")
    run.add_argument("--message-size", type=int, default=64)
    run.add_argument("--recv-capacity", type=int)
    run.add_argument("--senders", type=int, help="burst: flooding senders (default 4K)")
    run.add_argument("--workers", type=int, default=1,
                     help="offload: cost units executed per rank per tick")
    run.add_argument("--tasks-per-rank", type=int, default=16)
    run.add_argument("--base-cost", type=int, default=8)
    run.add_argument("--gain", type=float, default=0.1)
    run.add_argument("--emergency-threshold", type=int, default=500)
    run.add_argument("--blacklist-window", type=int, default=10)
    run.add_argument("--slow-victim", type=int)
    run.add_argument("--slow-factor", type=float, default=1.0)
    return parser


def _configure_logging():
    level = _LOG_LEVELS.get(os.environ.get("CONTMSG_LOG", "error").lower())
    if level is None:
        level = logging.ERROR
    logging.basicConfig(level=level,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _config_from_args(args) -> ScenarioConfig:
    roster = None
    if args.roster:
        with open(args.roster) as fh:
            roster = fh.read()
    return ScenarioConfig(
        scenario=args.scenario,
        world_size=args.world,
        transport=args.transport,
        roster=roster,
        seed=args.seed,
        iterations=args.iters,
        variant=args.variant,
        k=args.k,
        max_poll=args.max_poll,
        poll_only=args.poll_only,
        enqueue_complete=args.enqueue_complete,
        imbalance=args.imbalance,
        message_size=args.message_size,
        recv_capacity=args.recv_capacity,
        senders=args.senders,
        workers=args.workers,
        tasks_per_rank=args.tasks_per_rank,
        base_cost=args.base_cost,
        gain=args.gain,
        emergency_threshold=args.emergency_threshold,
        blacklist_window=args.blacklist_window,
        slow_victim=args.slow_victim,
        slow_factor=args.slow_factor,
        csv_path=args.csv,
    )


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _config_from_args(args)
        cfg.validate()
    except ConfigError as exc:
        print(f"contmsg: configuration error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"contmsg: {exc}", file=sys.stderr)
        return 3

    runner = RUNNERS[cfg.scenario]
    log.info("running %s (%s, world=%d, seed=%d)", cfg.scenario, cfg.variant,
             cfg.world_size, cfg.seed)
    result = runner(cfg)
    if cfg.csv_path:
        write_result(result, cfg.csv_path)
    print(result.summary)
    if not result.ok:
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
