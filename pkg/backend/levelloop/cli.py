"""levelloop-lab command line: run experiment suites or serve the report browser."""

import argparse
import logging
import sys
from pathlib import Path

from levelloop.config import OUTPUT_DIR, WORKERS, setup_logging
from levelloop.errors import ConfigError
from levelloop.schemas import McReport
from levelloop.services.experiments import SUITES, describe
from levelloop.services.harness import resolve_config, run_suite, suite_exit_code

logger = logging.getLogger(__name__)

COMMANDS = SUITES + ("all", "serve")
CONFIG_ERROR_EXIT = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levelloop-lab", description=__doc__)
    parser.add_argument("command", nargs="?", choices=COMMANDS, help="suite to run, or serve")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--replicas", type=int, default=None)
    parser.add_argument("--r", type=float, default=None, help="height difference in lambda units, in (0, 1)")
    parser.add_argument("--step", type=float, default=None, help="SDE capacity step")
    parser.add_argument("--config", type=Path, default=None, help="flat key=value config file")
    parser.add_argument("--out", type=Path, default=None, help=f"output directory (default {OUTPUT_DIR})")
    parser.add_argument("--workers", type=int, default=None, help=f"worker processes (default {WORKERS})")
    parser.add_argument("--list", action="store_true", help="print every experiment with its anchor and exit")
    parser.add_argument("--no-db", dest="use_db", action="store_false", help="do not record the run in the report store")
    parser.add_argument("--no-artifacts", dest="artifacts", action="store_false")
    parser.add_argument("--log-level", type=str, default=None)
    parser.add_argument("--host", type=str, default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    return parser


def print_summary(reports: list[McReport]) -> None:
    width = max((len(r.experiment_id) for r in reports), default=10)
    for report in reports:
        hard = [t for t in report.tests.values() if t.hard]
        status = "PASS" if report.passed else "FAIL"
        tag = " (approximate)" if report.approximate else ""
        failures = sum(report.failures.values())
        print(
            f"{report.experiment_id:<{width}}  {status}  {sum(t.passed for t in hard)}/{len(hard)} hard gates"
            f"  {failures} replica failures{tag}"
        )


def serve(host: str, port: int) -> int:
    import uvicorn

    uvicorn.run("levelloop.main:app", host=host, port=port)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    if args.list:
        print("\n".join(describe()))
        return 0
    if args.command is None:
        parser.error("a suite or serve is required unless --list is given")
    if args.command == "serve":
        return serve(args.host, args.port)

    try:
        config = resolve_config(
            args.config,
            seed=args.seed,
            replicas=args.replicas,
            r=args.r,
            step=args.step,
            output_dir=args.out,
            workers=args.workers,
        )
    except ConfigError as e:
        logger.error(f"invalid configuration: {e}")
        return CONFIG_ERROR_EXIT

    db = None
    if args.use_db:
        from levelloop.database import SessionLocal, init_db

        init_db()
        db = SessionLocal()
    try:
        reports = run_suite(config, args.command, db=db, artifacts=args.artifacts)
    except ConfigError as e:
        logger.error(f"invalid configuration: {e}")
        return CONFIG_ERROR_EXIT
    finally:
        if db is not None:
            db.close()

    print_summary(reports)
    print(f"reports written to {Path(config.output_dir) / 'reports.jsonl'}")
    return suite_exit_code(reports)


if __name__ == "__main__":
    sys.exit(main())
