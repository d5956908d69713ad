"""Command-line front end.

Exit codes: 0 success, 1 validation failure (bad config, incompatible
density, failed acceptance gate, usage errors), 2 numerical failure
(nonconvergence, invariant breach).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .scenarios import ConfigError, ScenarioConfig, StageError, run_experiment

log = logging.getLogger("malab")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2

# stages run by each subcommand; ``experiment`` uses the config's own list
STAGES = {
    "solve": ["solve"],
    "transform": ["solve", "transform"],
    "degiorgi": ["solve", "transform", "degiorgi"],
    "moc": ["solve", "modulus"],
    "diameter": ["solve", "modulus", "metric"],
    "experiment": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment config")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, default=1, metavar="N",
                        help="worker processes for experiment lists")
    common.add_argument("--json-errors", action="store_true",
                        help="also emit errors as JSON on stderr")
    common.add_argument("-v", "--verbose", action="count", default=0)
    p = _Parser(prog="malab", description="Monge-Ampere modulus-of-continuity laboratory")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=f"run the {name} pipeline")
    v = sub.add_parser("verify", parents=[common], help="run the acceptance gate")
    v.add_argument("--no-determinism", action="store_true",
                   help="skip the rerun that checks byte-identical reports")
    return p


def load_configs(path: str) -> list[ScenarioConfig]:
    """One config object, a list of them, or {"experiments": [...]}."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if isinstance(doc, dict) and "experiments" in doc:
        doc = doc["experiments"]
    items = doc if isinstance(doc, list) else [doc]
    if not items or not all(isinstance(d, dict) for d in items):
        raise ConfigError("config must be an object or a nonempty list of objects")
    cfgs = [ScenarioConfig.from_dict(d) for d in items]
    for i, c in enumerate(cfgs):
        c.name = c.name or f"{c.family.lower()}_{i}"
    names = [c.name for c in cfgs]
    if len(set(names)) != len(names):
        raise ConfigError("experiment names must be unique")
    return cfgs


def _job(args):
    cfg, out, stages = args
    run_experiment(cfg, out, stages)
    return cfg.name


def run_jobs(cfgs, out_dir, stages, threads: int):
    """Each job writes into its own directory; order of completion does not matter."""
    jobs = []
    for c in cfgs:
        out = None
        if out_dir:
            out = out_dir if len(cfgs) == 1 else os.path.join(out_dir, c.name)
        jobs.append((c, out, stages))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for name in pool.map(_job, jobs):
                log.info("finished %s", name)
    else:
        for j in jobs:
            log.info("finished %s", _job(j))


def cmd_verify(args) -> int:
    from .acceptance import run_all

    results, text, timings = run_all(check_determinism=not args.no_determinism)
    for r in results:
        print(r.line())
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "verify_report.json"), "w") as fh:
            fh.write(text)
        with open(os.path.join(args.out, "timings.json"), "w") as fh:
            json.dump(timings, fh, indent=2, sort_keys=True)
    return EXIT_OK if passed == len(results) else EXIT_VALIDATION


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (UsageError, ValueError, KeyError, OSError)):
        return EXIT_VALIDATION
    return EXIT_NUMERICAL


def _report_error(exc: BaseException, code: int, as_json: bool):
    stage = exc.stage if isinstance(exc, StageError) else None
    cause = exc.cause if isinstance(exc, StageError) else exc
    print(f"error: {cause}", file=sys.stderr)
    if as_json:
        print(json.dumps({"error": type(cause).__name__, "message": str(cause),
                          "stage": stage, "exit_code": code}, sort_keys=True), file=sys.stderr)


def dispatch(argv=None) -> int:
    parser = build_parser()
    as_json = "--json-errors" in (sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(message)s")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        if args.command == "verify":
            return cmd_verify(args)
        if not args.config:
            raise UsageError(f"{args.command} needs --config")
        cfgs = load_configs(args.config)
        run_jobs(cfgs, args.out, STAGES[args.command], args.threads)
        return EXIT_OK
    except UsageError as e:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        _report_error(e, EXIT_VALIDATION, as_json)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001 - every failure maps to an exit code
        code = exit_code_for(e)
        _report_error(e, code, as_json)
        return code


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
