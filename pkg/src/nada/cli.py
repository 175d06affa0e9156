"""``nada`` command line: scenario runs (optionally with the attack suite) and STRIDE checks."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any

from .errors import ConfigInvalid, CyclicDependency, NadaError, ParseError, SchemaError, UnknownReference
from .simnet.scenario import bundled_scenarios, exit_code, load_config, run_scenario

log = logging.getLogger("nada")


def _setup_logging() -> None:
    level = {"trace": logging.DEBUG, "info": logging.INFO}.get(os.environ.get("NADA_LOG", "").lower(),
                                                              logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def resolve_scenario(name: str) -> Path:
    """A path, or the stem of a bundled scenario."""
    path = Path(name)
    if path.exists() or path.suffix:
        return path
    bundled = bundled_scenarios()
    if name in bundled:
        return bundled[name]
    return path


# -- run --------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_config(resolve_scenario(args.scenario))
        if args.disable:
            config = config.with_disabled(set(config.disabled) | set(args.disable))
        result = run_scenario(config, args.seed)
    except ConfigInvalid as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    report = result.report
    if log.isEnabledFor(logging.DEBUG):
        for rec in result.trace:
            log.debug("%s", json.dumps(rec, sort_keys=True))

    suite = None
    if args.suite:
        from .simnet.suite import run_suite

        suite = run_suite(config.with_adversary(()), args.seed, disabled=tuple(sorted(config.disabled)),
                          workers=args.workers)
        report = dict(report, suite=suite.to_dict())

    code = exit_code(report)
    if suite is not None and suite.succeeded:
        code = 1

    _write(args.report, _dump(report))
    _write(args.trace, result.world.net.jsonl())
    if args.figures:
        from .plotting import attack_verdicts, run_figures

        run_figures(report, result.trace, Path(args.figures))
        if suite is not None:
            attack_verdicts(suite.outcomes, Path(args.figures) / "suite_verdicts.png")

    print(f"scenario {report['scenario']} seed {report['seed']}: {len(report['steps'])} steps, "
          f"{report['trace_events']} trace events, digest {report['trace_digest'][:16]}")
    for s in report["steps"]:
        extra = f" ({s['error']})" if s.get("error") else ""
        print(f"  step {s['label']}: {s['status']}{extra}")
    for name, ok in report["invariants"].items():
        print(f"  invariant {name}: {'ok' if ok else 'FAILED'}")
    for a in report["attacks"]:
        print(f"  attack {a['action']}: {a['verdict']} {a['mitigation'] or ''}".rstrip())
    if suite is not None:
        print(f"  suite: {len(suite.blocked)}/{len(suite.outcomes)} blocked")
        for o in suite.succeeded:
            print(f"  suite attack {o['action']}: Succeeded")
    print("PASS" if code == 0 else "FAIL")
    return code


# -- stride -----------------------------------------------------------------


def cmd_stride(args: argparse.Namespace) -> int:
    from . import stride

    dfd, threats, measures = stride.bundled_paths()
    try:
        model = stride.load_model(args.dfd or dfd, args.threats or threats, args.measures or measures,
                                  mode=args.mode)
        coverage = stride.coverage_of(model)
    except (ParseError, SchemaError, UnknownReference, CyclicDependency) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    out = coverage.to_dict()
    sweep = stride.deletion_sweep(model) if (args.sweep or args.figures) else None
    if sweep is not None:
        out["deletion_sweep"] = {m: [list(p) for p in pairs] for m, pairs in sweep.items()}
    _write(args.report, _dump(out))
    if args.checklist:
        _write(args.checklist, stride.gen_checklist(coverage, model.elements, model.catalog))
    if args.figures:
        from .plotting import stride_figures

        stride_figures(coverage, sweep, Path(args.figures))

    print(f"{model.mode.value} mapping: {len(model.elements)} elements, {len(coverage.pairs)} pairs, "
          f"{len(coverage.uncovered)} uncovered")
    if coverage.ineffective:
        print(f"  ineffective (missing dependency): {', '.join(coverage.ineffective)}")
    for p in coverage.uncovered:
        print(f"  uncovered: {p.element} {p.threat}")
    if sweep is not None:
        for m, pairs in sweep.items():
            print(f"  without {m}: {len(pairs)} uncovered")
    return 0 if not coverage.uncovered else 1


# -- entry ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nada", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and check invariants")
    r.add_argument("scenario", help="scenario YAML path or bundled scenario name")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--report", metavar="FILE", help="write the JSON run report here")
    r.add_argument("--trace", metavar="FILE", help="write the trace as JSONL here")
    r.add_argument("--figures", metavar="DIR", help="render PNG figures into this directory")
    r.add_argument("--suite", action="store_true", help="also run the standard attack suite")
    r.add_argument("--disable", action="append", default=[], metavar="MID",
                   help="disable a mitigation (repeatable)")
    r.add_argument("--workers", type=int, default=1, help="processes for the attack suite")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("stride", help="STRIDE coverage tools")
    ssub = s.add_subparsers(dest="stride_command", required=True)
    c = ssub.add_parser("check", help="check threat coverage of a DFD model")
    c.add_argument("--dfd", metavar="FILE", help="elements file (default: bundled model)")
    c.add_argument("--threats", metavar="FILE", help="mapping mode and overrides (default: bundled)")
    c.add_argument("--measures", metavar="FILE", help="mitigation catalog (default: bundled)")
    c.add_argument("--mode", choices=["standard", "modified"], help="override the mode in the threats file")
    c.add_argument("--checklist", metavar="FILE", help="write a markdown checklist here")
    c.add_argument("--report", metavar="FILE", help="write the JSON coverage report here")
    c.add_argument("--sweep", action="store_true", help="report the single-mitigation deletion sweep")
    c.add_argument("--figures", metavar="DIR", help="render PNG figures into this directory")
    c.set_defaults(func=cmd_stride)
    return p


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NadaError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
