"""Command-line entry point: ``occtrack {foursquare,highway,track-dets,selftest}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import foursquare, selftest
from .experiment import ConfigError, dumps_report, format_highway, load_config, run_detections, run_highway
from .highway.tracker import STRATEGIES as HIGHWAY_STRATEGIES
from .motio import MotParseError

log = logging.getLogger("occtrack")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _nonneg(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occtrack", description="Multi-object tracking with occlusion models.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    fs = sub.add_parser("foursquare", help="exact posteriors of the two-by-two toy world")
    fs.add_argument("--json", action="store_true", help="print JSON instead of a table")
    fs.add_argument("--out", type=Path, help="write the JSON report here")

    hw = sub.add_parser("highway", help="simulate the highway and score trackers with GOSPA")
    hw.add_argument("--config", type=Path, help="JSON experiment config")
    hw.add_argument("--seed", type=_u64)
    hw.add_argument("--steps", type=_nonneg)
    hw.add_argument("--occlusion", choices=HIGHWAY_STRATEGIES,
                    help="run only this tracker (default: owo-expval, owo-grid and mwo)")
    hw.add_argument("--simulation", choices=("owo", "mwo"), help="simulated occlusion type")
    hw.add_argument("--out", type=Path, help="write the JSON report here")
    hw.add_argument("--readings-csv", type=Path, help="export the simulated readings as CSV")
    hw.add_argument("--trace", action="store_true", help="include per-step GOSPA in the report")
    hw.add_argument("--json", action="store_true", help="print the JSON report on stdout")

    td = sub.add_parser("track-dets", help="track boxes from a MOT detection file")
    td.add_argument("detections", nargs="?", type=Path, help="MOT detection CSV")
    td.add_argument("--config", type=Path, help="JSON experiment config")
    td.add_argument("--occlusion", choices=("none", "owo-expval", "mwo"))
    td.add_argument("--seed", type=_u64, help="accepted for symmetry; the box tracker is deterministic")
    td.add_argument("--out", type=Path, help="MOT result CSV to write")
    td.add_argument("--report", type=Path, help="write the JSON report here")
    td.add_argument("--truth", type=Path, help="ground-truth boxes (MOT format) to score against")
    td.add_argument("--json", action="store_true", help="print the JSON report on stdout")

    sub.add_parser("selftest", help="run the enumeration oracles")
    return p


def _emit(report: dict, out: Path | None, as_json: bool, text: str | None) -> None:
    payload = dumps_report(report)
    if out is not None:
        out.write_text(payload)
    if as_json or text is None:
        sys.stdout.write(payload)
    else:
        print(text)


def cmd_foursquare(args) -> int:
    report = foursquare.as_json()
    _emit(report, args.out, args.json, foursquare.format_table())
    return 0


def cmd_highway(args) -> int:
    conf = load_config(args.config) if args.config else {}
    conf.setdefault("kind", "highway")
    if conf["kind"] != "highway":
        raise ConfigError("the highway command needs a highway config")
    if args.seed is not None:
        conf["seed"] = args.seed
    if args.steps is not None:
        conf["steps"] = args.steps
    if args.occlusion:
        conf["trackers"] = [args.occlusion]
    if args.simulation:
        conf["simulation"] = args.simulation
    if args.trace:
        conf["trace"] = True
    if args.readings_csv:
        conf["readings_csv"] = str(args.readings_csv)
    report = run_highway(conf)
    _emit(report, args.out, args.json, format_highway(report))
    return 0


def cmd_track_dets(args) -> int:
    conf = load_config(args.config) if args.config else {}
    conf.setdefault("kind", "detections")
    if conf["kind"] != "detections":
        raise ConfigError("the track-dets command needs a detections config")
    if args.detections:
        conf["detections"] = str(args.detections)
    if args.occlusion:
        conf["occlusion"] = args.occlusion
    if args.out:
        conf["output"] = str(args.out)
    if args.truth:
        conf["truth"] = str(args.truth)
    if args.seed is not None:
        conf["seed"] = args.seed
    report = run_detections(conf)
    text = (f"tracked {report['frames']} frames, {report['tracks']} tracks, {report['rows']} result rows"
            + (f" -> {conf['output']}" if conf.get("output") else ""))
    _emit(report, args.report, args.json, text)
    return 0


def cmd_selftest(args) -> int:
    failed = 0
    for name, status, detail in selftest.run_all():
        print(f"{status}  {name}: {detail}")
        failed += status == "FAIL"
    return 1 if failed else 0


COMMANDS = {"foursquare": cmd_foursquare, "highway": cmd_highway, "track-dets": cmd_track_dets,
            "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MotParseError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"occtrack: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
