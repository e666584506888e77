"""
Batch command line
    catalog    inspect, export and import the pattern catalog
    settings   list, validate, vary and select variation settings
    run        execute an experiment file and write its report
    calibrate  derive detector thresholds from an overt trace
    trace      inspect, convert and generate trace files

Exit codes: 0 success, 2 configuration error, 3 runtime or capacity error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .catalog import PatternId, catalog_stats, check_hierarchy, descriptor, export_catalog, import_catalog, load_catalog
from .config import CALIBRATION_BINS, CALIBRATION_EPSILON, CALIBRATION_ROUNDING_US, CALIBRATION_WINDOW, \
    DEFAULT_SETTINGS_FILE, setup_logging
from .countermeasures.applicability import TABLE as APPLICABILITY
from .countermeasures.detectors import calibrate, save_thresholds
from .errors import CctError, ConfigurationError
from .experiment import load_experiment, run_experiment
from .protocol import make_carrier, validate_pdu
from .schemas import get_schema
from .settings import format_settings, load_settings
from .trace import convert_trace, load_trace, save_trace
from .variation import Requirement, select_settings, settings_matrix, vary

logger = logging.getLogger(__name__)


def _out(text: str = "") -> None:
    sys.stdout.write(text + "\n")


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def _render_row(pid: PatternId) -> str:
    d = descriptor(pid)
    lines = [
        f"{d.id.value}  {d.name}" + (f" (a.k.a. {d.alias})" if d.alias else ""),
        f"  context:   {' > '.join(d.context_path)}",
        f"  semantic:  {d.semantic.value}",
        f"  syntax:    {d.syntax.value}",
        f"  noise:     {d.noise.value}",
        f"  evidence:  {d.evidence_count}" + (" (reconstructed)" if d.evidence_reconstructed else ""),
    ]
    if d.illustration:
        lines.append(f"  {d.illustration}")
    lines.extend(f"  note: {note}" for note in d.footnotes)
    return "\n".join(lines)


def cmd_catalog(args: argparse.Namespace) -> int:
    descriptors = import_catalog(Path(args.import_path).read_bytes()) if args.import_path else load_catalog()
    if args.stats:
        stats = catalog_stats(descriptors)
        _out(f"patterns: {stats.pattern_count}, techniques: {stats.total_techniques}, "
             f"top4: {stats.top4_coverage_fraction * 100:.1f}%")
        for pid, count in sorted(stats.per_pattern_counts.items(), key=lambda kv: (-kv[1], kv[0].value)):
            _out(f"  {descriptor(pid).name}: {count}")
    if args.pattern:
        _out(_render_row(PatternId.parse(args.pattern)))
    if args.applicability:
        for pid in PatternId:
            row = APPLICABILITY[pid].as_row()
            _out(f"{pid.value:<22} elimination={','.join(row['elimination']) or '-'} "
                 f"limitation={','.join(row['limitation']) or '-'} detection={','.join(row['detection'])}")
    if args.check:
        problems = check_hierarchy(descriptors)
        for problem in problems:
            _out(problem)
        if problems:
            raise ConfigurationError(f"catalog hierarchy has {len(problems)} problem(s)")
        _out(f"hierarchy ok: {len(descriptors)} entries")
    if args.export:
        path = Path(args.export)
        fmt = args.format or {".csv": "tabular", ".xlsx": "spreadsheet"}.get(path.suffix, "structured-markup")
        path.write_bytes(export_catalog(fmt, descriptors))
        logger.info("[cli][catalog] exported %d entries to %s as %s", len(descriptors), path, fmt)
    if not (args.stats or args.pattern or args.applicability or args.check or args.export):
        for d in descriptors:
            _out(f"{d.id.value:<22} {d.name:<28} {d.evidence_count:>3}")
    return 0


# ---------------------------------------------------------------------------
# settings
# ---------------------------------------------------------------------------

def cmd_settings(args: argparse.Namespace) -> int:
    catalog = load_settings(args.file or DEFAULT_SETTINGS_FILE)
    if args.action == "list":
        if args.pattern:
            pid = PatternId.parse(args.pattern)
            for s in catalog.for_pattern(pid):
                _out(f"{pid.value} {s.schema_name}: {s.entries()}")
        else:
            sys.stdout.write(format_settings(catalog))
    elif args.action == "validate":
        rows = settings_matrix(catalog)
        for pid, schema_name, bits in rows:
            _out(f"{pid.value:<22} {schema_name:<10} ok bits={bits}")
        _out(f"{len(rows)} entries round-trip")
    elif args.action == "vary":
        settings = vary(args.pattern, args.source, args.target, catalog)
        _out(json.dumps(settings.entries(), sort_keys=True, default=str))
    else:
        carrier = make_carrier(get_schema(args.schema), args.n, args.iat, args.seed)
        schema_name, settings = select_settings(args.requirement, args.pattern, catalog, carrier, args.bits)
        _out(f"{schema_name}: {json.dumps(settings.entries(), sort_keys=True, default=str)}")
    return 0


# ---------------------------------------------------------------------------
# run / calibrate
# ---------------------------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    spec_path = Path(args.spec)
    spec = load_experiment(spec_path)
    catalog = load_settings(args.settings) if args.settings else None
    report, _ = run_experiment(spec, catalog=catalog, base_dir=spec_path.parent)
    target = args.report or (spec_path.parent / spec.report if spec.report else None)
    if target:
        Path(target).write_text(report.to_json(), encoding="utf-8")
        logger.info("[cli][run] report=%s ber=%.4f", target, report.ber)
    else:
        sys.stdout.write(report.to_json())
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    trace = load_trace(args.trace)
    thresholds = calibrate(trace, bins=args.bins, epsilon=args.epsilon, rounding=args.rounding, window=args.window)
    save_thresholds(thresholds, args.out)
    _out(f"thresholds written to {args.out} from {thresholds.reference_gaps} gaps")
    return 0


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------

def cmd_trace(args: argparse.Namespace) -> int:
    if args.action == "convert":
        convert_trace(args.source, args.target)
        return 0
    if args.action == "generate":
        stream = make_carrier(get_schema(args.schema), args.n, args.iat, args.seed)
        save_trace(stream, args.out)
        return 0
    stream = load_trace(args.path)
    gaps = stream.iats()
    invalid = sum(1 for p in stream.pdus if validate_pdu(p))
    _out(f"schema: {stream.protocol.name}")
    _out(f"pdus: {len(stream)}")
    _out(f"duration_us: {int(gaps.sum()) if len(gaps) else 0}")
    if len(gaps):
        _out(f"gap_us: min={int(gaps.min())} mean={float(np.mean(gaps)):.1f} max={int(gaps.max())}")
    _out(f"invalid_pdus: {invalid}")
    _out(f"corrupted: {sum(p.corrupted for p in stream.pdus)} retransmissions: {sum(p.retransmission for p in stream.pdus)}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cct", description="Network covert channel pattern toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default from cct.env)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("catalog", help="Inspect the pattern catalog")
    p.add_argument("--stats", action="store_true", help="Technique counts and top-4 coverage")
    p.add_argument("--pattern", help="Render one pattern, e.g. P6b")
    p.add_argument("--applicability", action="store_true", help="Countermeasure table")
    p.add_argument("--check", action="store_true", help="Verify the hierarchy")
    p.add_argument("--export", help="Write the catalog to this path")
    p.add_argument("--format", choices=["structured-markup", "tabular", "spreadsheet"])
    p.add_argument("--import", dest="import_path", help="Read the catalog from an exported file")
    p.set_defaults(handler=cmd_catalog)

    p = sub.add_parser("settings", help="Manage variation settings")
    p.add_argument("--file", help=f"Settings file (default {DEFAULT_SETTINGS_FILE.name})")
    actions = p.add_subparsers(dest="action", required=True)
    a = actions.add_parser("list")
    a.add_argument("--pattern")
    actions.add_parser("validate", help="Self-test every entry")
    a = actions.add_parser("vary", help="Retarget a pattern to another schema")
    a.add_argument("pattern")
    a.add_argument("source")
    a.add_argument("target")
    a = actions.add_parser("select", help="Pick the entry that best meets a requirement")
    a.add_argument("requirement", choices=[r.value for r in Requirement])
    a.add_argument("pattern")
    a.add_argument("--schema", required=True, help="Carrier schema")
    a.add_argument("--n", type=int, default=256)
    a.add_argument("--iat", default="constant:1000")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--bits", type=int, help="Minimum capacity needed")
    p.set_defaults(handler=cmd_settings)

    p = sub.add_parser("run", help="Run an experiment file")
    p.add_argument("spec")
    p.add_argument("--report", help="Report path (overrides the spec)")
    p.add_argument("--settings", help="Settings file (overrides the spec)")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("calibrate", help="Derive detector thresholds from an overt trace")
    p.add_argument("trace")
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=CALIBRATION_BINS)
    p.add_argument("--epsilon", type=float, default=CALIBRATION_EPSILON)
    p.add_argument("--rounding", type=int, default=CALIBRATION_ROUNDING_US)
    p.add_argument("--window", type=int, default=CALIBRATION_WINDOW)
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("trace", help="Trace files")
    actions = p.add_subparsers(dest="action", required=True)
    a = actions.add_parser("inspect")
    a.add_argument("path")
    a = actions.add_parser("convert", help=".cct <-> .csv by extension")
    a.add_argument("source")
    a.add_argument("target")
    a = actions.add_parser("generate", help="Write a generated carrier")
    a.add_argument("out")
    a.add_argument("--schema", required=True)
    a.add_argument("--n", type=int, default=1000)
    a.add_argument("--iat", default="exponential:5000")
    a.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_trace)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except CctError as e:
        logger.debug("[cli] %s failed", args.command, exc_info=True)
        sys.stderr.write(f"error: {e}\n")
        return e.exit_code
    except FileNotFoundError as e:
        sys.stderr.write(f"error: file not found: {e.filename}\n")
        return ConfigurationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
