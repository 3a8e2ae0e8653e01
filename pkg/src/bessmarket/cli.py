"""Command-line entry point.

Exit codes: 0 success, 1 usage or I/O error, 2 infeasible, 3 time limit reached with an incumbent.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .agc import DEFAULT_SEED
from .degradation import (
    CycleLifeCurve,
    DegradationError,
    PWLSegments,
    cycle_cost,
    inventory_cost,
    pwl_trajectory_cost,
    rainflow_count,
)
from .model import BatteryUnit, ModelError, _build
from .scenarios import DEFAULT_SYSTEM, ScenarioConfig, ScenarioError, compare_runs, format_comparison, run_case

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_TIME_LIMIT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bessmarket", description="Strategic battery offers in energy, reserve and regulation markets.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="solve one case study")
    # defaults are None so that a --config file can fill the gaps
    run.add_argument("--config", help="JSON file with run settings; explicit flags win")
    run.add_argument("--case", type=int, choices=(1, 2, 3, 4))
    run.add_argument("--degradation", choices=("on", "off"))
    run.add_argument("--system", help=f"bundled system name or path to a system JSON (default {DEFAULT_SYSTEM})")
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int, help=f"AGC signal seed (default {DEFAULT_SEED})")
    run.add_argument("--segments", type=int)
    run.add_argument("--life-exponent", type=float)
    run.add_argument("--solver", choices=("highs", "embedded", "external"))
    run.add_argument("--time-limit", type=float)
    run.add_argument("--gap", type=float)

    cmp = sub.add_parser("compare", help="compare two run directories")
    cmp.add_argument("a")
    cmp.add_argument("b")
    cmp.add_argument("--json", action="store_true", help="print JSON instead of a table")

    deg = sub.add_parser("degradation", help="degradation utilities")
    dsub = deg.add_subparsers(dest="action", required=True, parser_class=_Parser)
    aud = dsub.add_parser("audit", help="rainflow vs linearised cost of an SOC trajectory")
    aud.add_argument("soc_csv", help="CSV with a soc_mwh column (optionally a battery column)")
    aud.add_argument("battery_json", help="battery definition (camelCase keys)")
    aud.add_argument("--segments", type=int, default=10)
    aud.add_argument("--life-exponent", type=float, default=2.0)
    aud.add_argument("--battery-id", default=None)
    aud.add_argument("--out", default=None, help="write the CSV here instead of stdout")
    return p


RUN_KEYS = {"case": "case_id", "degradation": "degradation", "system": "system", "out": "out", "seed": "seed",
            "segments": "segments", "life_exponent": "life_exponent", "solver": "solver",
            "time_limit": "time_limit", "gap": "gap"}


def run_config(args) -> ScenarioConfig:
    """Merge CLI flags over an optional JSON config file over the defaults."""
    settings: dict = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            raise ScenarioError(f"{args.config}: expected a JSON object")
        for k, v in doc.items():
            key = k.replace("-", "_")
            key = {"caseId": "case", "lifeExponent": "life_exponent", "timeLimit": "time_limit"}.get(k, key)
            if key not in RUN_KEYS:
                raise ScenarioError(f"{args.config}: unknown setting {k!r}")
            settings[key] = v
    for key in RUN_KEYS:
        v = getattr(args, key)
        if v is not None:
            settings[key] = v
    if "case" not in settings or "out" not in settings:
        raise ScenarioError("--case and --out are required (on the command line or in --config)")
    deg = settings.get("degradation", False)
    if isinstance(deg, str):
        if deg not in ("on", "off"):
            raise ScenarioError(f"degradation must be on/off, got {deg!r}")
        deg = deg == "on"
    settings["degradation"] = bool(deg)
    return ScenarioConfig(**{RUN_KEYS[k]: v for k, v in settings.items()})


def _cmd_run(args) -> int:
    cfg = run_config(args)
    rep = run_case(cfg)
    if rep.status == "infeasible":
        print(f"infeasible: {rep.solve.message}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if not rep.solve.has_solution:
        print(f"{rep.status}: {rep.solve.message}", file=sys.stderr)
        return EXIT_USAGE if rep.status == "error" else EXIT_INFEASIBLE
    for bid, t in rep.totals.items():
        print(f"battery {bid}: " + ", ".join(f"{k}={v:.2f}" for k, v in t.items()))
    print(f"status={rep.status} final={rep.final} out={cfg.out}")
    return EXIT_TIME_LIMIT if rep.status == "time_limit" else EXIT_OK


def _cmd_compare(args) -> int:
    res = compare_runs(args.a, args.b)
    print(json.dumps(res, indent=2) if args.json else format_comparison(res))
    return EXIT_OK


def _read_soc(path: Path, battery_id: str | None) -> np.ndarray:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames is None or "soc_mwh" not in rd.fieldnames:
            raise ScenarioError(f"{path}: expected a soc_mwh column")
        vals = [float(r["soc_mwh"]) for r in rd
                if battery_id is None or "battery" not in r or r["battery"] == battery_id]
    if len(vals) < 2:
        raise ScenarioError(f"{path}: need at least two SOC samples")
    return np.array(vals)


def _cmd_audit(args) -> int:
    doc = json.loads(Path(args.battery_json).read_text())
    if "batteries" in doc:
        doc = next((b for b in doc["batteries"] if args.battery_id in (None, b.get("id"))), None)
        if doc is None:
            raise ScenarioError(f"battery {args.battery_id!r} not found")
    battery = _build(BatteryUnit, doc, "battery")
    soc = _read_soc(Path(args.soc_csv), args.battery_id or battery.id)
    curve = CycleLifeCurve.for_battery(battery, args.life_exponent)
    seg = PWLSegments.build(battery, args.segments, curve)
    lin = pwl_trajectory_cost(soc, battery, seg)
    cycles = rainflow_count(soc, battery.energy_capacity)
    exact = inventory_cost(cycles, battery, curve)
    rel = abs(lin - exact) / exact if exact > 0 else 0.0
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "depth", "weight", "cost"])
        for d, wt in cycles:
            w.writerow(["cycle", f"{d:.6f}", f"{wt:g}", f"{cycle_cost(d, wt, battery, curve):.6f}"])
        w.writerow(["rainflow_cost", "", "", f"{exact:.6f}"])
        w.writerow(["pwl_cost", "", "", f"{lin:.6f}"])
        w.writerow(["abs_error", "", "", f"{abs(lin - exact):.6f}"])
        w.writerow(["relative_error", "", "", f"{rel:.6f}"])
        w.writerow(["step_error_bound", "", "", f"{seg.max_step_error():.6f}"])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_audit(args)
    except (OSError, ScenarioError, ModelError, DegradationError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
