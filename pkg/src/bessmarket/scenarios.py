"""Case-study runner, report files and run comparison."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .agc import (
    DEFAULT_SEED,
    dispatch_agc,
    seed_series,
    soc_trajectory,
    synthesize_agc,
    write_trace_csv,
)
from .bilevel import MARKETS, SolveReport, UlpSpec, solve_bilevel
from .clearing import ANCILLARY, check_flow_limits
from .datasets import BUNDLED, load_bundled
from .degradation import CycleLifeCurve, PWLSegments, audit_linearization
from .model import PRODUCTS, SystemModel, load_system

CASE_MARKETS = {
    1: ("energy",),
    2: ("energy", "reserve"),
    3: ("energy", "regCap", "regMileage"),
    4: MARKETS,
}
DEFAULT_SYSTEM = "rts-area3-reduced"
REVENUE_COLUMNS = ("energy", "reserve", "regCap", "regMileage", "degradation", "profit")
TOL = 1e-6


class ScenarioError(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    case_id: int
    degradation: bool = False
    system: str = DEFAULT_SYSTEM  # bundled name or path to a system JSON
    out: str | None = None
    seed: int = DEFAULT_SEED
    segments: int = 10
    life_exponent: float = 2.0
    solver: str = "highs"
    time_limit: float = 600.0
    gap: float = 1e-4

    def __post_init__(self):
        if self.case_id not in CASE_MARKETS:
            raise ScenarioError(f"caseId must be one of 1-4, got {self.case_id}")

    @property
    def markets(self) -> tuple[str, ...]:
        return CASE_MARKETS[self.case_id]

    def spec(self) -> UlpSpec:
        return UlpSpec(markets=self.markets, degradation=self.degradation, segments=self.segments,
                       life_exponent=self.life_exponent)


def ingest_system(source: str) -> SystemModel:
    if source in BUNDLED:
        return load_bundled(source)
    return load_system(source)


def _fmt(x: float, digits: int = 6) -> str:
    s = f"{x:.{digits}f}"
    return "0." + "0" * digits if s == "-0." + "0" * digits else s


def _rounded(x: float, digits: int = 6) -> float:
    return float(_fmt(x, digits))


@dataclass
class RunReport:
    config: ScenarioConfig
    solve: SolveReport
    out: Path | None
    totals: dict[str, dict[str, float]] = field(default_factory=dict)
    audit: dict = field(default_factory=dict)
    final: bool = False
    agc_soc: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def status(self) -> str:
        return self.solve.status

    @property
    def profit(self) -> float:
        return sum(t["profit"] for t in self.totals.values())


def _revenue_rows(model: SystemModel, solve: SolveReport):
    rows = []
    for b in model.batteries:
        rb = solve.revenue[b.id]
        for t in range(model.T):
            vals = [rb.energy[t], rb.reserve[t], rb.reg_cap[t], rb.reg_mileage[t], rb.degradation_cost[t]]
            vals = [_rounded(v) for v in vals]
            profit = _rounded(sum(vals[:4]) - vals[4])
            rows.append((t, b.id, vals + [profit]))
    return rows


def run_case(config: ScenarioConfig, model: SystemModel | None = None) -> RunReport:
    model = model if model is not None else ingest_system(config.system)
    spec = config.spec()
    solve = solve_bilevel(model, spec, backend=config.solver, time_limit=config.time_limit, gap=config.gap)
    out = Path(config.out) if config.out else None
    report = RunReport(config, solve, out)
    if not solve.has_solution:
        report.audit = {"solver": {"status": solve.status, "message": solve.message, "ok": False}}
        if out:
            out.mkdir(parents=True, exist_ok=True)
            _write_summary(report, model)
        return report

    audit: dict = {}
    # SOC and day-end checks on the market-resolution trajectory
    soc_ok = True
    for bi, b in enumerate(model.batteries):
        s = solve.soc[bi]
        soc_ok &= bool(np.all(s >= b.soc_min - TOL) and np.all(s <= b.soc_max + TOL))
    audit["soc_bounds"] = {"ok": soc_ok}
    day_end = max(abs(solve.soc[bi, -1] - b.soc_initial) for bi, b in enumerate(model.batteries))
    audit["day_end"] = {"ok": bool(day_end <= TOL), "max_diff": day_end}
    flows = check_flow_limits(solve.clearing)
    audit["flow_limits"] = {"ok": not flows, "violations": flows[:10]}
    audit["complementarity"] = {"ok": bool(solve.complementarity <= TOL), "worst": solve.complementarity}
    audit["objective_decomposition"] = {"ok": bool(solve.decomposition_error <= TOL),
                                        "relative_error": solve.decomposition_error}
    audit["big_m"] = {"ok": solve.big_m.ok, "dual_factor": solve.big_m.dual_factor,
                      "escalations": solve.big_m.escalations, "max_dual_ratio": solve.big_m.max_dual_ratio,
                      "binding": solve.big_m.binding[:10]}
    rt = dict(solve.round_trip)
    rt_ok = rt.get("status") == "identical" or (rt.get("status") == "degenerate-tie"
                                                 and rt.get("nudged_schedule_diff", math.inf) <= TOL)
    audit["round_trip"] = {"ok": rt_ok, **rt}

    if config.degradation:
        trace = synthesize_agc(seed_series(model.T, model.horizon.agc_steps_per_interval, config.seed),
                               model.requirements.reg_cap_req, model.requirements.reg_mileage_req,
                               model.horizon.agc_step_hours)
        problems = trace.audit(model.requirements.reg_mileage_req, model.requirements.reg_cap_req)
        audit["agc_trace"] = {"ok": not problems, "problems": problems[:10]}
        dispatch = dispatch_agc(trace, solve.clearing)
        lin = {}
        for bi, b in enumerate(model.batteries):
            u = dispatch.unit(f"battery:{b.id}")
            base = solve.clearing.battery["energyDischarge"][bi] - solve.clearing.battery["energyCharge"][bi]
            traj = soc_trajectory(dispatch.setpoints[u], b, base, model.horizon.agc_step_hours)
            report.agc_soc[b.id] = traj.soc
            seg = PWLSegments.build(b, config.segments, CycleLifeCurve.for_battery(b, config.life_exponent))
            la = audit_linearization(traj.soc, solve.segment_out[bi], b, seg,
                                     CycleLifeCurve.for_battery(b, config.life_exponent), num_intervals=model.T)
            # delivered AGC mileage vs cleared mileage (they differ when the battery's
            # capacity share and mileage share differ)
            mileage_gap = float(np.max(np.abs(dispatch.mileage[u] - solve.clearing.battery["regMileage"][bi])))
            lin[b.id] = {"pwl_cost": la.pwl_cost, "rainflow_cost": la.rainflow_cost, "abs_error": la.abs_error,
                         "relative_error": la.rel_error, "flagged": la.flagged, "soc_violations": len(traj.violations),
                         "mileage_gap": mileage_gap}
        audit["linearization"] = lin
        report._trace = trace  # kept for the writer
    report.audit = audit
    hard = ("soc_bounds", "day_end", "flow_limits", "complementarity", "objective_decomposition", "big_m", "agc_trace")
    report.final = solve.status == "optimal" and all(audit[k]["ok"] for k in hard if k in audit)

    rows = _revenue_rows(model, solve)
    for b in model.batteries:
        tot = {c: 0.0 for c in REVENUE_COLUMNS}
        for _, bid, vals in rows:
            if bid == b.id:
                for c, v in zip(REVENUE_COLUMNS, vals):
                    tot[c] += v
        report.totals[b.id] = {c: _rounded(v) for c, v in tot.items()}
    if out:
        write_report(report, model, rows)
    return report


# --------------------------------------------------------------------------
# files


def write_report(report: RunReport, model: SystemModel, rows=None) -> None:
    out = report.out
    out.mkdir(parents=True, exist_ok=True)
    solve = report.solve
    res = solve.clearing
    rows = rows if rows is not None else _revenue_rows(model, solve)
    with open(out / "schedule.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "battery", "product", "offer_mw", "offer_price", "cleared_mw"])
        for bi, b in enumerate(model.batteries):
            o = solve.offers[b.id]
            for t in range(model.T):
                for p in PRODUCTS:
                    w.writerow([t + 1, b.id, p, _fmt(o.quantity[p][t]), _fmt(o.price[p][t]), _fmt(res.battery[p][bi, t])])
    with open(out / "soc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval_end", "battery", "soc_mwh"])
        for bi, b in enumerate(model.batteries):
            for t in range(model.T + 1):
                w.writerow([t, b.id, _fmt(solve.soc[bi, t])])
    with open(out / "prices.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "location", "product", "price"])
        for t in range(model.T):
            for ni, bus in enumerate(model.buses):
                w.writerow([t + 1, bus.id, "energy", _fmt(res.lmp[ni, t])])
            for p in ANCILLARY:
                w.writerow([t + 1, "system", p, _fmt(res.mcp[p][t])])
    with open(out / "revenue.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "battery", *REVENUE_COLUMNS])
        for t, bid, vals in rows:
            w.writerow([t + 1, bid, *[_fmt(v) for v in vals]])
    with open(out / "generators.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "generator", "energy", "reserve", "regCap", "regMileage"])
        for t in range(model.T):
            for gi, g in enumerate(model.generators):
                w.writerow([t + 1, g.id, *[_fmt(res.gen[p][gi, t]) for p in ("energy", "reserve", "regCap", "regMileage")]])
    if report.agc_soc:
        with open(out / "soc_agc.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "battery", "soc_mwh"])
            for bid, s in report.agc_soc.items():
                for k, v in enumerate(s):
                    w.writerow([k, bid, _fmt(v)])
        write_trace_csv(report._trace, out / "agc_trace.csv")
    _write_summary(report, model)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return None if not math.isfinite(float(x)) else float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _write_summary(report: RunReport, model: SystemModel) -> None:
    solve = report.solve
    cfg = asdict(report.config)
    cfg.pop("out", None)
    doc = {
        "version": __version__,
        "config": cfg,
        "system": model.name,
        "markets": list(report.config.markets),
        "status": solve.status,
        "final": report.final,
        "objective": solve.objective,
        "mipGap": solve.gap,
        "binaries": solve.num_binaries,
        "totals": report.totals,
        "audit": report.audit,
    }
    (report.out / "summary.json").write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# comparison


def load_summary(directory) -> dict:
    path = Path(directory) / "summary.json"
    if not path.exists():
        raise ScenarioError(f"{path} not found")
    return json.loads(path.read_text())


def compare_runs(a, b) -> dict:
    """Side-by-side totals of two runs of the same case (typically degradation off vs on)."""
    sa = a if isinstance(a, dict) else load_summary(a)
    sb = b if isinstance(b, dict) else load_summary(b)
    if sa["config"]["case_id"] != sb["config"]["case_id"]:
        raise ScenarioError(f"cannot compare case {sa['config']['case_id']} with case {sb['config']['case_id']}")
    if sa["config"]["degradation"] == sb["config"]["degradation"]:
        raise ScenarioError("compare needs one run with degradation off and one with it on")
    out = {"case": sa["config"]["case_id"], "batteries": {}}
    for bid in sorted(set(sa["totals"]) & set(sb["totals"])):
        ta, tb = sa["totals"][bid], sb["totals"][bid]
        rows = {c: {"a": ta[c], "b": tb[c], "delta": tb[c] - ta[c]} for c in REVENUE_COLUMNS}
        entry = {"columns": rows}
        for tag, t in (("a", ta), ("b", tb)):
            reg = t["regCap"] + t["regMileage"]
            entry[f"degradation_over_regulation_{tag}"] = t["degradation"] / reg if reg > 0 else None
        out["batteries"][bid] = entry
    out["degradation"] = {"a": sa["config"]["degradation"], "b": sb["config"]["degradation"]}
    return out


def format_comparison(cmp: dict) -> str:
    lines = [f"case {cmp['case']}: A degradation={'on' if cmp['degradation']['a'] else 'off'}, "
             f"B degradation={'on' if cmp['degradation']['b'] else 'off'}"]
    for bid, entry in cmp["batteries"].items():
        lines.append(f"battery {bid}")
        lines.append(f"  {'column':<12}{'A':>14}{'B':>14}{'B-A':>14}")
        for c, r in entry["columns"].items():
            lines.append(f"  {c:<12}{r['a']:>14.2f}{r['b']:>14.2f}{r['delta']:>14.2f}")
        for tag in ("a", "b"):
            v = entry[f"degradation_over_regulation_{tag}"]
            if v is not None:
                lines.append(f"  degradation / regulation revenue ({tag.upper()}): {100 * v:.3f}%")
    return "\n".join(lines)
