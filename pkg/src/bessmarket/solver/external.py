"""Exchange-file adapter for external LP/MILP solvers.

Problems are written in free-format MPS.  The solver command is a template
with ``{model}`` and ``{solution}`` placeholders, e.g.::

    highs --model_file {model} --solution_file {solution}

The solution file is parsed leniently: any line whose last two tokens are a
known column name followed by a number sets that column.  This covers the
plain ``name value`` layout and the column sections written by common solvers.
Duals are not recovered through this route.
"""

from __future__ import annotations

import math
import os
import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .lp import LinearProgram, LpResult, SolverError

SOLVER_ENV = "BESSMARKET_EXTERNAL_SOLVER"


def _col_names(lp):
    return lp.names if lp.names else [f"x{j}" for j in range(lp.num_vars)]


def write_mps(lp: LinearProgram, path, integer=(), name: str = "BESSMARKET") -> None:
    """Write ``lp`` as free MPS.  Maximization is written as OBJSENSE MAX."""
    cols = [_sanitize(n) for n in _col_names(lp)]
    m_ub, m_eq = lp.b_ub.size, lp.b_eq.size
    rows = [f"U{i}" for i in range(m_ub)] + [f"E{i}" for i in range(m_eq)]
    integer = set(int(i) for i in integer)
    A = sp.vstack([lp.A_ub, lp.A_eq]).tocsc()
    out = [f"NAME {name}"]
    if lp.sense == "max":
        out += ["OBJSENSE", "    MAX"]
    out.append("ROWS")
    out.append(" N OBJ")
    out += [f" L {r}" for r in rows[:m_ub]]
    out += [f" E {r}" for r in rows[m_ub:]]
    out.append("COLUMNS")
    in_int = False
    for j in range(lp.num_vars):
        is_int = j in integer
        if is_int and not in_int:
            out.append(" MARKER 'MARKER' 'INTORG'")
            in_int = True
        elif not is_int and in_int:
            out.append(" MARKER 'MARKER' 'INTEND'")
            in_int = False
        out.append(f" {cols[j]} OBJ {lp.c[j]!r}")
        start, end = A.indptr[j], A.indptr[j + 1]
        for k in range(start, end):
            out.append(f" {cols[j]} {rows[A.indices[k]]} {A.data[k]!r}")
    if in_int:
        out.append(" MARKER 'MARKER' 'INTEND'")
    out.append("RHS")
    b = np.concatenate([lp.b_ub, lp.b_eq])
    for i, r in enumerate(rows):
        if b[i] != 0:
            out.append(f" RHS {r} {b[i]!r}")
    out.append("BOUNDS")
    for j, cname in enumerate(cols):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo == hi:
            out.append(f" FX BND {cname} {lo!r}")
            continue
        if not math.isfinite(lo) and not math.isfinite(hi):
            out.append(f" FR BND {cname}")
            continue
        if not math.isfinite(lo):
            out.append(f" MI BND {cname}")
        elif lo != 0:
            out.append(f" LO BND {cname} {lo!r}")
        if math.isfinite(hi):
            out.append(f" UP BND {cname} {hi!r}")
    out.append("ENDATA")
    Path(path).write_text("\n".join(out) + "\n")


def read_mps(path) -> tuple[LinearProgram, list[int]]:
    """Read free MPS as produced by :func:`write_mps` (and most simple writers)."""
    section = None
    sense = "min"
    row_type: dict[str, str] = {}
    row_order: list[str] = []
    obj_row = None
    cols: dict[str, int] = {}
    entries: list[tuple[str, int, float]] = []
    cobj: dict[int, float] = {}
    rhs: dict[str, float] = {}
    bounds: dict[int, list[float]] = {}
    integer: set[int] = set()
    in_int = False
    for raw in Path(path).read_text().splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        tok = raw.split()
        if not raw[0].isspace():
            section = tok[0].upper()
            if section == "OBJSENSE" and len(tok) > 1:
                sense = "max" if tok[1].upper().startswith("MAX") else "min"
            continue
        if section == "OBJSENSE":
            sense = "max" if tok[0].upper().startswith("MAX") else "min"
        elif section == "ROWS":
            kind, rname = tok[0].upper(), tok[1]
            if kind == "N":
                obj_row = obj_row or rname
            else:
                row_type[rname] = kind
                row_order.append(rname)
        elif section == "COLUMNS":
            if len(tok) >= 3 and tok[1].strip("'").upper() == "MARKER":
                in_int = tok[2].strip("'").upper() == "INTORG"
                continue
            cname = tok[0]
            if cname not in cols:
                cols[cname] = len(cols)
                bounds[cols[cname]] = [0.0, math.inf]
            j = cols[cname]
            if in_int:
                integer.add(j)
            for rname, val in zip(tok[1::2], tok[2::2]):
                if rname == obj_row:
                    cobj[j] = float(val)
                else:
                    entries.append((rname, j, float(val)))
        elif section == "RHS":
            pairs = tok[1:] if len(tok) % 2 == 1 else tok
            for rname, val in zip(pairs[::2], pairs[1::2]):
                rhs[rname] = float(val)
        elif section == "BOUNDS":
            kind, cname = tok[0].upper(), tok[2]
            j = cols[cname]
            val = float(tok[3]) if len(tok) > 3 else 0.0
            lo_hi = bounds[j]
            if kind == "UP":
                lo_hi[1] = val
            elif kind == "LO":
                lo_hi[0] = val
            elif kind == "FX":
                lo_hi[0] = lo_hi[1] = val
            elif kind == "FR":
                lo_hi[0], lo_hi[1] = -math.inf, math.inf
            elif kind == "MI":
                lo_hi[0] = -math.inf
            elif kind == "PL":
                lo_hi[1] = math.inf
            elif kind == "BV":
                lo_hi[0], lo_hi[1] = 0.0, 1.0
                integer.add(j)
    n = len(cols)
    ub_rows = [r for r in row_order if row_type[r] in ("L", "G")]
    eq_rows = [r for r in row_order if row_type[r] == "E"]
    ub_idx = {r: i for i, r in enumerate(ub_rows)}
    eq_idx = {r: i for i, r in enumerate(eq_rows)}
    Au = sp.lil_matrix((len(ub_rows), n))
    Ae = sp.lil_matrix((len(eq_rows), n))
    for rname, j, val in entries:
        if rname in ub_idx:
            Au[ub_idx[rname], j] = -val if row_type[rname] == "G" else val
        else:
            Ae[eq_idx[rname], j] = val
    bu = np.array([-rhs.get(r, 0.0) if row_type[r] == "G" else rhs.get(r, 0.0) for r in ub_rows])
    be = np.array([rhs.get(r, 0.0) for r in eq_rows])
    c = np.zeros(n)
    for j, v in cobj.items():
        c[j] = v
    lb = np.array([bounds[j][0] for j in range(n)])
    ub = np.array([bounds[j][1] for j in range(n)])
    names = sorted(cols, key=cols.get)
    return LinearProgram(c, Au.tocsr(), bu, Ae.tocsr(), be, lb, ub, sense, names), sorted(integer)


def _sanitize(name: str) -> str:
    return "".join(ch if (ch.isalnum() or ch in "_.[],-") else "_" for ch in name)


def parse_solution(path, names) -> np.ndarray:
    idx = {_sanitize(n): j for j, n in enumerate(names)}
    x = np.full(len(names), np.nan)
    for line in Path(path).read_text().splitlines():
        tok = line.split()
        for k in range(len(tok) - 1):
            if tok[k] in idx:
                try:
                    x[idx[tok[k]]] = float(tok[k + 1])
                except ValueError:
                    pass
                break
    if np.isnan(x).any():
        missing = [names[j] for j in np.flatnonzero(np.isnan(x))[:5]]
        raise SolverError(f"solution file lacks values for {missing}")
    return x


def _run(lp, integer, command, time_limit=None):
    command = command or os.environ.get(SOLVER_ENV)
    if not command:
        raise SolverError(f"no external solver configured (pass command= or set {SOLVER_ENV})")
    with tempfile.TemporaryDirectory() as tmp:
        model = Path(tmp) / "model.mps"
        sol = Path(tmp) / "model.sol"
        write_mps(lp, model, integer)
        argv = [a.format(model=model, solution=sol) for a in shlex.split(command)]
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=time_limit)
        if proc.returncode != 0:
            raise SolverError(f"external solver failed ({proc.returncode}): {proc.stderr.strip()[:500]}")
        if not sol.exists():
            text = (proc.stdout + proc.stderr).lower()
            if "infeasible" in text:
                return None, "infeasible"
            if "unbounded" in text:
                return None, "unbounded"
            raise SolverError("external solver wrote no solution file")
        return parse_solution(sol, _col_names(lp)), "optimal"


def solve_external(lp: LinearProgram, command: str | None = None, **_) -> LpResult:
    x, status = _run(lp, (), command)
    if x is None:
        return LpResult(status)
    return LpResult("optimal", x, lp.objective(x), message="external")


def solve_external_mip(lp: LinearProgram, binaries, command: str | None = None, time_limit=None, **_):
    from .mip import MipResult

    x, status = _run(lp, binaries, command, time_limit=None if time_limit is None else time_limit + 30)
    if x is None:
        return MipResult(status, None, math.nan, math.nan, math.inf)
    obj = lp.objective(x)
    # the exchange route reports no dual bound; treat the returned point as proven
    return MipResult("optimal", x, obj, obj, 0.0, message="external")
