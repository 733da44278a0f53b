"""Experiment suites: cell definitions, optimisation, evaluation and CSV output.

Every cell is optimised on one demand path and evaluated on an independent
one; all policies of a cell share both paths.  Rows are written one cell at
a time so an interrupted suite resumes where it stopped.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from itertools import product
from typing import Iterable, Sequence

from .distributions import DemandMoments, DiscretePMF, fit_two_moment
from .errors import BracketError, InsufficientStockoutsError
from .optimizer import (
    optimize_base_stock,
    optimize_cbs,
    optimize_constant_order,
    optimize_fp3,
    optimize_pil,
)
from .policies import (
    BaseStock,
    CappedBaseStock,
    ConstantOrder,
    CostParams,
    FixedP3,
    ProjectedInventoryLevel,
)
from .simulator import SimConfig, default_warmup, optimality_ratio, simulate

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
POLICIES = ("FP3", "PIL", "BS", "CO", "CBS")

ROW_FIELDS = [
    "schema_version", "cell_hash", "suite", "cell_id", "family", "mean", "cv", "p", "h", "L",
    "policy", "evaluator", "param1", "param2", "opt_cost", "avg_cost", "gap_vs_best", "winner",
    "realized_p3", "order_mean", "order_cv", "lost_fraction", "avg_end_inventory",
    "t_ratio", "n_stockouts", "fallbacks", "p3_spread", "cost_spread",
    "opt_seed", "eval_seed", "opt_horizon", "eval_horizon", "status", "error",
]

TABLE_FIELDS = ["schema_version", "cell_hash", "c_D", "p", "L", "P3*", "avg_cost", "order_cv",
                "seed", "opt_horizon", "eval_horizon", "status", "error"]


@dataclass(frozen=True)
class Settings:
    """Run lengths are post-warm-up periods."""

    seed: int = 20240601
    opt_horizon: int = 10_000
    eval_horizon: int = 1_000_000
    pil_tol: float = 1e-3
    evaluator: str = "auto"
    policies: tuple = POLICIES
    workers: int = 1


@dataclass(frozen=True)
class Cell:
    suite: str
    demand: str          # poisson | geometric | continuous
    mean: float
    cv: float
    p: float
    h: float
    L: int
    families: tuple = ("auto",)

    @property
    def cell_id(self) -> str:
        fam = "+".join(self.families)
        return f"{self.suite}:{self.demand}:{fam}:m{self.mean:g}:cv{self.cv:g}:p{self.p:g}:h{self.h:g}:L{self.L}"


def fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return f"{x:.10g}"
    return str(x)


def derive_seed(global_seed: int, *parts) -> int:
    text = "|".join(str(p) for p in (global_seed,) + parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def cell_hash(cell: Cell, settings: Settings) -> str:
    payload = json.dumps([SCHEMA_VERSION, asdict(cell), asdict(settings) | {"workers": 0}],
                         sort_keys=True, default=list)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def zipkin_cells(lead_times: Sequence[int] = (1, 2, 3, 4), suite: str = "zipkin") -> list:
    return [Cell(suite, dem, 5.0, math.nan, p, 1.0, L)
            for dem, p, L in product(("poisson", "geometric"), (4, 9, 19, 39), lead_times)]


def xin_cells() -> list:
    return zipkin_cells((6, 8, 10), suite="xin")


GRID_FULL = dict(p=(4, 9, 19, 49, 99, 199), L=(1, 2, 4, 8, 16, 32, 64),
                 cv=(0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0))
GRID_DESK = dict(p=(4, 19, 199), L=(1, 4, 16, 64), cv=(0.25, 1.0, 1.5, 2.0))


def grid_cells(scale: str = "desk", mean: float = 10.0) -> list:
    spec = {"desk": GRID_DESK, "full": GRID_FULL}[scale]
    return [Cell("grid", "continuous", mean, cv, p, 1.0, L)
            for cv, p, L in product(spec["cv"], spec["p"], spec["L"])]


SENSITIVITY = dict(cv=(0.5, 1.5, 2.0), p=(4, 19), L=(2, 8))


def sensitivity_families(cv: float) -> tuple:
    return ("SE", "ME") if cv < 1 else ("ME1K", "HY")


def sensitivity_cells(mean: float = 10.0) -> list:
    return [Cell("sensitivity", "continuous", mean, cv, p, 1.0, L, sensitivity_families(cv))
            for cv, p, L in product(SENSITIVITY["cv"], SENSITIVITY["p"], SENSITIVITY["L"])]


def suite_cells(name: str, scale: str = "desk") -> list:
    if name == "zipkin":
        return zipkin_cells()
    if name == "xin":
        return xin_cells()
    if name == "grid":
        return grid_cells(scale)
    if name == "sensitivity":
        return sensitivity_cells()
    raise ValueError(f"unknown suite {name!r}")


# ---------------------------------------------------------------------------
# one cell
# ---------------------------------------------------------------------------

def make_demand(cell: Cell, family: str):
    if cell.demand == "poisson":
        return DiscretePMF.poisson(cell.mean)
    if cell.demand == "geometric":
        return DiscretePMF.geometric(cell.mean)
    hint = None if family == "auto" else family
    return fit_two_moment(DemandMoments(cell.mean, cell.cv), hint)


def _configs(cell: Cell, d, settings: Settings, family: str):
    warm = default_warmup(cell.L)
    cost = CostParams(cell.h, cell.p, cell.L)
    opt_seed = derive_seed(settings.seed, cell.cell_id, family, "opt")
    eval_seed = derive_seed(settings.seed, cell.cell_id, family, "eval")
    opt = SimConfig(cost, warm + settings.opt_horizon, opt_seed, d, warmup=warm)
    ev = SimConfig(cost, warm + settings.eval_horizon, eval_seed, d, warmup=warm)
    return opt, ev


def _evaluator(d, settings: Settings) -> str:
    if d.discrete:
        return "exact_discrete"
    return "backward" if settings.evaluator == "auto" else settings.evaluator


def optimise_policy(name: str, opt: SimConfig, settings: Settings, evaluator: str):
    """Returns (policy, search stats, note)."""
    note = ""
    if name == "BS":
        s, st = optimize_base_stock(opt)
        return BaseStock(s), st, note
    if name == "CO":
        q, st = optimize_constant_order(opt)
        return ConstantOrder(q), st, note
    if name == "CBS":
        s, qmax, st = optimize_cbs(opt)
        return CappedBaseStock(s, qmax), st, note
    if name == "FP3":
        if opt.demand.discrete:
            t, st = optimize_fp3(opt, mode="cost_search", evaluator=evaluator)
        else:
            try:
                t, st = optimize_fp3(opt, mode="optimality_eq", evaluator=evaluator)
            except BracketError as exc:
                note = f"optimality bracket failed ({exc}); cost search used"
                t, st = optimize_fp3(opt, mode="cost_search", evaluator=evaluator)
        return FixedP3(t, evaluator), st, note
    if name == "PIL":
        x, st = optimize_pil(opt, evaluator=evaluator, tol=settings.pil_tol)
        return ProjectedInventoryLevel(x, evaluator), st, note
    raise ValueError(f"unknown policy {name!r}")


def _params(pol) -> tuple:
    if isinstance(pol, BaseStock):
        return pol.S, math.nan
    if isinstance(pol, ConstantOrder):
        return pol.Q, math.nan
    if isinstance(pol, CappedBaseStock):
        return pol.S, pol.Qmax
    return pol.target, math.nan


def _ratio(st) -> float:
    try:
        return optimality_ratio(st)
    except InsufficientStockoutsError:
        return math.nan


def run_cell(cell: Cell, settings: Settings) -> list:
    """Optimise and evaluate every policy of a cell; returns CSV rows."""
    h = cell_hash(cell, settings)
    rows = []
    for family in cell.families:
        base = dict(schema_version=SCHEMA_VERSION, cell_hash=h, suite=cell.suite,
                    cell_id=cell.cell_id, mean=cell.mean, cv=cell.cv, p=cell.p, h=cell.h, L=cell.L)
        try:
            d = make_demand(cell, family)
            base["family"] = type(d).__name__ if family == "auto" else family
            if math.isnan(cell.cv):
                base["cv"] = d.cv
            opt, ev = _configs(cell, d, settings, family)
            evaluator = _evaluator(d, settings)
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            rows.append(base | dict(family=family, status="error", error=repr(exc)))
            continue
        for name in settings.policies:
            row = dict(base, policy=name, opt_seed=opt.seed, eval_seed=ev.seed,
                       opt_horizon=settings.opt_horizon, eval_horizon=settings.eval_horizon)
            try:
                pol, search, note = optimise_policy(name, opt, settings, evaluator)
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", RuntimeWarning)
                    st = simulate(pol, ev)
                if caught:
                    note = "; ".join(filter(None, [note, "evaluation run drifted"]))
                a, b = _params(pol)
                row.update(
                    evaluator=evaluator if name in ("FP3", "PIL") else "",
                    param1=a, param2=b, opt_cost=search.avg_cost, avg_cost=st.avg_cost,
                    realized_p3=st.realized_p3, order_mean=st.order_mean, order_cv=st.order_cv,
                    lost_fraction=st.lost_fraction, avg_end_inventory=st.avg_end_inventory,
                    t_ratio=_ratio(st), n_stockouts=st.n_stockouts, fallbacks=st.fallbacks,
                    status="ok", error=note,
                )
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                log.debug("cell %s policy %s failed:\n%s", cell.cell_id, name, traceback.format_exc())
                row.update(status="error", error=repr(exc))
            rows.append(row)
    _annotate(rows)
    return rows


def _annotate(rows: list):
    """Winner and gap per family block; P3 and cost spread across families."""
    ok = [r for r in rows if r.get("status") == "ok"]
    for fam in {r["family"] for r in ok}:
        block = [r for r in ok if r["family"] == fam]
        best = min(block, key=lambda r: r["avg_cost"])
        for r in block:
            r["gap_vs_best"] = r["avg_cost"] / best["avg_cost"] - 1.0
            r["winner"] = best["policy"]
    for pol in {r["policy"] for r in ok}:
        same = [r for r in ok if r["policy"] == pol]
        if len(same) > 1:
            costs = [r["avg_cost"] for r in same]
            spread_c = (max(costs) - min(costs)) / min(costs)
            spread_p = max(r["realized_p3"] for r in same) - min(r["realized_p3"] for r in same)
            if pol == "FP3":
                targets = [r["param1"] for r in same]
                spread_p = max(targets) - min(targets)
            for r in same:
                r["cost_spread"] = spread_c
                r["p3_spread"] = spread_p


def run_table_cell(cell: Cell, settings: Settings) -> list:
    """One lookup-table row: optimal FP3 target for (cv, p, L)."""
    h = cell_hash(cell, settings)
    row = dict(schema_version=SCHEMA_VERSION, cell_hash=h, c_D=cell.cv, p=cell.p, L=cell.L,
               opt_horizon=settings.opt_horizon, eval_horizon=settings.eval_horizon)
    try:
        family = cell.families[0]
        d = make_demand(cell, family)
        opt, ev = _configs(cell, d, settings, family)
        pol, _, note = optimise_policy("FP3", opt, settings, _evaluator(d, settings))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            st = simulate(pol, ev)
        row.update({"P3*": pol.target, "avg_cost": st.avg_cost, "order_cv": st.order_cv,
                    "seed": opt.seed, "status": "ok", "error": note})
    except Exception as exc:  # noqa: BLE001 - recorded per cell
        row.update(status="error", error=repr(exc))
    return [row]


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------

def _read_done(path: str, fields: list) -> tuple[list, set]:
    """Rows of fully successful cells already in ``path``."""
    if not os.path.exists(path):
        return [], set()
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0].keys()) != fields:
        raise ValueError(f"{path} has a different schema; move it away first")
    bad = {r["cell_hash"] for r in rows if r["status"] != "ok"}
    keep = [r for r in rows if r["cell_hash"] not in bad]
    return keep, {r["cell_hash"] for r in keep}


def _write_rows(fh, writer, rows):
    for r in rows:
        writer.writerow({k: fmt(r.get(k, "")) for k in writer.fieldnames})
    fh.flush()


def _call(args):
    fn, cell, settings = args
    return fn(cell, settings)


def run_cells(cells: Iterable[Cell], settings: Settings, out: str, *, kind: str = "suite",
              name: str = "", scale: str = "") -> dict:
    """Run cells not yet in ``out`` and write a JSON manifest next to it.

    Returns a summary with counts of done, skipped and failed cells.
    """
    cells = list(cells)
    fields = TABLE_FIELDS if kind == "table" else ROW_FIELDS
    fn = run_table_cell if kind == "table" else run_cell
    kept, done = _read_done(out, fields)
    todo = [c for c in cells if cell_hash(c, settings) not in done]
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    errors = 0
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for r in kept:
            writer.writerow(r)
        fh.flush()
        jobs = [(fn, c, settings) for c in todo]
        if settings.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(settings.workers) as pool:
                results = pool.map(_call, jobs)
                for rows in results:
                    errors += any(r.get("status") != "ok" for r in rows)
                    _write_rows(fh, writer, rows)
        else:
            for job in jobs:
                rows = _call(job)
                log.info("finished %s", job[1].cell_id)
                errors += any(r.get("status") != "ok" for r in rows)
                _write_rows(fh, writer, rows)
    _reorder(out, fields, [cell_hash(c, settings) for c in cells])
    summary = dict(cells=len(cells), skipped=len(cells) - len(todo), ran=len(todo), failed=errors)
    write_manifest(out, cells, settings, kind=kind, name=name, scale=scale, summary=summary)
    return summary


def _reorder(path: str, fields: list, order: list):
    """Sort rows into cell order so reruns give identical files."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rank = {h: i for i, h in enumerate(order)}
    rows.sort(key=lambda r: rank.get(r["cell_hash"], len(rank)))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def write_manifest(out: str, cells: list, settings: Settings, **extra):
    hashes = [cell_hash(c, settings) for c in cells]
    manifest = dict(
        schema_version=SCHEMA_VERSION,
        output=os.path.basename(out),
        settings=asdict(settings),
        n_cells=len(cells),
        input_hash=hashlib.sha256("".join(hashes).encode()).hexdigest(),
        cells=[dict(asdict(c), cell_hash=h) for c, h in zip(cells, hashes)],
        **extra,
    )
    with open(os.path.splitext(out)[0] + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, default=list, allow_nan=True)


def run_suite(name: str, out: str, settings: Settings = Settings(), scale: str = "desk") -> dict:
    return run_cells(suite_cells(name, scale), settings, out, name=name, scale=scale)


def run_zipkin_suite(out: str, settings: Settings = Settings()) -> dict:
    return run_suite("zipkin", out, settings)


def run_xin_suite(out: str, settings: Settings = Settings()) -> dict:
    return run_suite("xin", out, settings)


def run_grid_suite(out: str, scale: str = "desk", settings: Settings = Settings()) -> dict:
    return run_suite("grid", out, settings, scale)


def run_sensitivity_suite(out: str, settings: Settings = Settings()) -> dict:
    return run_suite("sensitivity", out, settings)


TABLE_DEFAULT = dict(cv=(0.25, 0.5, 0.75, 1.0, 1.5, 2.0), p=(4, 9, 19, 49, 99, 199), L=(1, 2, 4, 8))


def table_cells(spec: dict | None = None, mean: float = 10.0) -> list:
    spec = spec or TABLE_DEFAULT
    return [Cell("table", "continuous", mean, cv, p, 1.0, L, ("SE" if cv <= 1 else "HY",))
            for cv, p, L in product(spec["cv"], spec["p"], spec["L"])]


def generate_lookup_table(spec: dict | None, out: str, settings: Settings = Settings()) -> dict:
    """Optimal FP3 target per (cv, p, L): SE demand for cv <= 1, HY above."""
    return run_cells(table_cells(spec), settings, out, kind="table", name="table")


def read_rows(path: str) -> list:
    """CSV rows with numeric columns converted."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        conv = {}
        for k, v in r.items():
            try:
                conv[k] = float(v)
            except (TypeError, ValueError):
                conv[k] = v
        out.append(conv)
    return out
