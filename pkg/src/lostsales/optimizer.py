"""Simulation-based parameter search under common random numbers.

Every search evaluates candidate parameters on one fixed demand path
(``cfg.seed``), so the objective is a deterministic function of the
parameter and golden-section or bisection steps are well defined.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import replace
from typing import Callable

from .distributions import DemandMoments, FittedDistribution
from .errors import BracketError, InsufficientStockoutsError
from .policies import (
    BaseStock,
    CappedBaseStock,
    ConstantOrder,
    FixedP3,
    ProjectedInventoryLevel,
    co_closed_form,
)
from .simulator import SimConfig, optimality_ratio, simulate

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
P3_LO, P3_HI = 0.5, 0.9999
RATIO_RTOL = 0.02
P3_WIDTH = 1e-4


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float):
    """Minimise a unimodal ``f`` on [lo, hi]; returns (argmin, min, width).

    The best point seen is returned, not the bracket midpoint, so the answer
    is always an evaluated candidate.
    """
    seen = {}

    def g(x):
        if x not in seen:
            seen[x] = f(x)
        return seen[x]

    a, b = lo, hi
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = g(c), g(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = g(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = g(d)
    x = min(seen, key=lambda k: (seen[k], k))
    return x, seen[x], b - a


def _quiet(pol, cfg):
    # short search runs routinely trip the stationarity warning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return simulate(pol, cfg)


def _cost_of(make, cfg: SimConfig):
    cache = {}

    def f(x):
        if x not in cache:
            cache[x] = _quiet(make(x), cfg)
        return cache[x].avg_cost

    return f, cache


def _with_demand(cfg: SimConfig, d: FittedDistribution | None) -> SimConfig:
    return cfg if d is None or d is cfg.demand else replace(cfg, demand=d)


def _cv(d: FittedDistribution) -> float:
    return d.cv


def base_stock_range(cfg: SimConfig) -> float:
    d = cfg.demand
    return (cfg.cost.L + 2) * d.mean * (1.0 + 5.0 * _cv(d))


def _best_integer_near(f, x: float) -> float:
    """Cheapest integer within two of ``x`` (lowest on ties)."""
    centre = int(round(x))
    grid = [s for s in range(centre - 2, centre + 3) if s >= 0]
    return float(min(grid, key=lambda s: (f(float(s)), s)))


def optimize_base_stock(cfg: SimConfig, d: FittedDistribution | None = None):
    """Best order-up-to level; integer levels for integer demand."""
    cfg = _with_demand(cfg, d)
    mean = cfg.demand.mean
    f, cache = _cost_of(BaseStock, cfg)
    x, _, _ = golden_section(f, 0.0, base_stock_range(cfg), 1e-3 * mean)
    if cfg.demand.discrete:
        x = _best_integer_near(f, x)
    return x, cache[x]


def optimize_constant_order(cfg: SimConfig, d: FittedDistribution | None = None):
    cfg = _with_demand(cfg, d)
    mean = cfg.demand.mean
    f, cache = _cost_of(ConstantOrder, cfg)
    x, _, _ = golden_section(f, 0.0, mean * (1.0 - 1e-9), 1e-3 * mean)
    return x, cache[x]


def optimize_cbs(cfg: SimConfig, d: FittedDistribution | None = None):
    """Grid over the cap with an inner golden search on the level.

    Integer demand gets integer levels, as for base stock.
    """
    cfg = _with_demand(cfg, d)
    mean = cfg.demand.mean
    s_hi = base_stock_range(cfg)
    results = {}

    def inner(qmax):
        if qmax not in results:
            f, cache = _cost_of(lambda s: CappedBaseStock(s, qmax), cfg)
            s, c, _ = golden_section(f, 0.0, s_hi, 1e-3 * mean)
            if cfg.demand.discrete:
                s = _best_integer_near(f, s)
                c = cache[s].avg_cost
            results[qmax] = (c, s, cache[s])
        return results[qmax]

    step = 0.05 * mean
    for i in range(1, 31):
        inner(i * step)
    # no cap at all is plain base stock, which the grid cannot reach
    inner(math.inf)
    best = min(results, key=lambda k: (results[k][0], k))
    while step >= 0.01 * mean and math.isfinite(best):
        step /= 2.0
        for cand in (best - step, best + step):
            if cand > 0:
                inner(cand)
        best = min(results, key=lambda k: (results[k][0], k))
    c, s, stats = results[best]
    return s, best, stats


def co_p3_guess(cfg: SimConfig) -> float:
    """Constant-order optimal P3, which does not depend on the demand law."""
    h, p = cfg.cost.h, cfg.cost.p
    return 1.0 - math.sqrt(h / (2.0 * p + h))


def optimize_fp3(cfg: SimConfig, d: FittedDistribution | None = None,
                 mode: str = "optimality_eq", evaluator: str = "auto"):
    """Best FP3 target; returns (target, stats on the search path).

    ``optimality_eq`` bisects on the target until the sample ratio
    E[T^2]/E[T] hits (2p+h)/h; ``cost_search`` minimises cost directly.
    """
    cfg = _with_demand(cfg, d)
    if mode == "cost_search":
        f, cache = _cost_of(lambda t: FixedP3(t, evaluator), cfg)
        x, _, _ = golden_section(f, P3_LO, P3_HI, P3_WIDTH)
        return x, cache[x]
    if mode != "optimality_eq":
        raise ValueError(f"unknown mode {mode!r}")
    if cfg.demand.discrete:
        raise ValueError("the optimality equation needs continuous demand")
    goal = (2.0 * cfg.cost.p + cfg.cost.h) / cfg.cost.h
    runs = {}

    def excess(t):
        if t not in runs:
            runs[t] = _quiet(FixedP3(t, evaluator), cfg)
        try:
            return optimality_ratio(runs[t]) / goal - 1.0
        except InsufficientStockoutsError:
            return math.inf

    guess = co_p3_guess(cfg)
    lo, hi = max(P3_LO, guess - 0.15), min(P3_HI, guess + 0.15)
    if excess(lo) > 0:
        lo = P3_LO
    if excess(hi) < 0:
        hi = P3_HI
    e_lo, e_hi = excess(lo), excess(hi)
    if e_lo > 0 or e_hi < 0:
        raise BracketError(f"ratio does not cross {goal:g} on [{lo}, {hi}]")
    for t, e in ((lo, e_lo), (hi, e_hi)):
        if abs(e) <= RATIO_RTOL:
            return t, runs[t]
    while hi - lo > P3_WIDTH:
        mid = 0.5 * (lo + hi)
        e = excess(mid)
        if abs(e) <= RATIO_RTOL:
            return mid, runs[mid]
        if e < 0:
            lo = mid
        else:
            hi = mid
    # tolerance unreachable on this path: return the closest candidate
    best = min(runs, key=lambda t: abs(excess(t)))
    return best, runs[best]


def pil_range(cfg: SimConfig) -> float:
    """Upper end of the PIL target search.

    (L+1) means covers long lead times; the second term covers short lead
    times with high penalty and variable demand, where the best target is
    several standard deviations above the mean.
    """
    d = cfg.demand
    return max((cfg.cost.L + 1) * d.mean, 3.0 * d.mean * (1.0 + 5.0 * _cv(d)))


def optimize_pil(cfg: SimConfig, d: FittedDistribution | None = None,
                 evaluator: str = "auto", tol: float = 1e-3):
    """Best PIL target; ``tol`` is the final bracket width in units of mean demand."""
    cfg = _with_demand(cfg, d)
    mean = cfg.demand.mean
    f, cache = _cost_of(lambda x: ProjectedInventoryLevel(x, evaluator), cfg)
    x, _, _ = golden_section(f, 0.0, pil_range(cfg), tol * mean)
    return x, cache[x]


def fp3_heuristic_target(cfg: SimConfig, d: FittedDistribution | None = None) -> float:
    """Realised P3 of whichever of BS and CO is cheaper (BS on ties)."""
    cfg = _with_demand(cfg, d)
    _, bs = optimize_base_stock(cfg)
    _, co = optimize_constant_order(cfg)
    return bs.realized_p3 if bs.avg_cost <= co.avg_cost else co.realized_p3


def co_reference(cfg: SimConfig):
    """Closed-form constant-order optimum for the demand moments of ``cfg``."""
    d = cfg.demand
    return co_closed_form(None, DemandMoments(d.mean, d.cv), h=cfg.cost.h, p=cfg.cost.p)
