"""Periodic-review lost-sales simulation.

Sequence of events in every period: the oldest pipeline order arrives, the
policy places an order, demand is drawn, unmet demand is lost and end stock
is charged ``h`` per unit while each lost unit costs ``p``.

Demand is generated up front from ``(seed, horizon)`` so that every policy
sees the same realisation (common random numbers).
"""
from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .distributions import FittedDistribution
from .errors import BracketError, InsufficientStockoutsError
from .p3_recursion import PipelineState
from .policies import (
    BaseStock,
    CappedBaseStock,
    ConstantOrder,
    CostParams,
    FixedP3,
    KernelInputs,
    Policy,
    ProjectedInventoryLevel,
    fp3_order_kernel,
    order_quantity,
    pil_order_kernel,
    resolve_evaluator,
)

DRIFT_LIMIT = 0.005

# accumulator slots
_N, _COST, _INV, _LOST, _DEM, _ORD, _ORD2, _POS, _NT, _ST, _ST2, _NSO, _FB, \
    _COST90, _ALL_ORD, _ALL_DEM, _ALL_LOST, _FINAL, _BRACKET = range(19)
_NSLOTS = 19

POLICY_CODES = {BaseStock: 0, ConstantOrder: 1, CappedBaseStock: 2, FixedP3: 3,
                ProjectedInventoryLevel: 4}


def default_warmup(L: int) -> int:
    return 2000 if L <= 16 else 10000


@dataclass(frozen=True)
class SimConfig:
    cost: CostParams
    horizon: int
    seed: int
    demand: FittedDistribution
    warmup: int | None = None
    initial_stock: float | None = None

    def __post_init__(self):
        if self.warmup is None:
            object.__setattr__(self, "warmup", default_warmup(self.cost.L))
        if not self.horizon > self.warmup >= 0:
            raise ValueError("need horizon > warmup >= 0")

    @property
    def start_stock(self) -> float:
        if self.initial_stock is not None:
            return float(self.initial_stock)
        m = self.demand.mean
        return float(round(m)) if self.demand.discrete else m


@dataclass(frozen=True)
class SimStats:
    avg_cost: float
    avg_end_inventory: float
    avg_lost: float
    avg_demand: float
    lost_fraction: float
    realized_p3: float
    order_mean: float
    order_cv: float
    t_mean: float
    t_msq: float
    n_stockouts: int
    n_intervals: int
    periods: int
    fallbacks: int = 0
    drift: float = 0.0
    diagnostics: dict = field(default_factory=dict, compare=False)


# ---------------------------------------------------------------------------
# demand streams
# ---------------------------------------------------------------------------

_STREAMS: "OrderedDict[tuple, np.ndarray]" = OrderedDict()
_STREAM_CACHE = 6


def demand_stream(d: FittedDistribution, seed: int, horizon: int) -> np.ndarray:
    """Deterministic demand path; prefixes agree across horizons."""
    key = (d, int(seed), int(horizon))
    arr = _STREAMS.get(key)
    if arr is None:
        arr = d.sample(np.random.default_rng(seed), horizon)
        arr.setflags(write=False)
        _STREAMS[key] = arr
        if len(_STREAMS) > _STREAM_CACHE:
            _STREAMS.popitem(last=False)
    else:
        _STREAMS.move_to_end(key)
    return arr


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

@njit(cache=True)
def _account(acc, t, warmup, q, dem, on_hand, h, p, discrete, last_so, n90):
    """Book one period; returns (end stock, index of last stockout)."""
    if dem >= on_hand:
        lost = dem - on_hand
        end = 0.0
    else:
        lost = 0.0
        end = on_hand - dem
    acc[_ALL_ORD] += q
    acc[_ALL_DEM] += dem
    acc[_ALL_LOST] += lost
    if t < warmup:
        return end, last_so
    acc[_N] += 1.0
    acc[_COST] += h * end + p * lost
    acc[_INV] += end
    acc[_LOST] += lost
    acc[_DEM] += dem
    acc[_ORD] += q
    acc[_ORD2] += q * q
    if end > 0.0:
        acc[_POS] += 1.0
    stockout = lost > 0.0 if discrete else end <= 0.0
    if stockout:
        acc[_NSO] += 1.0
        if last_so >= 0:
            gap = float(t - last_so)
            acc[_NT] += 1.0
            acc[_ST] += gap
            acc[_ST2] += gap * gap
        last_so = t
    if acc[_N] == n90:
        acc[_COST90] = acc[_COST]
    return end, last_so


@njit(cache=True)
def simulate_kernel(pcode, a, b, ecode, demand, L, h, p, warmup, start, discrete,
                    mean, dist, counts, cprobs, rate, shift, pmf, cum, tail, record):
    horizon = demand.shape[0]
    acc = np.zeros(_NSLOTS)
    pipe = np.zeros(L)
    on_hand = start
    last_so = -1
    n90 = float(int(0.9 * (horizon - warmup)))
    work = np.empty(6)
    orders = np.empty(horizon if record else 0)
    for t in range(horizon):
        if t > 0:
            on_hand += pipe[0]
            for i in range(L - 1):
                pipe[i] = pipe[i + 1]
        out = pipe[: L - 1]
        if pcode == 0:
            q = max(0.0, a - on_hand - out.sum())
        elif pcode == 1:
            q = a
        elif pcode == 2:
            q = min(max(0.0, a - on_hand - out.sum()), b)
        elif pcode == 3:
            q, fb = fp3_order_kernel(ecode, on_hand, out, a, mean, dist, work,
                                     counts, cprobs, rate, shift, pmf, cum, tail)
            if fb:
                acc[_FB] += 1.0
        else:
            q, fb = pil_order_kernel(ecode, on_hand, out, a, dist, work,
                                     counts, cprobs, rate, shift, pmf, cum, tail)
            if fb:
                acc[_FB] += 1.0
        pipe[L - 1] = q
        if record:
            orders[t] = q
        on_hand, last_so = _account(acc, t, warmup, q, demand[t], on_hand, h, p,
                                    discrete, last_so, n90)
    acc[_FINAL] = on_hand + pipe.sum()
    return acc, orders


def _policy_params(pol: Policy):
    code = POLICY_CODES[type(pol)]
    if code == 0:
        return code, float(pol.S), 0.0
    if code == 1:
        return code, float(pol.Q), 0.0
    if code == 2:
        return code, float(pol.S), float(pol.Qmax)
    return code, float(pol.target), 0.0


def _slow_path(pol: Policy, cfg: SimConfig, demand: np.ndarray, record: bool):
    """Python loop around :func:`order_quantity` (forward evaluator)."""
    L = cfg.cost.L
    acc = np.zeros(_NSLOTS)
    pipe = np.zeros(L)
    on_hand = cfg.start_stock
    last_so = -1
    n90 = float(int(0.9 * (cfg.horizon - cfg.warmup)))
    orders = np.empty(cfg.horizon if record else 0)
    for t in range(cfg.horizon):
        if t > 0:
            on_hand += pipe[0]
            pipe[:-1] = pipe[1:].copy()
        state = PipelineState(on_hand, tuple(pipe[: L - 1]))
        try:
            q = order_quantity(pol, state, cfg.demand)
        except BracketError:
            acc[_BRACKET] += 1
            q = 0.0
        pipe[L - 1] = q
        if record:
            orders[t] = q
        on_hand, last_so = _account(acc, t, cfg.warmup, q, float(demand[t]), on_hand,
                                    cfg.cost.h, cfg.cost.p, cfg.demand.discrete, last_so, n90)
    acc[_FINAL] = on_hand + pipe.sum()
    return acc, orders


def _run(pol: Policy, cfg: SimConfig, record: bool, force_slow: bool = False, demand=None):
    if cfg.demand.mean <= 0:
        raise ValueError("demand mean must be positive")
    if demand is None:
        demand = demand_stream(cfg.demand, cfg.seed, cfg.horizon)
    ev = None
    if isinstance(pol, (FixedP3, ProjectedInventoryLevel)):
        ev = resolve_evaluator(pol.evaluator, cfg.demand)
    slow = force_slow or (isinstance(pol, FixedP3) and ev == "forward")
    if slow:
        return _slow_path(pol, cfg, demand, record)
    if ev == "forward":
        ev = "backward"
    ki = KernelInputs(cfg.demand, ev or ("exact_discrete" if cfg.demand.discrete else "backward"))
    code, a, b = _policy_params(pol)
    return simulate_kernel(code, a, b, ki.code, demand, cfg.cost.L, cfg.cost.h, cfg.cost.p,
                           cfg.warmup, cfg.start_stock, cfg.demand.discrete, ki.mean,
                           ki.dist, ki.counts, ki.cprobs, ki.rate, ki.shift, ki.pmf,
                           ki.cum, ki.tail, record)


def _stats(acc: np.ndarray, cfg: SimConfig) -> SimStats:
    n = acc[_N]
    om = acc[_ORD] / n
    ovar = max(acc[_ORD2] / n - om * om, 0.0)
    avg_cost = acc[_COST] / n
    n90 = int(0.9 * (cfg.horizon - cfg.warmup))
    drift = 0.0
    if n90 > 0 and avg_cost > 0:
        drift = abs(acc[_COST90] / n90 - avg_cost) / avg_cost
    nt = int(acc[_NT])
    diag = {
        "total_ordered": float(acc[_ALL_ORD]),
        "total_demand": float(acc[_ALL_DEM]),
        "total_lost": float(acc[_ALL_LOST]),
        "initial_stock": cfg.start_stock,
        "final_system_stock": float(acc[_FINAL]),
        "bracket_failures": int(acc[_BRACKET]),
    }
    return SimStats(
        avg_cost=avg_cost,
        avg_end_inventory=acc[_INV] / n,
        avg_lost=acc[_LOST] / n,
        avg_demand=acc[_DEM] / n,
        lost_fraction=acc[_LOST] / acc[_DEM] if acc[_DEM] > 0 else 0.0,
        realized_p3=acc[_POS] / n,
        order_mean=om,
        order_cv=math.sqrt(ovar) / om if om > 0 else 0.0,
        t_mean=acc[_ST] / nt if nt else math.nan,
        t_msq=acc[_ST2] / nt if nt else math.nan,
        n_stockouts=int(acc[_NSO]),
        n_intervals=nt,
        periods=int(n),
        fallbacks=int(acc[_FB]),
        drift=drift,
        diagnostics=diag,
    )


def simulate(pol: Policy, cfg: SimConfig, *, force_slow: bool = False) -> SimStats:
    """Run ``pol`` for ``cfg.horizon`` periods and summarise the post-warm-up part."""
    acc, _ = _run(pol, cfg, False, force_slow)
    stats = _stats(acc, cfg)
    if stats.drift > DRIFT_LIMIT:
        warnings.warn(f"running mean cost moved {stats.drift:.2%} over the last decile; "
                      "the run may not be stationary", RuntimeWarning, stacklevel=2)
    return stats


def simulate_orders(pol: Policy, cfg: SimConfig) -> np.ndarray:
    """Order sequence of a run, warm-up included."""
    return _run(pol, cfg, True)[1]


def simulate_path(pol: Policy, cfg: SimConfig, demand) -> SimStats:
    """Like :func:`simulate` on a caller-supplied demand trace of length ``cfg.horizon``.

    ``cfg.demand`` still drives the order kernels.
    """
    demand = np.ascontiguousarray(demand, dtype=float)
    if demand.shape != (cfg.horizon,):
        raise ValueError("demand trace length must equal the horizon")
    return _stats(_run(pol, cfg, False, demand=demand)[0], cfg)


def optimality_ratio(stats: SimStats) -> float:
    """Sample analogue of E[T^2]/E[T] over complete stockout intervals."""
    if stats.n_stockouts < 2 or stats.n_intervals < 1:
        raise InsufficientStockoutsError("need at least two stockouts")
    return stats.t_msq / stats.t_mean
