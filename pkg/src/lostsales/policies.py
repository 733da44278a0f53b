"""Replenishment rules and the constant-order closed forms.

Each rule maps (pipeline state, demand law) to this period's order.  The
numba kernels below are shared with the simulator so that a policy gives
bit-identical orders whether called directly or inside a simulation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from numba import njit

from .distributions import DemandMoments, FittedDistribution
from .errors import BracketError, EvaluatorMismatchError, ShiftInfeasibleError
from .exact_engines import (
    PHASE_CAP,
    _discrete_before_last,
    discrete_order_for_target,
    discrete_tables,
    exact_discrete_expected_inventory,
    exact_phase_expected_inventory,
    phase_before_last,
    phase_met_table,
    phase_p3_given,
    to_phase_demand,
)
from .p3_recursion import (
    PipelineState,
    backward_log_tail,
    backward_pil_kernel,
    forward_p3,
    pil_expected_inventory,
)

EVALUATORS = ("backward", "forward", "exact_discrete", "exact_phase")
EVALUATOR_CODES = {name: i for i, name in enumerate(EVALUATORS)}

P3_TOL = 1e-6
WIDTH_TOL = 1e-9
MAX_DOUBLINGS = 200


@dataclass(frozen=True)
class CostParams:
    h: float
    p: float
    L: int

    def __post_init__(self):
        if not (self.h > 0 and self.p > 0):
            raise ValueError("h and p must be positive")
        if int(self.L) != self.L or self.L < 1:
            raise ValueError("lead time must be an integer >= 1")


@dataclass(frozen=True)
class BaseStock:
    S: float

    def __post_init__(self):
        if self.S < 0:
            raise ValueError("S must be nonnegative")


@dataclass(frozen=True)
class ConstantOrder:
    Q: float

    def __post_init__(self):
        if self.Q < 0:
            raise ValueError("Q must be nonnegative")


@dataclass(frozen=True)
class CappedBaseStock:
    S: float
    Qmax: float

    def __post_init__(self):
        if self.S < 0 or self.Qmax < 0:
            raise ValueError("S and Qmax must be nonnegative")


def _check_evaluator(name: str):
    if name != "auto" and name not in EVALUATORS:
        raise ValueError(f"unknown evaluator {name!r}")


@dataclass(frozen=True)
class FixedP3:
    """Order so that the predicted P3 at the arrival period equals ``target``."""

    target: float
    evaluator: str = "auto"

    def __post_init__(self):
        if not 0.0 < self.target < 1.0:
            raise ValueError("target must lie in (0, 1)")
        _check_evaluator(self.evaluator)


@dataclass(frozen=True)
class ProjectedInventoryLevel:
    """Order so that expected stock after this order lands equals ``target``."""

    target: float
    evaluator: str = "auto"

    def __post_init__(self):
        if self.target < 0:
            raise ValueError("target must be nonnegative")
        _check_evaluator(self.evaluator)


Policy = Union[BaseStock, ConstantOrder, CappedBaseStock, FixedP3, ProjectedInventoryLevel]


def resolve_evaluator(name: str, d: FittedDistribution) -> str:
    """Map ``auto`` to the natural evaluator and reject impossible pairings."""
    if name == "auto":
        return "exact_discrete" if d.discrete else "backward"
    if d.discrete != (name == "exact_discrete"):
        raise EvaluatorMismatchError(f"evaluator {name!r} does not fit {type(d).__name__}")
    if name == "exact_phase":
        to_phase_demand(d)
    return name


# ---------------------------------------------------------------------------
# numba order kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _p3_at(code, on_hand, out, q, dist, work, htab, rate, shift):
    if code == 0:
        lt = backward_log_tail(on_hand, out, q, dist, work)
        return 1.0 - math.exp(lt)
    return phase_p3_given(htab, rate, q - shift)


@njit(cache=True)
def solve_p3_order(code, on_hand, out, target, lo, mean, dist, work, htab, rate, shift):
    """Smallest q >= lo with P3(q) = target for an increasing P3.

    Bracket by doubling from the mean demand, then regula falsi with the
    Illinois modification, falling back to bisection if an iterate leaves
    the bracket.  Returns (q, status) where
    status is 0 on success, 1 if P3(lo) already meets the target, 2 if no
    bracket was found.
    """
    f_lo = _p3_at(code, on_hand, out, lo, dist, work, htab, rate, shift) - target
    if f_lo >= 0.0:
        return lo, 1
    hi = lo + mean
    f_hi = _p3_at(code, on_hand, out, hi, dist, work, htab, rate, shift) - target
    n = 0
    step = mean
    while f_hi < 0.0:
        lo, f_lo = hi, f_hi
        step *= 2.0
        hi = lo + step
        f_hi = _p3_at(code, on_hand, out, hi, dist, work, htab, rate, shift) - target
        n += 1
        if n > MAX_DOUBLINGS:
            return hi, 2
    if f_hi <= P3_TOL:
        return hi, 0
    side = 0
    width_tol = WIDTH_TOL * mean
    for _ in range(200):
        if hi - lo <= width_tol:
            break
        q = (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        if not lo < q < hi:
            q = 0.5 * (lo + hi)
        f = _p3_at(code, on_hand, out, q, dist, work, htab, rate, shift) - target
        if abs(f) <= P3_TOL:
            return q, 0
        if f < 0.0:
            lo, f_lo = q, f
            if side == -1:
                f_hi *= 0.5
            side = -1
        else:
            hi, f_hi = q, f
            if side == 1:
                f_lo *= 0.5
            side = 1
    return 0.5 * (lo + hi), 0


@njit(cache=True)
def phase_table(on_hand, out, shift, counts, cprobs, rate):
    """Shift-adjust the state and build the met-demand table.

    Returns (table, ok); ok is False when an outstanding order is below the
    shift or the phase support overflows.
    """
    adj = np.empty(out.shape[0])
    for i in range(out.shape[0]):
        adj[i] = out[i] - shift
        if adj[i] < -1e-12:
            return np.zeros(1), False
        if adj[i] < 0.0:
            adj[i] = 0.0
    oh = max(on_hand - shift, 0.0)
    prob, short = phase_before_last(oh, adj, counts, cprobs, rate, PHASE_CAP)
    if short < 0.0:
        return np.zeros(1), False
    return phase_met_table(prob, counts, cprobs), True


@njit(cache=True)
def phase_expected_stock(on_hand, out, shift, counts, cprobs, rate):
    """Exact E[stock end of t+L-1]; returns (value, ok)."""
    adj = np.empty(out.shape[0])
    for i in range(out.shape[0]):
        adj[i] = out[i] - shift
        if adj[i] < -1e-12:
            return 0.0, False
        if adj[i] < 0.0:
            adj[i] = 0.0
    oh = max(on_hand - shift, 0.0)
    _, short = phase_before_last(oh, adj, counts, cprobs, rate, PHASE_CAP)
    if short < 0.0:
        return 0.0, False
    mean_phases = 0.0
    for c in range(counts.shape[0]):
        mean_phases += counts[c] * cprobs[c]
    value = oh + adj.sum() - (out.shape[0] + 1) * mean_phases / rate + short / rate
    return max(value, 0.0), True


@njit(cache=True)
def fp3_order_kernel(code, on_hand, out, target, mean, dist, work,
                     counts, cprobs, rate, shift, pmf, cum, tail):
    """FP3 order for the numba-capable evaluators.

    Returns (q, fallback) where fallback flags a shift-infeasible exact-phase
    state that was answered by the backward scheme instead.
    """
    if code == 2:
        prob = _discrete_before_last(int(on_hand + 0.5), _as_int(out), pmf, tail)
        return float(discrete_order_for_target(prob, target, cum)), False
    empty = np.zeros(1)
    if code == 3:
        htab, ok = phase_table(on_hand, out, shift, counts, cprobs, rate)
        if ok:
            q, status = solve_p3_order(3, on_hand, out, target, shift, mean,
                                       dist, work, htab, rate, shift)
            if status != 1:
                return q, False
            # the root lies below the shift: exact phases cannot represent it
            if shift <= 0.0:
                return 0.0, False
        q, status = solve_p3_order(0, on_hand, out, target, 0.0, mean,
                                   dist, work, empty, rate, shift)
        return (0.0 if status == 1 else q), True
    q, status = solve_p3_order(0, on_hand, out, target, 0.0, mean,
                               dist, work, empty, rate, shift)
    return (0.0 if status == 1 else q), False


@njit(cache=True)
def _as_int(out):
    res = np.empty(out.shape[0], dtype=np.int64)
    for i in range(out.shape[0]):
        res[i] = int(out[i] + 0.5)
    return res


@njit(cache=True)
def pil_order_kernel(code, on_hand, out, target, dist, work,
                     counts, cprobs, rate, shift, pmf, cum, tail):
    """PIL order; returns (q, fallback) like :func:`fp3_order_kernel`."""
    fallback = False
    if code == 2:
        prob = _discrete_before_last(int(on_hand + 0.5), _as_int(out), pmf, tail)
        e = 0.0
        for i in range(prob.shape[0]):
            e += i * prob[i]
        return float(max(0, int(math.floor(target - e + 0.5)))), False
    if code == 3:
        e, ok = phase_expected_stock(on_hand, out, shift, counts, cprobs, rate)
        if not ok:
            fallback = True
            e = backward_pil_kernel(on_hand, out, dist, work)
    else:
        e = backward_pil_kernel(on_hand, out, dist, work)
    return max(0.0, target - e), fallback


# ---------------------------------------------------------------------------
# python entry points
# ---------------------------------------------------------------------------

class KernelInputs:
    """Arrays the order kernels need for one demand law and evaluator."""

    def __init__(self, d: FittedDistribution, evaluator: str):
        self.code = EVALUATOR_CODES[evaluator]
        self.mean = d.mean
        if d.discrete:
            self.dist = np.zeros(6)
            self.pmf, self.cum, self.tail = discrete_tables(d)
        else:
            self.dist = d.packed()
            self.pmf = self.cum = self.tail = np.zeros(1)
        if evaluator == "exact_phase":
            pd = to_phase_demand(d)
            self.counts, self.cprobs = pd.arrays()
            self.rate, self.shift = pd.rate, pd.shift
        else:
            self.counts = np.zeros(1, dtype=np.int64)
            self.cprobs = np.ones(1)
            self.rate, self.shift = 1.0, 0.0

    def fp3(self, on_hand, out, target):
        return fp3_order_kernel(self.code, on_hand, out, target, self.mean, self.dist,
                                np.empty(6), self.counts, self.cprobs, self.rate,
                                self.shift, self.pmf, self.cum, self.tail)

    def pil(self, on_hand, out, target):
        return pil_order_kernel(self.code, on_hand, out, target, self.dist, np.empty(6),
                                self.counts, self.cprobs, self.rate, self.shift,
                                self.pmf, self.cum, self.tail)


def solve_increasing(f, target: float, lo: float, mean: float) -> float:
    """Pure-python twin of :func:`solve_p3_order` for the forward scheme."""
    f_lo = f(lo) - target
    if f_lo >= 0:
        return lo
    hi = lo + mean
    f_hi = f(hi) - target
    step = mean
    for _ in range(MAX_DOUBLINGS):
        if f_hi >= 0:
            break
        lo, f_lo = hi, f_hi
        step *= 2.0
        hi = lo + step
        f_hi = f(hi) - target
    else:
        raise BracketError("P3 never reached the target")
    if f_hi <= P3_TOL:
        return hi
    side = 0
    for _ in range(200):
        if hi - lo <= WIDTH_TOL * mean:
            break
        q = (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        if not lo < q < hi:
            q = 0.5 * (lo + hi)
        fq = f(q) - target
        if abs(fq) <= P3_TOL:
            return q
        if fq < 0:
            lo, f_lo = q, fq
            if side == -1:
                f_hi *= 0.5
            side = -1
        else:
            hi, f_hi = q, fq
            if side == 1:
                f_lo *= 0.5
            side = 1
    return 0.5 * (lo + hi)


def order_quantity(pol: Policy, state: PipelineState, d: FittedDistribution) -> float:
    """This period's order under ``pol``."""
    if isinstance(pol, BaseStock):
        return max(0.0, pol.S - state.system_stock)
    if isinstance(pol, ConstantOrder):
        return float(pol.Q)
    if isinstance(pol, CappedBaseStock):
        return min(max(0.0, pol.S - state.system_stock), pol.Qmax)
    if isinstance(pol, FixedP3):
        ev = resolve_evaluator(pol.evaluator, d)
        if ev == "forward":
            return float(solve_increasing(lambda q: forward_p3(state, q, d),
                                          pol.target, 0.0, d.mean))
        on_hand, out = state.arrays()
        if ev == "exact_discrete":
            on_hand, out = _integer_arrays(state)
        q, _ = KernelInputs(d, ev).fp3(on_hand, out, pol.target)
        return float(q)
    if isinstance(pol, ProjectedInventoryLevel):
        ev = resolve_evaluator(pol.evaluator, d)
        if ev == "exact_discrete":
            return float(max(0, math.floor(pol.target - exact_discrete_expected_inventory(state, d) + 0.5)))
        if ev == "exact_phase":
            try:
                e = exact_phase_expected_inventory(state, to_phase_demand(d))
            except ShiftInfeasibleError:
                e = pil_expected_inventory(state, d)
        else:
            # forward has no PIL form of its own; both use the slice evaluator
            e = pil_expected_inventory(state, d)
        return max(0.0, pol.target - e)
    raise TypeError(f"unknown policy {pol!r}")


def _integer_arrays(state: PipelineState):
    vals = (state.on_hand,) + state.outstanding
    if any(abs(v - round(v)) > 1e-9 for v in vals):
        raise ValueError("discrete evaluator needs integer stock and orders")
    return float(round(state.on_hand)), np.round(np.asarray(state.outstanding, dtype=float))


def co_closed_form(cp: CostParams | None, m: DemandMoments, h: float | None = None,
                   p: float | None = None):
    """(Q*, expected cost, P3*) for the constant-order rule under shifted-exponential demand."""
    if cp is not None:
        h, p = cp.h, cp.p
    if m.cv > 1:
        raise ValueError("closed forms need cv <= 1")
    if h is None or p is None or h <= 0 or p < 0:
        raise ValueError("need h > 0 and p >= 0")
    root = math.sqrt(h / (2.0 * p + h))
    mean, sigma = m.mean, m.mean * m.cv
    q = mean * (1.0 - m.cv * root)
    cost = h * (q - (mean - sigma)) ** 2 / (2.0 * (mean - q)) + p * (mean - q)
    return q, cost, 1.0 - root
