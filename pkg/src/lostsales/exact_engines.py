"""Exact P3 and projected-inventory evaluators.

Two engines:

* integer demand: the distribution of end-of-period stock is pushed through
  the lost-sales Lindley recursion by convolve-shift-truncate steps;
* single-rate Erlang mixtures (and shifted exponentials after removing the
  shift): stock is a Poisson point pattern of rate ``rate`` laid along the
  inventory axis, demand consumes a random number of those points, so the
  count of points in stock is a Markov chain on the integers.  Demand is met
  iff its phase count does not exceed the points in stock, and a shortfall
  of ``n - j`` phases loses ``(n - j)/rate`` units on average.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .distributions import (
    DiscretePMF,
    FittedDistribution,
    MixedErlang1K,
    MixedErlangKm1K,
    ShiftedExponential,
)
from .errors import EvaluatorMismatchError, ShiftInfeasibleError, TruncationError
from .p3_recursion import PipelineState

SUPPORT_CAP = 200_000
PHASE_CAP = 20_000
POISSON_TAIL = 1e-12


# ---------------------------------------------------------------------------
# discrete demand
# ---------------------------------------------------------------------------

@njit(cache=True)
def _lindley_step(prob, order, pmf, tail):
    """Distribution of (S + order - D)^+ given the distribution of S.

    ``tail[m]`` is P{D >= m}; entries beyond the pmf support are zero.
    """
    n_pmf = pmf.shape[0]
    size = prob.shape[0] + order
    new = np.zeros(size)
    for i in range(prob.shape[0]):
        pi = prob[i]
        if pi == 0.0:
            continue
        top = i + order
        # D >= top empties the shelf
        if top < n_pmf:
            new[0] += pi * tail[top]
        lo = max(1, top - n_pmf + 1)
        for j in range(lo, top + 1):
            new[j] += pi * pmf[top - j]
    return new


@njit(cache=True)
def _discrete_before_last(on_hand, outstanding, pmf, tail):
    """Distribution of stock at the end of period t+L-1."""
    prob = np.zeros(on_hand + 1)
    prob[on_hand] = 1.0
    prob = _lindley_step(prob, 0, pmf, tail)
    for k in range(outstanding.shape[0]):
        prob = _lindley_step(prob, outstanding[k], pmf, tail)
    return prob


@njit(cache=True)
def _discrete_p3_given(prob, q, cum):
    """P{S + q - D > 0} = sum_i P{S=i} P{D <= i+q-1}."""
    n_cum = cum.shape[0]
    total = 0.0
    for i in range(prob.shape[0]):
        m = i + q - 1
        if m < 0:
            continue
        c = 1.0 if m >= n_cum else cum[m]
        total += prob[i] * c
    return total


@njit(cache=True)
def discrete_order_for_target(prob, target, cum):
    """Smallest integer q with P3(q) >= target."""
    hi = cum.shape[0] + 1
    if _discrete_p3_given(prob, 0, cum) >= target:
        return 0
    lo = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _discrete_p3_given(prob, mid, cum) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def _integer_state(state: PipelineState):
    vals = (state.on_hand,) + state.outstanding
    if any(abs(v - round(v)) > 1e-9 for v in vals):
        raise ValueError("discrete engine needs integer stock and orders")
    on_hand = int(round(state.on_hand))
    out = np.array([int(round(v)) for v in state.outstanding], dtype=np.int64)
    if on_hand + int(out.sum()) + 1 > SUPPORT_CAP:
        raise TruncationError("stock support exceeds the configured cap")
    return on_hand, out


def discrete_tables(pmf: DiscretePMF):
    p = pmf.pmf
    cum = np.cumsum(p)
    tail = np.empty(len(p) + 1)
    tail[0] = 1.0
    tail[1:] = np.maximum(1.0 - cum, 0.0)
    # P{D >= m} computed from the upper end to avoid cancellation
    tail[:-1] = np.cumsum(p[::-1])[::-1]
    tail[-1] = 0.0
    return p, cum, tail


def stock_distribution(state: PipelineState, pmf: DiscretePMF) -> np.ndarray:
    """Exact distribution of stock at the end of period t+L-1."""
    on_hand, out = _integer_state(state)
    p, _, tail = discrete_tables(pmf)
    return _discrete_before_last(on_hand, out, p, tail)


def exact_discrete_p3(state: PipelineState, q: int, pmf: DiscretePMF) -> float:
    """Exact P{end stock at t+L > 0} for integer state and order."""
    if abs(q - round(q)) > 1e-9 or q < 0:
        raise ValueError("order must be a nonnegative integer")
    prob = stock_distribution(state, pmf)
    _, cum, _ = discrete_tables(pmf)
    return float(_discrete_p3_given(prob, int(round(q)), cum))


def exact_discrete_expected_inventory(state: PipelineState, pmf: DiscretePMF) -> float:
    prob = stock_distribution(state, pmf)
    return float(np.arange(prob.size) @ prob)


# ---------------------------------------------------------------------------
# exponential phases
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseDemand:
    """Demand as a random number of exponential(rate) phases plus a shift."""

    counts: tuple
    probs: tuple
    rate: float
    shift: float = 0.0

    def __post_init__(self):
        if abs(sum(self.probs) - 1.0) > 1e-12:
            raise ValueError("phase-count probabilities must sum to 1")
        if any(c < 0 for c in self.counts) or not self.rate > 0:
            raise ValueError("invalid phase demand")

    def arrays(self):
        return (np.asarray(self.counts, dtype=np.int64),
                np.asarray(self.probs, dtype=float))

    @property
    def mean_phases(self) -> float:
        return float(np.dot(self.counts, self.probs))


def _mixture(counts, probs, rate, shift=0.0) -> PhaseDemand:
    # zero-weight components are dropped so an exponential always looks the same
    keep = [(c, w) for c, w in zip(counts, probs) if w > 0.0]
    return PhaseDemand(tuple(c for c, _ in keep), tuple(w for _, w in keep), rate, shift)


def to_phase_demand(d: FittedDistribution) -> PhaseDemand:
    if isinstance(d, MixedErlangKm1K):
        return _mixture((d.k - 1, d.k), (d.q, 1.0 - d.q), d.rate)
    if isinstance(d, MixedErlang1K):
        return _mixture((1, d.k), (d.q, 1.0 - d.q), d.rate)
    if isinstance(d, ShiftedExponential):
        return _mixture((1,), (1.0,), d.rate, d.shift)
    raise EvaluatorMismatchError(
        f"{type(d).__name__} is not a single-rate Erlang mixture")


@njit(cache=True)
def poisson_pmf(lam):
    """Poisson(lam) probabilities on 0..M with upper tail mass below 1e-12."""
    if lam <= 0.0:
        out = np.ones(1)
        return out
    hi = int(lam + 8.5 * math.sqrt(lam) + 12.0)
    out = np.empty(hi + 1)
    log_lam = math.log(lam)
    for k in range(hi + 1):
        out[k] = math.exp(-lam + k * log_lam - math.lgamma(k + 1.0))
    # drop the far tail and renormalise so mass is conserved exactly
    acc = 0.0
    last = hi
    for k in range(hi, -1, -1):
        acc += out[k]
        if acc > POISSON_TAIL:
            last = min(hi, k + 1)
            break
    out = out[: last + 1]
    return out / out.sum()


@njit(cache=True)
def _consume(prob, counts, cprobs):
    """Pre-demand count J -> (J - N)^+ ; also returns E[(N - J)^+]."""
    new = np.zeros(prob.shape[0])
    short = 0.0
    for j in range(prob.shape[0]):
        pj = prob[j]
        if pj == 0.0:
            continue
        for c in range(counts.shape[0]):
            n = counts[c]
            w = pj * cprobs[c]
            if n <= j:
                new[j - n] += w
            else:
                new[0] += w
                short += w * (n - j)
    return new, short


@njit(cache=True)
def _add_poisson(prob, lam):
    pois = poisson_pmf(lam)
    return np.convolve(prob, pois)


@njit(cache=True)
def _trim(prob):
    n = prob.shape[0]
    while n > 1 and prob[n - 1] < 1e-300:
        n -= 1
    return prob[:n]


@njit(cache=True)
def phase_before_last(on_hand, outstanding, counts, cprobs, rate, cap):
    """Pre-demand point count in period t+L-1 after the last outstanding order.

    Returns the post-demand count distribution of period t+L-1 and the summed
    expected phase shortfall over periods t..t+L-1.  ``on_hand`` and orders
    are already shift-adjusted.
    """
    prob = poisson_pmf(rate * on_hand)
    short_total = 0.0
    prob, short = _consume(prob, counts, cprobs)
    short_total += short
    for k in range(outstanding.shape[0]):
        prob = _trim(_add_poisson(prob, rate * outstanding[k]))
        if prob.shape[0] > cap:
            return prob, -1.0
        prob, short = _consume(prob, counts, cprobs)
        short_total += short
    return prob, short_total


@njit(cache=True)
def phase_met_table(prob, counts, cprobs):
    """H(m) = P{N <= J + m} for m = 0..max(N); H = 1 beyond."""
    nmax = 0
    for c in range(counts.shape[0]):
        nmax = max(nmax, counts[c])
    h = np.zeros(nmax + 1)
    for m in range(nmax + 1):
        s = 0.0
        for j in range(prob.shape[0]):
            pj = prob[j]
            if pj == 0.0:
                continue
            for c in range(counts.shape[0]):
                if counts[c] <= j + m:
                    s += pj * cprobs[c]
        h[m] = s
    return h


@njit(cache=True)
def phase_p3_given(h, rate, q):
    """P3 for candidate (shift-adjusted) order q given the table H."""
    pois = poisson_pmf(rate * q)
    nmax = h.shape[0] - 1
    total = 0.0
    mass = 0.0
    for k in range(min(pois.shape[0], nmax)):
        total += pois[k] * h[k]
        mass += pois[k]
    # H(m) = 1 for m >= nmax
    return total + max(1.0 - mass, 0.0) * h[nmax]


def _phase_inputs(state: PipelineState, pd: PhaseDemand, extra=()):
    s = pd.shift
    on_hand = max(state.on_hand - s, 0.0)
    orders = [q - s for q in state.outstanding] + [q - s for q in extra]
    if any(q < -1e-12 for q in orders):
        raise ShiftInfeasibleError("an order is smaller than the demand shift")
    out = np.maximum(np.asarray(orders[: len(state.outstanding)], dtype=float), 0.0)
    tail = [max(q, 0.0) for q in orders[len(state.outstanding):]]
    return on_hand, out, tail


def _phase_run(on_hand, out, pd: PhaseDemand):
    counts, cprobs = pd.arrays()
    prob, short = phase_before_last(on_hand, out, counts, cprobs, pd.rate, PHASE_CAP)
    if short < 0:
        raise TruncationError("phase-count support exceeds the configured cap")
    return prob, short, counts, cprobs


def exact_phase_p3(state: PipelineState, q: float, pd: PhaseDemand) -> float:
    """Exact P{end stock at t+L > 0} under single-rate phase demand."""
    if q < 0:
        raise ValueError("order quantity must be nonnegative")
    on_hand, out, (q_adj,) = _phase_inputs(state, pd, (q,))
    prob, _, counts, cprobs = _phase_run(on_hand, out, pd)
    h = phase_met_table(prob, counts, cprobs)
    return float(phase_p3_given(h, pd.rate, q_adj))


def exact_phase_expected_inventory(state: PipelineState, pd: PhaseDemand) -> float:
    """Exact E[stock at the end of period t+L-1] via the inventory balance."""
    on_hand, out, _ = _phase_inputs(state, pd)
    _, short, _, _ = _phase_run(on_hand, out, pd)
    L = state.lead_time
    mean_demand = pd.mean_phases / pd.rate
    value = on_hand + out.sum() - L * mean_demand + short / pd.rate
    return max(float(value), 0.0)
