"""Approximate non-stockout probability and projected-inventory evaluators.

The backward scheme tracks the conditional random variables

    Z_1 = X_1,
    Z_n = X_n + (Z_{n-1} - a_{n-1} | Z_{n-1} > a_{n-1}),

where a_n is the n-th threshold increment (candidate order, outstanding
orders newest first, on-hand stock last).  Only the first two moments of
each Z_n are kept; each is refitted to a mixed Erlang (cv <= 1) or a
hyperexponential (cv > 1) before its tail and overshoot are taken.  The
non-stockout probability is one minus the product of the tails.

The forward scheme instead propagates two moments of end-of-period stock
through the Lindley recursion with a fresh two-moment fit each period.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import special

from .distributions import (
    LOG_TAIL_FLOOR,
    FittedDistribution,
    mixture_moments,
    mixture_overshoot,
    mixture_partial_first,
    refit,
)


@dataclass(frozen=True)
class PipelineState:
    """On-hand stock at the start of a period plus the L-1 outstanding orders.

    ``outstanding`` is oldest first: the first entry arrives next period.
    """

    on_hand: float
    outstanding: tuple = ()

    def __post_init__(self):
        out = tuple(float(q) for q in self.outstanding)
        object.__setattr__(self, "outstanding", out)
        object.__setattr__(self, "on_hand", float(self.on_hand))
        if self.on_hand < 0 or any(q < 0 for q in out):
            raise ValueError("pipeline entries must be nonnegative")

    @property
    def lead_time(self) -> int:
        return len(self.outstanding) + 1

    @property
    def system_stock(self) -> float:
        return self.on_hand + sum(self.outstanding)

    def arrays(self):
        return self.on_hand, np.asarray(self.outstanding, dtype=float)


@dataclass
class RecursionWorkspace:
    """Diagnostic trace of one backward evaluation."""

    thresholds: list
    z_moments: list
    tail_probs: list


def thresholds(state: PipelineState, q: float) -> list:
    """Cumulative thresholds xi_1..xi_{L+1} for candidate order ``q``."""
    xi = [q]
    for order in reversed(state.outstanding):
        xi.append(xi[-1] + order)
    xi.append(xi[-1] + state.on_hand)
    return xi


# ---------------------------------------------------------------------------
# backward kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def backward_log_tail(on_hand, outstanding, q, dist, work):
    """Log of prod_n P{Z_n > a_n}; -inf once the product underflows."""
    n_out = outstanding.shape[0]
    mx, vx = mixture_moments(dist)
    lt, m1, m2 = mixture_overshoot(dist, q)
    log_prod = lt
    if log_prod < LOG_TAIL_FLOOR:
        return -np.inf
    for n in range(2, n_out + 3):
        if n <= n_out + 1:
            a = outstanding[n_out + 1 - n]
        else:
            a = on_hand
        zm = mx + m1
        zv = vx + m2 - m1 * m1
        if zv < 0.0:
            zv = 0.0
        if a <= 0.0:
            # overshoot of a positive variable over zero is the variable itself
            m1 = zm
            m2 = zv + zm * zm
            continue
        refit(zm, zv, work)
        lt, m1, m2 = mixture_overshoot(work, a)
        log_prod += lt
        if log_prod < LOG_TAIL_FLOOR:
            return -np.inf
    # a tail probability can round to just above one
    return min(log_prod, 0.0)


@njit(cache=True)
def backward_p3_kernel(on_hand, outstanding, q, dist, work):
    return 1.0 - math.exp(backward_log_tail(on_hand, outstanding, q, dist, work))


# below this log joint probability b_k * (1 - joint) equals b_k in double precision
PIL_LOG_CUT = -40.0

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_U = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


@njit(cache=True)
def _uniform_sum_overshoot(dist, b):
    """Tail and overshoot moments of W + S over b, W ~ U(0, b).

    The uniform is integrated by Gauss-Legendre, split where b - w crosses
    the shift of ``dist`` so each panel is smooth.
    """
    cut = b - dist[0]
    if cut <= 0.0 or cut >= b:
        edges = (0.0, b, b)
    else:
        edges = (0.0, cut, b)
    tail = 0.0
    s1 = 0.0
    s2 = 0.0
    for p in range(2):
        lo = edges[p]
        hi = edges[p + 1]
        if hi <= lo:
            continue
        span = hi - lo
        for i in range(_GL_U.shape[0]):
            w = lo + span * _GL_U[i]
            lt, m1, m2 = mixture_overshoot(dist, b - w)
            t = math.exp(lt)
            wt = _GL_W[i] * span / b
            tail += wt * t
            s1 += wt * t * m1
            s2 += wt * t * m2
    if tail <= 0.0:
        return -np.inf, 0.0, 0.0
    return math.log(tail), s1 / tail, s2 / tail


@njit(cache=True)
def backward_pil_kernel(on_hand, outstanding, dist, work):
    """Approximate E[end-of-period stock just before the new order arrives].

    Sum over slices k of b_k (1 - P{joint overshoot event}); the uniform
    position inside slice k is integrated exactly against the k-period
    demand sum, the rest of the chain uses the two-moment recursion.
    """
    n_out = outstanding.shape[0]
    L = n_out + 1
    if L == 1:
        return mixture_partial_first(dist, on_hand)[0]
    mx, vx = mixture_moments(dist)
    # slice widths: newest order first, on-hand last
    b = np.empty(L)
    for k in range(L - 1):
        b[k] = outstanding[n_out - 1 - k]
    b[L - 1] = on_hand
    total = 0.0
    sum_dist = np.empty(6)
    for k in range(1, L + 1):
        bk = b[k - 1]
        if bk <= 0.0:
            continue
        if k == 1:
            lt, m1, m2 = _uniform_sum_overshoot(dist, bk)
        else:
            refit(k * mx, k * vx, sum_dist)
            lt, m1, m2 = _uniform_sum_overshoot(sum_dist, bk)
        log_prod = lt
        for n in range(2, L + 2 - k):
            if log_prod < PIL_LOG_CUT:
                break
            a = b[k + n - 2]
            zm = mx + m1
            zv = vx + m2 - m1 * m1
            if zv < 0.0:
                zv = 0.0
            if a <= 0.0:
                m1 = zm
                m2 = zv + zm * zm
                continue
            refit(zm, zv, work)
            lt, m1, m2 = mixture_overshoot(work, a)
            log_prod += lt
        joint = 0.0 if log_prod < PIL_LOG_CUT else math.exp(log_prod)
        total += bk * (1.0 - joint)
    return total


def _packed(d: FittedDistribution) -> np.ndarray:
    if d.discrete:
        raise TypeError("approximate evaluators need a continuous distribution")
    return d.packed()


def backward_p3(state: PipelineState, q: float, d: FittedDistribution) -> float:
    """Two-moment backward approximation of P{end stock at t+L > 0}."""
    if q < 0:
        raise ValueError("order quantity must be nonnegative")
    on_hand, out = state.arrays()
    return float(backward_p3_kernel(on_hand, out, float(q), _packed(d), np.empty(6)))


def backward_trace(state: PipelineState, q: float, d: FittedDistribution) -> RecursionWorkspace:
    """Same recursion as :func:`backward_p3`, keeping every intermediate."""
    dist = _packed(d)
    work = np.empty(6)
    xi = thresholds(state, q)
    incr = np.diff([0.0] + xi)
    mx, vx = mixture_moments(dist)
    lt, m1, m2 = mixture_overshoot(dist, float(incr[0]))
    zs = [(float(mx), float(vx))]
    tails = [math.exp(lt)]
    for a in incr[1:]:
        zm, zv = mx + m1, max(vx + m2 - m1 * m1, 0.0)
        zs.append((float(zm), float(zv)))
        if a <= 0:
            m1, m2 = zm, zv + zm * zm
            tails.append(1.0)
            continue
        refit(zm, zv, work)
        lt, m1, m2 = mixture_overshoot(work, float(a))
        tails.append(math.exp(lt))
    return RecursionWorkspace(thresholds=xi, z_moments=zs, tail_probs=tails)


def pil_expected_inventory(state: PipelineState, d: FittedDistribution) -> float:
    """Approximate E[stock at the end of period t+L-1] (before Q_t lands).

    Discrete demand is routed to the exact convolution engine.
    """
    if d.discrete:
        from .exact_engines import exact_discrete_expected_inventory
        return exact_discrete_expected_inventory(state, d)
    on_hand, out = state.arrays()
    return float(backward_pil_kernel(on_hand, out, _packed(d), np.empty(6)))


# ---------------------------------------------------------------------------
# forward moment iteration
# ---------------------------------------------------------------------------

_QUAD_NODES = 40


_MAX_LAGUERRE_SHAPE = 100


@lru_cache(maxsize=512)
def _laguerre(phases: int):
    """Nodes and normalised weights for E[f(Y)], Y ~ Gamma(phases, 1).

    Generalised Gauss-Laguerre overflows for large shapes; there the rule is
    Gauss-Legendre in probability space mapped through the gamma quantile.
    """
    if phases <= _MAX_LAGUERRE_SHAPE:
        x, w = special.roots_genlaguerre(_QUAD_NODES, phases - 1.0)
    else:
        u, w = np.polynomial.legendre.leggauss(_QUAD_NODES)
        x = special.gammaincinv(phases, 0.5 * (u + 1.0))
    w = np.asarray(w, dtype=float)
    return np.asarray(x, dtype=float), w / w.sum()


@njit(cache=True)
def _partials(dist, cs):
    """P{D < c}, E[(c-D)^+], E[((c-D)^+)^2] at every c in ``cs``."""
    n = cs.shape[0]
    f = np.empty(n)
    g1 = np.empty(n)
    g2 = np.empty(n)
    for i in range(n):
        c = cs[i]
        lt, _, _ = mixture_overshoot(dist, max(c, 0.0))
        f[i] = 1.0 - math.exp(lt) if c > 0.0 else 0.0
        g1[i], g2[i] = mixture_partial_first(dist, c)
    return f, g1, g2


def _expect_over(fitted: np.ndarray, shift: float, dist: np.ndarray):
    """E[(F, g1, g2)(shift + V)] for V with the packed two-component law."""
    _, w, n1, r1, n2, r2 = fitted
    out = np.zeros(3)
    for weight, n, r in ((w, n1, r1), (1.0 - w, n2, r2)):
        if weight <= 0:
            continue
        x, wt = _laguerre(int(n))
        f, g1, g2 = _partials(dist, shift + x / r)
        out += weight * np.array([wt @ f, wt @ g1, wt @ g2])
    return out


def forward_p3(state: PipelineState, q: float, d: FittedDistribution) -> float:
    """Forward two-moment Lindley iteration for P{end stock at t+L > 0}.

    Stock at the end of each period is an atom at zero plus a positive part
    refitted on two moments; one more period of replenishment and demand is
    then integrated exactly over the demand law and by Gauss-Laguerre over
    the fitted positive part.
    """
    if q < 0:
        raise ValueError("order quantity must be nonnegative")
    dist = _packed(d)
    work = np.empty(6)
    c = np.array([state.on_hand])
    f, g1, g2 = _partials(dist, c)
    atom = 1.0 - f[0]          # P{stock == 0}
    e1, e2 = g1[0], g2[0]      # raw moments of stock
    orders = list(state.outstanding) + [float(q)]
    for step, order in enumerate(orders):
        f0, g10, g20 = (v[0] for v in _partials(dist, np.array([order])))
        if atom < 1.0 - 1e-12 and e1 > 0:
            pos = 1.0 - atom
            mv, m2v = e1 / pos, e2 / pos
            refit(mv, max(m2v - mv * mv, 0.0), work)
            ef, eg1, eg2 = _expect_over(work.copy(), order, dist)
        else:
            pos, ef, eg1, eg2 = 0.0, 0.0, 0.0, 0.0
        p_pos = atom * f0 + pos * ef
        if step == len(orders) - 1:
            return float(min(max(p_pos, 0.0), 1.0))
        e1 = atom * g10 + pos * eg1
        e2 = atom * g20 + pos * eg2
        atom = 1.0 - p_pos
    raise AssertionError("unreachable")
