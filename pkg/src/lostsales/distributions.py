"""Two-moment demand distributions and their conditional overshoot moments.

Every continuous family is a (possibly shifted) mixture of two Erlang
components, so one compact parameter vector serves all of them inside the
compiled kernels::

    (shift, weight, phases_1, rate_1, phases_2, rate_2)

with ``weight`` the probability of the first component.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy import special

from .errors import InfeasibleFitError, ZeroTailError

# Smallest cv a two-moment refit is allowed to target; caps Erlang phase counts.
CV_FLOOR = 1e-3
LOG_TAIL_FLOOR = math.log(1e-300)

# Half-width of the Poisson summation window, in standard deviations.
_WINDOW_SD = 8.5


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def erlang_overshoot(n, rate, a):
    """Log tail, E[Z-a | Z>a] and E[(Z-a)^2 | Z>a] for Z ~ Erlang(n, rate).

    Given Z > a the number of phases still running is n - i, where i is the
    number of Poisson(rate*a) events before a, restricted to i < n.
    """
    x = rate * a
    if x <= 0.0:
        return 0.0, n / rate, n * (n + 1.0) / (rate * rate)
    width = int(_WINDOW_SD * math.sqrt(x) + 10.0)
    # Poisson weights are summed outward from the mode so they never overflow
    peak = min(int(x), n - 1)
    hi = min(n - 1, peak + width)
    lo = max(0, peak - width)
    log_peak = -x - math.lgamma(peak + 1.0)
    if peak > 0:
        log_peak += peak * math.log(x)
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    w = 1.0
    for i in range(peak, lo - 1, -1):
        j = n - i
        s0 += w
        s1 += j * w
        s2 += j * (j + 1.0) * w
        w *= i / x
    w = 1.0
    for i in range(peak + 1, hi + 1):
        w *= x / i
        j = n - i
        s0 += w
        s1 += j * w
        s2 += j * (j + 1.0) * w
    return log_peak + math.log(s0), s1 / s0 / rate, s2 / s0 / (rate * rate)


@njit(cache=True)
def mixture_overshoot(dist, a):
    """Log tail and first two conditional overshoot moments over ``a``."""
    shift = dist[0]
    w = dist[1]
    n1 = int(dist[2])
    r1 = dist[3]
    n2 = int(dist[4])
    r2 = dist[5]
    if a <= shift:
        c = shift - a
        e1 = w * n1 / r1 + (1.0 - w) * n2 / r2
        e2 = w * n1 * (n1 + 1.0) / (r1 * r1) + (1.0 - w) * n2 * (n2 + 1.0) / (r2 * r2)
        return 0.0, c + e1, c * c + 2.0 * c * e1 + e2
    b = a - shift
    if w >= 1.0:
        return erlang_overshoot(n1, r1, b)
    if w <= 0.0:
        return erlang_overshoot(n2, r2, b)
    lt1, m11, m21 = erlang_overshoot(n1, r1, b)
    lt2, m12, m22 = erlang_overshoot(n2, r2, b)
    l1 = math.log(w) + lt1
    l2 = math.log(1.0 - w) + lt2
    top = max(l1, l2)
    e1 = math.exp(l1 - top)
    e2 = math.exp(l2 - top)
    tot = e1 + e2
    return (top + math.log(tot),
            (e1 * m11 + e2 * m12) / tot,
            (e1 * m21 + e2 * m22) / tot)


@njit(cache=True)
def mixture_moments(dist):
    """Mean and variance of a packed continuous distribution."""
    shift = dist[0]
    w = dist[1]
    n1 = dist[2]
    r1 = dist[3]
    n2 = dist[4]
    r2 = dist[5]
    e1 = w * n1 / r1 + (1.0 - w) * n2 / r2
    e2 = w * n1 * (n1 + 1.0) / (r1 * r1) + (1.0 - w) * n2 * (n2 + 1.0) / (r2 * r2)
    return shift + e1, e2 - e1 * e1


@njit(cache=True)
def refit(mean, var, out):
    """Two-moment fit into ``out``: mixed Erlang for cv <= 1, else H2."""
    c2 = var / (mean * mean)
    if c2 < CV_FLOOR * CV_FLOOR:
        c2 = CV_FLOOR * CV_FLOOR
    out[0] = 0.0
    if c2 <= 1.0:
        k = int(math.floor(1.0 / c2)) + 1
        disc = k * (1.0 + c2) - k * k * c2
        if disc < 0.0:
            disc = 0.0
        q = (k * c2 - math.sqrt(disc)) / (1.0 + c2)
        q = min(1.0, max(0.0, q))
        rate = (k - q) / mean
        out[1] = q
        out[2] = k - 1.0
        out[3] = rate
        out[4] = float(k)
        out[5] = rate
    else:
        root = math.sqrt((c2 - 0.5) / (c2 + 1.0))
        r1 = 2.0 / mean * (1.0 + root)
        r2 = 4.0 / mean - r1
        out[1] = r1 * (r2 * mean - 1.0) / (r2 - r1)
        out[2] = 1.0
        out[3] = r1
        out[4] = 1.0
        out[5] = r2


@njit(cache=True)
def mixture_survival(dist, x):
    """P{Z > x} for a packed distribution."""
    lt, _, _ = mixture_overshoot(dist, max(x, 0.0))
    return math.exp(lt)


@njit(cache=True)
def mixture_partial_first(dist, c):
    """E[(c - Z)^+] and E[((c - Z)^+)^2] via the overshoot identity."""
    mean, var = mixture_moments(dist)
    if c <= 0.0:
        return 0.0, 0.0
    lt, m1, m2 = mixture_overshoot(dist, c)
    tail = math.exp(lt)
    ex = tail * m1   # E[(Z-c)^+]
    ex2 = tail * m2  # E[((Z-c)^+)^2]
    # (c-Z)^+ = (c-Z) + (Z-c)^+ ; squares: (c-Z)^2 = ((c-Z)^+)^2 + ((Z-c)^+)^2
    first = c - mean + ex
    second = c * c - 2.0 * c * mean + var + mean * mean - ex2
    return first, max(second, 0.0)


# ---------------------------------------------------------------------------
# public types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DemandMoments:
    """First two moments of per-period demand."""

    mean: float
    cv: float

    def __post_init__(self):
        if not self.mean > 0:
            raise ValueError(f"mean must be positive, got {self.mean}")
        if not self.cv >= 0:
            raise ValueError(f"cv must be nonnegative, got {self.cv}")

    @property
    def variance(self) -> float:
        return (self.cv * self.mean) ** 2


class FittedDistribution:
    """Base class for the demand families."""

    family = "abstract"
    discrete = False

    def moments(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        return self.moments()[0]

    @property
    def cv(self) -> float:
        m, v = self.moments()
        return math.sqrt(v) / m

    def cdf(self, x):
        raise NotImplementedError

    def _inverse(self, u_branch, u_value):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        """Inverse-transform draws; every draw consumes exactly two uniforms.

        The first uniform picks the mixture branch, the second is inverted
        through that branch's CDF.  Single-branch families ignore the first.
        """
        n = 1 if size is None else int(size)
        u = rng.random((n, 2))
        out = self._inverse(u[:, 0], u[:, 1])
        return float(out[0]) if size is None else out

    def overshoot_moments(self, a: float) -> tuple[float, float, float]:
        raise NotImplementedError


class _ErlangMixture(FittedDistribution):
    """Shared machinery for the packed continuous families."""

    def packed(self) -> np.ndarray:
        raise NotImplementedError

    def moments(self):
        m, v = mixture_moments(self.packed())
        return float(m), float(v)

    def cdf(self, x):
        shift, w, n1, r1, n2, r2 = self.packed()
        y = np.maximum(np.asarray(x, dtype=float) - shift, 0.0)
        surv = w * special.gammaincc(n1, r1 * y) + (1.0 - w) * special.gammaincc(n2, r2 * y)
        out = np.where(np.asarray(x) <= shift, 0.0, 1.0 - surv)
        return float(out) if np.ndim(out) == 0 else out

    def _inverse(self, u_branch, u_value):
        shift, w, n1, r1, n2, r2 = self.packed()
        first = u_branch < w
        n = np.where(first, n1, n2)
        r = np.where(first, r1, r2)
        return shift + special.gammaincinv(n, u_value) / r

    def overshoot_moments(self, a):
        """(E[Z-a | Z>a], E[(Z-a)^2 | Z>a], P{Z>a}) for a >= 0."""
        if a < 0:
            raise ValueError("threshold must be nonnegative")
        lt, m1, m2 = mixture_overshoot(self.packed(), float(a))
        if lt < LOG_TAIL_FLOOR:
            raise ZeroTailError(f"P{{Z > {a}}} underflows")
        return float(m1), float(m2), math.exp(lt)


@dataclass(frozen=True)
class ShiftedExponential(_ErlangMixture):
    shift: float
    rate: float
    family = "SE"

    def __post_init__(self):
        if self.shift < 0 or not self.rate > 0:
            raise ValueError("shifted exponential needs shift >= 0 and rate > 0")

    def packed(self):
        return np.array([self.shift, 1.0, 1.0, self.rate, 1.0, self.rate])


@dataclass(frozen=True)
class MixedErlangKm1K(_ErlangMixture):
    """Erlang-(k-1) with probability q, Erlang-k otherwise, common rate."""

    k: int
    q: float
    rate: float
    family = "ME"

    def __post_init__(self):
        if self.k < 2 or not 0 <= self.q <= 1 or not self.rate > 0:
            raise ValueError("invalid mixed Erlang parameters")

    def packed(self):
        return np.array([0.0, self.q, self.k - 1.0, self.rate, float(self.k), self.rate])


@dataclass(frozen=True)
class MixedErlang1K(_ErlangMixture):
    """Exponential with probability q, Erlang-k otherwise, common rate."""

    k: int
    q: float
    rate: float
    family = "ME1K"

    def __post_init__(self):
        if self.k < 2 or not 0 <= self.q <= 1 or not self.rate > 0:
            raise ValueError("invalid mixed Erlang parameters")

    def packed(self):
        return np.array([0.0, self.q, 1.0, self.rate, float(self.k), self.rate])


@dataclass(frozen=True)
class Hyperexponential(_ErlangMixture):
    q: float
    rate1: float
    rate2: float
    family = "HY"

    def __post_init__(self):
        if not 0 <= self.q <= 1 or not self.rate1 > 0 or not self.rate2 > 0:
            raise ValueError("invalid hyperexponential parameters")

    def packed(self):
        return np.array([0.0, self.q, 1.0, self.rate1, 1.0, self.rate2])


@dataclass(frozen=True)
class DiscretePMF(FittedDistribution):
    """Demand on 0..N with the given probabilities."""

    probs: tuple
    family = "PMF"
    discrete = True
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0):
            raise ValueError("probabilities must be a nonempty nonnegative vector")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", tuple(float(v) for v in p))
        object.__setattr__(self, "_cum", np.cumsum(p))

    @property
    def pmf(self) -> np.ndarray:
        return np.asarray(self.probs)

    @property
    def support(self) -> np.ndarray:
        return np.arange(len(self.probs))

    @classmethod
    def poisson(cls, mean: float) -> "DiscretePMF":
        n = int(mean + 40 * math.sqrt(mean) + 40)
        pmf = np.exp(-mean + np.arange(n) * math.log(mean) - special.gammaln(np.arange(n) + 1))
        return cls._truncated(pmf)

    @classmethod
    def geometric(cls, mean: float) -> "DiscretePMF":
        """P{D=k} = (1-r) r^k on k >= 0 with r = mean/(1+mean)."""
        r = mean / (1.0 + mean)
        n = int(math.log(1e-14) / math.log(r)) + 2
        pmf = (1 - r) * r ** np.arange(n)
        return cls._truncated(pmf)

    @classmethod
    def _truncated(cls, pmf):
        cum = np.cumsum(pmf)
        last = int(np.searchsorted(cum, 1.0 - 1e-12)) + 1
        pmf = pmf[:last]
        return cls(tuple(pmf / pmf.sum()))

    def moments(self):
        k = self.support
        p = self.pmf
        m = float(k @ p)
        return m, float(((k - m) ** 2) @ p)

    def cdf(self, x):
        x = np.floor(np.asarray(x, dtype=float))
        idx = np.clip(x, -1, len(self.probs) - 1).astype(int)
        out = np.where(idx < 0, 0.0, self._cum[np.maximum(idx, 0)])
        return float(out) if np.ndim(out) == 0 else out

    def _inverse(self, u_branch, u_value):
        idx = np.searchsorted(self._cum, u_value, side="right")
        return np.minimum(idx, len(self.probs) - 1).astype(float)

    def overshoot_moments(self, a):
        if a < 0:
            raise ValueError("threshold must be nonnegative")
        k = self.support
        mask = k > a
        tail = float(self.pmf[mask].sum())
        if tail < 1e-300:
            raise ZeroTailError(f"P{{Z > {a}}} underflows")
        d = k[mask] - a
        w = self.pmf[mask] / tail
        return float(d @ w), float((d * d) @ w), tail


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def _fit_shifted_exponential(m: DemandMoments):
    if m.cv > 1:
        raise InfeasibleFitError("shifted exponential needs cv <= 1")
    return ShiftedExponential(shift=m.mean * (1.0 - m.cv), rate=1.0 / (m.cv * m.mean))


def _fit_km1k(m: DemandMoments):
    if m.cv > 1:
        raise InfeasibleFitError("Erlang-(k-1)/Erlang-k mixture needs cv <= 1")
    c2 = m.cv ** 2
    k = max(2, int(math.floor(1.0 / c2)) + 1)
    disc = max(k * (1 + c2) - k * k * c2, 0.0)
    q = min(1.0, max(0.0, (k * c2 - math.sqrt(disc)) / (1 + c2)))
    return MixedErlangKm1K(k=k, q=q, rate=(k - q) / m.mean)


def _fit_1k(m: DemandMoments):
    if m.cv < 1:
        raise InfeasibleFitError("exponential/Erlang-k mixture needs cv >= 1")
    c2 = m.cv ** 2
    # smallest k keeping the quadratic for q real
    bound = 2 * c2 + 2 * math.sqrt(max(c2 * c2 - 1.0, 0.0))
    k = max(2, math.ceil(bound - 1e-12))
    disc = max(k * k + 4 - 4 * k * c2, 0.0)
    q = (2 * k * c2 + k - 2 - math.sqrt(disc)) / (2 * (k - 1) * (1 + c2))
    q = min(1.0, max(0.0, q))
    return MixedErlang1K(k=k, q=q, rate=(q + k * (1 - q)) / m.mean)


def _fit_hyperexponential(m: DemandMoments):
    c2 = m.cv ** 2
    if c2 < 0.5:
        raise InfeasibleFitError("hyperexponential with gamma moments needs cv^2 >= 0.5")
    root = math.sqrt((c2 - 0.5) / (c2 + 1.0))
    r1 = 2.0 / m.mean * (1.0 + root)
    r2 = 4.0 / m.mean - r1
    if r2 <= 0:
        raise InfeasibleFitError("hyperexponential fit produced a nonpositive rate")
    if abs(r2 - r1) < 1e-15 * r1:
        return Hyperexponential(q=1.0, rate1=r1, rate2=r1)
    q = r1 * (r2 * m.mean - 1.0) / (r2 - r1)
    # at cv = 1 the weight is exactly 0 up to rounding
    return Hyperexponential(q=min(max(q, 0.0), 1.0), rate1=r1, rate2=r2)


_FITTERS = {
    "SE": _fit_shifted_exponential,
    "ME": _fit_km1k,
    "ME1K": _fit_1k,
    "HY": _fit_hyperexponential,
}

FAMILIES = tuple(_FITTERS)


def fit_two_moment(m: DemandMoments, family_hint: Optional[str] = None) -> FittedDistribution:
    """Match mean and cv with one of the continuous families.

    Without a hint: mixed Erlang-(k-1)/Erlang-k for cv <= 1, hyperexponential
    with gamma third moment above.
    """
    if m.cv == 0:
        raise InfeasibleFitError("degenerate demand (cv = 0) is not supported")
    if family_hint is None:
        family_hint = "ME" if m.cv <= 1 else "HY"
    try:
        fitter = _FITTERS[family_hint]
    except KeyError:
        raise ValueError(f"unknown family {family_hint!r}; expected one of {FAMILIES}") from None
    return fitter(m)


def moments(d: FittedDistribution) -> tuple[float, float]:
    return d.moments()


def cdf(d: FittedDistribution, x):
    return d.cdf(x)


def sample(d: FittedDistribution, stream: np.random.Generator, size: Optional[int] = None):
    return d.sample(stream, size)


def overshoot_moments(d: FittedDistribution, a: float):
    return d.overshoot_moments(a)
