import itertools
import math

import numpy as np
import pytest

from conftest import mc_pipeline
from lostsales.distributions import (
    DemandMoments,
    DiscretePMF,
    MixedErlang1K,
    MixedErlangKm1K,
    ShiftedExponential,
    fit_two_moment,
)
from lostsales.errors import EvaluatorMismatchError, ShiftInfeasibleError, TruncationError
from lostsales.exact_engines import (
    PhaseDemand,
    exact_discrete_expected_inventory,
    exact_discrete_p3,
    exact_phase_expected_inventory,
    exact_phase_p3,
    phase_before_last,
    poisson_pmf,
    stock_distribution,
    to_phase_demand,
)
from lostsales.p3_recursion import PipelineState, backward_p3

BERNOULLI = DiscretePMF((0.5, 0.5))


def brute_force(state, q, pmf):
    """Enumerate all demand paths over L+1 periods."""
    p = np.asarray(pmf.probs)
    L = state.lead_time
    p3 = inv = 0.0
    for path in itertools.product(range(len(p)), repeat=L + 1):
        w = float(np.prod(p[list(path)]))
        s = max(state.on_hand - path[0], 0)
        for k, order in enumerate(state.outstanding):
            s = max(s + order - path[k + 1], 0)
        inv += w * s
        p3 += w * (s + q - path[L] > 0)
    return p3, inv


def truncated_poisson(mean, top):
    k = np.arange(top + 1)
    w = np.exp(-mean + k * math.log(mean) - np.array([math.lgamma(i + 1) for i in k]))
    return DiscretePMF(tuple(w / w.sum()))


class TestDiscrete:
    def test_bernoulli(self):
        assert exact_discrete_p3(PipelineState(1), 1, BERNOULLI) == pytest.approx(0.75)
        assert exact_discrete_expected_inventory(PipelineState(1), BERNOULLI) == pytest.approx(0.5)

    @pytest.mark.parametrize("L", [1, 2, 4])
    def test_empty_system(self, L):
        d = DiscretePMF((0.3, 0.4, 0.3))
        st = PipelineState(0, (0,) * (L - 1))
        assert exact_discrete_p3(st, 0, d) == pytest.approx(0.0, abs=1e-15)
        assert exact_discrete_expected_inventory(st, d) == 0.0
        # q = 1: no stock before, so P3 = P{D = 0}
        assert exact_discrete_p3(st, 1, d) == pytest.approx(0.3, abs=1e-15)

    def test_brute_force_poisson(self):
        d = truncated_poisson(5.0, 11)
        st = PipelineState(4, (6,))
        for q in (0, 3, 7):
            p3, inv = brute_force(st, q, d)
            assert exact_discrete_p3(st, q, d) == pytest.approx(p3, abs=1e-10)
        assert exact_discrete_expected_inventory(st, d) == pytest.approx(inv, abs=1e-10)

    def test_distribution_sums_to_one(self):
        prob = stock_distribution(PipelineState(9, (4, 0, 7)), DiscretePMF.geometric(5))
        assert prob.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(prob >= 0)

    def test_monte_carlo(self):
        d = DiscretePMF.poisson(5)
        st = PipelineState(3, (6, 2))
        _, _, e_mc, se = mc_pipeline(d, 3, (6, 2), 0, 2_000_000, seed=9)
        assert abs(exact_discrete_expected_inventory(st, d) - e_mc) < 3 * se

    def test_rejects_fractional_state(self):
        with pytest.raises(ValueError):
            exact_discrete_p3(PipelineState(1.5), 1, BERNOULLI)
        with pytest.raises(ValueError):
            exact_discrete_p3(PipelineState(1), 1.5, BERNOULLI)

    def test_support_cap(self):
        with pytest.raises(TruncationError):
            exact_discrete_p3(PipelineState(10 ** 7), 1, BERNOULLI)


class TestPhaseDemand:
    def test_exponential(self):
        pd = to_phase_demand(MixedErlangKm1K(2, 1.0, 0.2))
        assert pd.rate == 0.2 and pd.shift == 0.0
        assert (pd.counts, pd.probs) == ((1,), (1.0,))

    def test_km1k(self):
        pd = to_phase_demand(MixedErlangKm1K(3, 0.4, 1.1))
        assert pd.counts == (2, 3)
        assert pd.probs == pytest.approx((0.4, 0.6))

    def test_1k(self):
        pd = to_phase_demand(MixedErlang1K(9, 0.875, 2.0))
        assert pd.counts == (1, 9)

    def test_shifted(self):
        pd = to_phase_demand(ShiftedExponential(5, 0.2))
        assert (pd.counts, pd.probs, pd.rate, pd.shift) == ((1,), (1.0,), 0.2, 5)

    def test_hyperexponential_rejected(self):
        with pytest.raises(EvaluatorMismatchError):
            to_phase_demand(fit_two_moment(DemandMoments(5, 1.5), "HY"))

    def test_invalid(self):
        with pytest.raises(ValueError):
            PhaseDemand((1, 2), (0.5, 0.6), 1.0)


class TestPhaseEngine:
    def test_single_period_closed_form(self):
        pd = to_phase_demand(MixedErlangKm1K(2, 1.0, 0.2))
        assert exact_phase_p3(PipelineState(0), 5.0, pd) == pytest.approx(1 - math.exp(-1), abs=1e-8)

    def test_single_period_inventory(self):
        pd = to_phase_demand(MixedErlangKm1K(2, 1.0, 1.0))
        assert exact_phase_expected_inventory(PipelineState(2.0), pd) == pytest.approx(
            2 - 1 + math.exp(-2), abs=1e-8)

    def test_single_period_erlang_mixture(self):
        d = MixedErlangKm1K(4, 0.3, 0.8)
        pd = to_phase_demand(d)
        assert exact_phase_p3(PipelineState(0), 6.0, pd) == pytest.approx(float(d.cdf(6.0)), abs=1e-8)
        from scipy import integrate
        ref = integrate.quad(lambda x: float(d.cdf(x)), 0, 3.0)[0]
        assert exact_phase_expected_inventory(PipelineState(3.0), pd) == pytest.approx(ref, abs=1e-8)

    def test_zero_state(self):
        pd = to_phase_demand(MixedErlangKm1K(3, 0.5, 1.0))
        assert exact_phase_p3(PipelineState(0, (0, 0)), 0.0, pd) == pytest.approx(0.0, abs=1e-12)
        assert exact_phase_expected_inventory(PipelineState(0, (0, 0)), pd) == 0.0

    def test_reference_against_monte_carlo(self):
        d = MixedErlangKm1K(2, 1.0, 1.0)
        p_mc, se, _, _ = mc_pipeline(d, 1.0, (1.0,), 1.0, 10_000_000, seed=42)
        exact = exact_phase_p3(PipelineState(1, (1,)), 1.0, to_phase_demand(d))
        assert abs(exact - p_mc) < 3 * se
        # and the exact value grades the approximation
        assert abs(backward_p3(PipelineState(1, (1,)), 1.0, d) - exact) < 0.005

    def test_inventory_l3_against_monte_carlo(self):
        d = fit_two_moment(DemandMoments(4, 0.6))
        st = PipelineState(5, (3, 6))
        _, _, e_mc, se = mc_pipeline(d, 5, (3, 6), 0.0, 4_000_000, seed=4)
        assert abs(exact_phase_expected_inventory(st, to_phase_demand(d)) - e_mc) < 3 * se

    def test_mass_conservation(self):
        pd = to_phase_demand(MixedErlangKm1K(5, 0.3, 2.0))
        counts, cprobs = pd.arrays()
        prob, _ = phase_before_last(7.0, np.array([3.0, 9.0, 0.5, 4.0]), counts, cprobs, 2.0, 20000)
        assert prob.sum() == pytest.approx(1.0, abs=1e-10)
        for lam in (0.0, 0.3, 40.0, 900.0):
            assert poisson_pmf(lam).sum() == pytest.approx(1.0, abs=1e-12)

    def test_shift_equivalence(self):
        se = ShiftedExponential(3.0, 0.25)
        ex = MixedErlangKm1K(2, 1.0, 0.25)
        st = PipelineState(8.0, (5.0, 4.0))
        shifted = PipelineState(5.0, (2.0, 1.0))
        pse, pex = to_phase_demand(se), to_phase_demand(ex)
        assert exact_phase_p3(st, 6.0, pse) == exact_phase_p3(shifted, 3.0, pex)
        assert exact_phase_expected_inventory(st, pse) == exact_phase_expected_inventory(shifted, pex)

    def test_shift_infeasible(self):
        pd = to_phase_demand(ShiftedExponential(3.0, 0.25))
        with pytest.raises(ShiftInfeasibleError):
            exact_phase_p3(PipelineState(5, (1.0,)), 4.0, pd)
        with pytest.raises(ShiftInfeasibleError):
            exact_phase_p3(PipelineState(5, (4.0,)), 2.0, pd)

    def test_truncation_cap(self):
        pd = to_phase_demand(MixedErlangKm1K(2, 1.0, 1.0))
        with pytest.raises(TruncationError):
            exact_phase_expected_inventory(PipelineState(0.0, (30_000.0,)), pd)
