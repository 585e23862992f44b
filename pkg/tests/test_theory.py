"""Tests for contraction bounds and empirical contraction statistics."""
import math

import pytest

from pnp.config import Method
from pnp.core import ImageTensor
from pnp.denoisers import orthogonal_residual_denoiser
from pnp.exceptions import DomainError, InvalidConstantsError, TheoryNotApplicable
from pnp.solvers import IterTrace
from pnp.theory import (
    averagedness_check,
    averagedness_margin,
    contraction_stats,
    drs_alpha_threshold,
    lipschitz_ratio,
    theory_drs,
    theory_fbs,
)

pytestmark = pytest.mark.unit


def trace_with(residuals):
    return IterTrace(method=Method.FBS, alpha=1.0, tol=1e-9, residuals=list(residuals))


class TestTheoryFbs:
    def test_reference_values(self):
        bounds = theory_fbs(1.0, 1.0, 0.5, 0.5)
        assert bounds.delta == pytest.approx(0.75)
        assert bounds.alpha_range == pytest.approx((1 / 3, 5 / 3))
        assert bounds.feasible
        assert bounds.contracts

    @pytest.mark.parametrize("alpha", [0.1, 0.5, 1.0, 1.9])
    def test_zero_eps_is_gradient_contraction(self, alpha):
        assert theory_fbs(0.5, 2.0, 0.0, alpha).delta == pytest.approx(max(abs(1 - alpha * 0.5), abs(1 - alpha * 2.0)))

    def test_existence_boundary(self):
        bounds = theory_fbs(1.0, 2.0, 2.0, 0.5)
        assert not bounds.feasible
        assert bounds.alpha_range is None
        assert theory_fbs(1.0, 2.0, 1.99, 0.5).feasible

    def test_equal_constants_always_feasible(self):
        assert theory_fbs(1.0, 1.0, 100.0, 1.0).feasible

    def test_to_dict(self):
        assert theory_fbs(1.0, 1.0, 0.5, 0.5).to_dict()["alpha_range"] == pytest.approx([1 / 3, 5 / 3])

    @pytest.mark.parametrize("mu,L,eps,alpha", [(2.0, 1.0, 0.5, 0.5), (1.0, 1.0, -0.1, 0.5), (1.0, 1.0, 0.5, 0.0)])
    def test_invalid_constants(self, mu, L, eps, alpha):
        with pytest.raises(InvalidConstantsError):
            theory_fbs(mu, L, eps, alpha)

    @pytest.mark.parametrize("mu,L", [(None, 1.0), (0.0, 1.0), (1.0, None)])
    def test_not_applicable(self, mu, L):
        with pytest.raises(TheoryNotApplicable):
            theory_fbs(mu, L, 0.5, 0.5)


class TestTheoryDrs:
    def test_reference_values(self):
        bounds = theory_drs(1.0, 0.5, 2.0)
        assert bounds.delta == pytest.approx(0.7)
        assert bounds.alpha_range[0] == pytest.approx(0.5)
        assert math.isinf(bounds.alpha_range[1])
        assert bounds.feasible

    def test_below_threshold(self):
        bounds = theory_drs(1.0, 0.5, 0.4)
        assert bounds.delta >= 1.0
        assert not bounds.feasible

    @pytest.mark.parametrize("alpha", [0.01, 1.0, 50.0])
    def test_zero_eps(self, alpha):
        bounds = theory_drs(2.0, 0.0, alpha)
        assert bounds.delta == pytest.approx(1 / (1 + 2.0 * alpha))
        assert bounds.feasible

    def test_eps_one_infeasible(self):
        for alpha in (0.1, 10.0, 1e6):
            bounds = theory_drs(1.0, 1.0, alpha)
            assert not bounds.feasible
            assert bounds.alpha_range is None
        assert drs_alpha_threshold(1.0, 1.0) is None

    @pytest.mark.parametrize("mu,eps", [(1.0, 0.5), (0.3, 0.9), (4.0, 0.1)])
    def test_delta_is_one_at_threshold(self, mu, eps):
        assert theory_drs(mu, eps, drs_alpha_threshold(mu, eps)).delta == pytest.approx(1.0, abs=1e-12)

    def test_not_applicable(self):
        with pytest.raises(TheoryNotApplicable):
            theory_drs(0.0, 0.5, 1.0)

    def test_invalid(self):
        with pytest.raises(InvalidConstantsError):
            theory_drs(1.0, 0.5, -1.0)


class TestContractionStats:
    def test_geometric_sequence(self):
        stats = contraction_stats(trace_with([0.8 ** k for k in range(30)]))
        assert stats.geometric_mean == pytest.approx(0.8)
        assert len(stats.ratios) == 29
        assert not stats.degenerate

    def test_geometric_not_arithmetic(self):
        stats = contraction_stats(trace_with([1.0, 0.5, 0.5]))
        assert stats.geometric_mean == pytest.approx(math.sqrt(0.5))

    def test_converged_at_start_is_degenerate(self):
        stats = contraction_stats(trace_with([0.0, 0.0, 0.0]))
        assert stats.degenerate
        assert stats.ratios == []
        assert stats.geometric_mean is None

    def test_vanishing_denominators_excluded(self):
        stats = contraction_stats(trace_with([1.0, 0.0, 0.0]))
        assert stats.ratios == [0.0]
        assert stats.excluded == 1
        assert stats.geometric_mean == 0.0
        assert stats.to_dict()["excluded"] == 1

    def test_admm_skips_warm_up_step(self):
        trace = IterTrace(method=Method.ADMM, alpha=1.0, tol=1e-9, residuals=[1.0, 5.0, 2.5, 1.25])
        assert contraction_stats(trace).ratios == [0.5, 0.5]

    def test_admm_zero_warm_up_step_is_not_degenerate(self):
        trace = IterTrace(method=Method.ADMM, alpha=1.0, tol=1e-9, residuals=[0.0, 1.0, 0.5, 0.25])
        stats = contraction_stats(trace)
        assert not stats.degenerate
        assert stats.ratios == [0.5, 0.5]

    def test_too_few_iterates(self):
        with pytest.raises(DomainError):
            contraction_stats(trace_with([1.0]))


class TestAveragedness:
    def test_identity_is_averaged_for_any_theta(self, pair_factory):
        pairs = pair_factory((1, 3, 3), 100)
        for theta in (0.1, 0.5, 0.9):
            assert averagedness_check(lambda x: x, theta, pairs) <= 1e-12

    def test_margin_formula(self):
        x, y = ImageTensor.full(1.0, 1, 1, 1), ImageTensor.zeros(1, 1, 1)
        # T = -I: 1 + 0 + 1
        assert averagedness_margin(-x, -y, x, y, 0.5) == pytest.approx(2.0)

    def test_theta_range(self, pair_factory):
        with pytest.raises(DomainError):
            averagedness_check(lambda x: x, 1.0, pair_factory((1, 2, 2), 3))

    def test_empty_pairs(self):
        with pytest.raises(DomainError):
            averagedness_check(lambda x: x, 0.5, [])

    def test_lipschitz_ratio(self, pair_factory):
        d = orthogonal_residual_denoiser(0.5)
        assert lipschitz_ratio(d.residual, pair_factory((1, 3, 3), 100)) == pytest.approx(0.5)
        assert lipschitz_ratio(lambda x: x * 3.0, [(ImageTensor.zeros(1, 1, 1),) * 2]) == 0.0
