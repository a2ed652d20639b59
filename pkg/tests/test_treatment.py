import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lotta.data import SupportBounds
from lotta.treatment import (
    CutoffPrior,
    TreatmentParams,
    TreatmentPriorSpec,
    check_treatment_params,
    coefficient_bounds,
    derived_intercepts,
    log_lik_treatment,
    log_prior_treatment,
    sample_treatment_params,
    treatment_prob,
)

from .conftest import make_dataset


class TestCoefficientBounds:
    def test_a2l_interval(self):
        lo, hi = coefficient_bounds(0.5, 0.2, 0.1, 0.1, 0.0, 1.0, ())
        assert lo == 0.0
        assert abs(hi - (1 - 0.2) / (0.5 - 0.1 - 0.0)) < 1e-15
        assert abs(hi - 2.0) < 1e-12

    def test_b2l_interval(self):
        lo, hi = coefficient_bounds(0.5, 0.2, 0.1, 0.1, 0.0, 1.0, (1.0,))
        assert lo == 0.0  # -a2l * I1 with I1 = 0
        assert abs(hi - (1 - 0.2 - 1.0 * 0.4)) < 1e-15
        assert abs(hi - 0.4) < 1e-12

    def test_chained_sampling_always_valid(self, unit_priors, rng):
        cols = sample_treatment_params(unit_priors, rng, size=10_000)
        c, j, k_l, k_r = cols["c"], cols["j"], cols["k_l"], cols["k_r"]
        # exact structural checks on every draw
        left_edge = cols["a2l"] * (c - k_l) + cols["b2l"]
        inner_edge = cols["a1l"] * (c - k_l) + cols["b1l"]
        assert np.max(np.abs(left_edge - inner_edge)) < 1e-10
        right_edge = cols["a1r"] * (c + k_r) + cols["b1r"]
        outer_edge = cols["a2r"] * (c + k_r) + cols["b2r"]
        assert np.max(np.abs(right_edge - outer_edge)) < 1e-10
        jump = (cols["a1r"] * c + cols["b1r"]) - (cols["a1l"] * c + cols["b1l"])
        assert np.max(np.abs(jump - j)) < 1e-10
        for name in ("a2l", "a1l", "a1r", "a2r"):
            assert cols[name].min() >= 0.0
        assert np.min(cols["a2l"] * 0.0 + cols["b2l"]) >= 0.0  # p(I1) >= 0
        assert np.max(cols["a2r"] * 1.0 + cols["b2r"]) <= 1.0 + 1e-12  # p(I2) <= 1

    def test_grid_scan_on_subsample(self, unit_priors, rng):
        grid = np.linspace(0.0, 1.0, 1000)
        for _ in range(200):
            p = sample_treatment_params(unit_priors, rng)
            vals = treatment_prob(p, grid)
            assert vals.min() >= -1e-12 and vals.max() <= 1 + 1e-12
            assert np.all(np.diff(vals) >= -1e-12)
            assert check_treatment_params(p, 0.0, 1.0, eta=unit_priors.eta)

    def test_infeasible_partial_assignment_signalled(self):
        # b2l pushed to its max leaves a degenerate interval for a1l
        c, j, k_l, k_r = 0.5, 0.2, 0.1, 0.1
        _, b2l_hi = coefficient_bounds(c, j, k_l, k_r, 0.0, 1.0, (1.0,))
        lo, hi = coefficient_bounds(c, j, k_l, k_r, 0.0, 1.0, (1.0, b2l_hi + 0.05))
        assert hi < lo or hi < 0

    def test_all_fixed_raises(self):
        with pytest.raises(ValueError):
            coefficient_bounds(0.5, 0.2, 0.1, 0.1, 0.0, 1.0, (0.0,) * 5)


class TestTreatmentProb:
    def test_step_function(self):
        p = TreatmentParams.from_free(c=0.5, j=0.5, k_l=0.1, k_r=0.1,
                                      a2l=0.0, b2l=0.1, a1l=0.0, a1r=0.0, a2r=0.0)
        assert p.b1l == 0.1
        xs = np.array([0.0, 0.3, 0.49999, 0.5, 0.7, 1.0])
        vals = treatment_prob(p, xs)
        assert np.allclose(vals[:3], 0.1)
        assert np.allclose(vals[3:], 0.6)

    def test_continuity_at_window_edge(self, unit_priors, rng):
        p = sample_treatment_params(unit_priors, rng)
        edge = p.c - p.k_l
        from_outer = p.a2l * edge + p.b2l
        from_inner = p.a1l * edge + p.b1l
        assert abs(from_outer - from_inner) < 1e-12
        assert abs(treatment_prob(p, edge) - from_inner) < 1e-12

    def test_right_continuous_at_cutoff(self, unit_priors, rng):
        p = sample_treatment_params(unit_priors, rng)
        assert abs(treatment_prob(p, p.c) - (p.a1r * p.c + p.b1r)) < 1e-15

    def test_outside_support_rejected(self, unit_priors, rng):
        p = sample_treatment_params(unit_priors, rng)
        with pytest.raises(ValueError):
            treatment_prob(p, 1.5, support=(0.0, 1.0))


class TestLogPrior:
    def test_monotonicity_violation_is_minus_inf(self, unit_priors):
        p = TreatmentParams(c=0.5, j=0.3, k_l=0.1, k_r=0.1, a2l=-0.1, b2l=0.2,
                            a1l=0.0, b1l=0.18, a1r=0.0, b1r=0.48, a2r=0.0, b2r=0.48)
        assert log_prior_treatment(p, unit_priors) == -math.inf

    def test_jump_below_eta_is_minus_inf(self, unit_priors):
        p = TreatmentParams.from_free(c=0.5, j=unit_priors.eta - 1e-6, k_l=0.1, k_r=0.1,
                                      a2l=0.0, b2l=0.1, a1l=0.0, a1r=0.0, a2r=0.0)
        assert log_prior_treatment(p, unit_priors) == -math.inf

    def test_cutoff_outside_prior_is_minus_inf(self, unit_priors):
        p = TreatmentParams.from_free(c=0.1, j=0.3, k_l=0.01, k_r=0.01,
                                      a2l=0.0, b2l=0.1, a1l=0.0, a1r=0.0, a2r=0.0)
        assert log_prior_treatment(p, unit_priors) == -math.inf

    def test_density_matches_product_of_interval_lengths(self, unit_priors, rng):
        # independent recomputation of each conditional-uniform normalizer
        sb = unit_priors.support_bounds
        for _ in range(50):
            p = sample_treatment_params(unit_priors, rng)
            expected = -math.log(unit_priors.cutoff_prior.hi - unit_priors.cutoff_prior.lo)
            expected -= math.log(1.0 - unit_priors.eta)
            expected -= math.log((p.c - sb.l_n) - sb.d_x)
            expected -= math.log((sb.u_n - p.c) - sb.d_x)
            fixed = []
            for value in (p.a2l, p.b2l, p.a1l, p.a1r, p.a2r):
                lo, hi = coefficient_bounds(p.c, p.j, p.k_l, p.k_r, sb.lo, sb.hi, fixed)
                expected -= math.log(hi - lo)
                fixed.append(value)
            got = log_prior_treatment(p, unit_priors)
            assert math.isfinite(got)
            assert abs(got - expected) < 1e-9

    def test_finite_iff_validator_accepts(self, unit_priors, rng):
        sb = unit_priors.support_bounds
        for _ in range(100):
            p = sample_treatment_params(unit_priors, rng)
            # random perturbation of one stored coefficient
            field = rng.choice(["a2l", "b2l", "a1l", "a1r", "a2r", "j", "k_l"])
            bumped = {**p.__dict__, field: getattr(p, field) + rng.normal(0, 0.3)}
            q = TreatmentParams(**bumped)
            finite = math.isfinite(log_prior_treatment(q, unit_priors))
            if finite:
                assert check_treatment_params(q, sb.lo, sb.hi, eta=unit_priors.eta, tol=1e-8)


class TestLogLik:
    def test_single_point(self):
        p = TreatmentParams.from_free(c=0.5, j=0.5, k_l=0.1, k_r=0.1,
                                      a2l=0.0, b2l=0.25, a1l=0.0, a1r=0.0, a2r=0.0)
        ds = make_dataset([0.2], [1.0], [0.0], support=(0.0, 1.0))
        assert abs(log_lik_treatment(p, ds) - math.log(0.25)) < 1e-12

    def test_perfect_prediction_is_zero(self):
        # p(x) == 1 wherever t == 1 contributes log(1 - 1e-12) per point
        p = TreatmentParams.from_free(c=0.5, j=1.0, k_l=0.1, k_r=0.1,
                                      a2l=0.0, b2l=0.0, a1l=0.0, a1r=0.0, a2r=0.0)
        ds = make_dataset([0.6, 0.9], [1.0, 1.0], [0.0, 0.0], support=(0.0, 1.0))
        assert abs(log_lik_treatment(p, ds)) < 1e-9

    def test_naive_summation_oracle(self, unit_priors, rng):
        p = sample_treatment_params(unit_priors, rng)
        x = rng.uniform(0, 1, 100)
        t = (rng.random(100) < 0.5).astype(float)
        ds = make_dataset(x, t, np.zeros(100), support=(0.0, 1.0))
        expected = 0.0
        for xi, ti in zip(x, t):
            pi = min(max(float(treatment_prob(p, xi)), 1e-12), 1 - 1e-12)
            expected += math.log(pi) if ti else math.log1p(-pi)
        assert abs(log_lik_treatment(p, ds) - expected) < 1e-9


class TestCutoffPrior:
    def test_uniform_moments(self):
        cp = CutoffPrior.uniform(0.2, 0.8)
        assert abs(cp.mean() - 0.5) < 1e-15
        assert abs(cp.var() - 0.36 / 12) < 1e-15
        assert abs(cp.log_pdf(0.5) - math.log(1 / 0.6)) < 1e-12
        assert cp.log_pdf(0.9) == -math.inf

    def test_scaled_beta(self):
        cp = CutoffPrior.scaled_beta(0.0, 2.0, 2.0, 4.0)
        assert abs(cp.mean() - 2.0 * (2 / 6)) < 1e-12
        from scipy import stats

        ref = stats.beta(2, 4, loc=0, scale=2).logpdf(0.7)
        assert abs(cp.log_pdf(0.7) - ref) < 1e-9

    def test_discrete_and_point_mass(self):
        cp = CutoffPrior.discrete([3.0, 1.0, 2.0])
        assert np.allclose(cp.points, [1.0, 2.0, 3.0])
        assert abs(cp.log_pdf(2.0) - math.log(1 / 3)) < 1e-12
        assert cp.log_pdf(2.5) == -math.inf
        pm = CutoffPrior.point_mass(350.0)
        assert pm.log_pdf(350.0) == 0.0

    def test_point_mass_mixture(self):
        pts = np.arange(300.0, 400.0)
        cp = CutoffPrior.point_mass_mixture(350.0, 0.9, pts)
        assert abs(math.exp(cp.log_pdf(350.0)) - 0.9) < 1e-12
        assert abs(math.exp(cp.log_pdf(301.0)) - 0.1 / 99) < 1e-12
        assert abs(cp.weights.sum() - 1.0) < 1e-12

    def test_invalid_weights_rejected(self):
        with pytest.raises(ValueError):
            CutoffPrior.discrete([1.0, 2.0], [0.5, 0.6])

    def test_sampling_matches_weights(self, rng):
        cp = CutoffPrior.discrete([0.0, 1.0], [0.25, 0.75])
        draws = cp.sample(rng, 20000)
        assert abs(np.mean(draws) - 0.75) < 0.02


class TestSpecValidation:
    def test_eta_range(self, unit_bounds):
        with pytest.raises(ValueError):
            TreatmentPriorSpec(cutoff_prior=CutoffPrior.uniform(0.2, 0.8),
                               support_bounds=unit_bounds, eta=1.0)

    def test_support_bounds_validation(self):
        with pytest.raises(Exception):
            SupportBounds(d_x=-1.0, l_n=0.1, u_n=0.9)
        with pytest.raises(Exception):
            SupportBounds(d_x=0.01, l_n=0.9, u_n=0.1)


@given(c=st.floats(0.25, 0.75), j=st.floats(0.2, 0.95),
       k_l=st.floats(0.02, 0.15), k_r=st.floats(0.02, 0.15),
       u=st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5))
@settings(max_examples=120, deadline=None)
def test_chained_feasibility_property(c, j, k_l, k_r, u):
    """Sampling each coefficient inside its bound keeps later bounds nonempty."""
    fixed = []
    for uk in u:
        lo, hi = coefficient_bounds(c, j, k_l, k_r, 0.0, 1.0, fixed)
        assert hi >= lo - 1e-12
        fixed.append(lo + uk * max(hi - lo, 0.0))
    b1l, b1r, b2r = derived_intercepts(c, j, k_l, k_r, *fixed)
    p = TreatmentParams(c, j, k_l, k_r, fixed[0], fixed[1], fixed[2], b1l,
                        fixed[3], b1r, fixed[4], b2r)
    assert check_treatment_params(p, 0.0, 1.0, tol=1e-9)
