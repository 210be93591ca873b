import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nmf_asymptotics.errors import OutOfSupport
from nmf_asymptotics.meanfield import (CERTIFICATES, G, F, F_prime, F_second, ProblemSpec,
                                       check_convexity, penalty_terms, spike_slab_easy_lhs,
                                       spike_slab_max_tilted_variance, sweep_grid)
from nmf_asymptotics.priors import (GaussianMeanZero, GaussianSpikeSlab, GridDensity,
                                    ThreePointDiscrete, laplace_grid)

SYMMETRIC = [GaussianMeanZero(1.0), GaussianSpikeSlab(0.5, 0.2), ThreePointDiscrete(0.8),
             laplace_grid(2.0)]


def interior(prior, k=101):
    lo, hi = prior.support()
    if np.isfinite(hi):
        return np.linspace(lo, hi, k + 2)[1:-1] * 0.98
    return np.linspace(-3, 3, k)


class TestG:
    @pytest.mark.parametrize("prior", SYMMETRIC)
    def test_zero_at_origin(self, prior):
        assert abs(G(prior, 0.0, 1.0)) < 1e-14

    def test_gaussian(self):
        np.testing.assert_allclose(G(GaussianMeanZero(1.0), 0.3, 1.0), 0.09, atol=1e-15)

    def test_three_point_boundary(self):
        prior = ThreePointDiscrete(0.8)
        np.testing.assert_allclose(G(prior, 1.0, 0.0), np.log(10), atol=1e-14)
        # the interior values approach the boundary KL
        np.testing.assert_allclose(G(prior, 1 - 1e-9, 0.0), np.log(10), atol=1e-6)

    def test_continuous_boundary_infinite(self):
        assert G(laplace_grid(2.0), 2.0, 1.0) == np.inf

    def test_outside_support(self):
        with pytest.raises(OutOfSupport):
            G(ThreePointDiscrete(0.5), 1.5, 1.0)

    @pytest.mark.parametrize("prior", SYMMETRIC)
    def test_nonnegative(self, prior):
        u = interior(prior)
        g = G(prior, u, 1.0)
        assert np.all(g[u != 0] > 0)

    def test_is_kl_divergence(self):
        # G(u, d) = KL(pi^(h, d) || pi^(0, d)) computed directly for the three-point law
        prior, u, d = ThreePointDiscrete(0.4), 0.35, 0.7
        x = np.array([-1.0, 0.0, 1.0])
        base = np.array([0.3, 0.4, 0.3]) * np.exp(-d * x * x / 2)
        base /= base.sum()
        from nmf_asymptotics.priors import invert_mean
        h = invert_mean(prior, u, d)
        tilt = base * np.exp(h * x)
        tilt /= tilt.sum()
        np.testing.assert_allclose(G(prior, u, d), np.sum(tilt * np.log(tilt / base)),
                                   atol=1e-13)


class TestF:
    def test_gaussian(self):
        prior = GaussianMeanZero(1.0)
        np.testing.assert_allclose([F(prior, 1.0, 0.3), F_prime(prior, 1.0, 0.3),
                                    F_second(prior, 1.0, 0.3)], [0.045, 0.3, 1.0], atol=1e-14)

    @pytest.mark.parametrize("prior", SYMMETRIC)
    def test_origin(self, prior):
        f, fp, _ = penalty_terms(prior, 1.0, 0.0)
        assert abs(f) < 1e-14 and abs(fp) < 1e-14

    @pytest.mark.parametrize("prior", SYMMETRIC)
    def test_derivatives_match_differences(self, prior):
        u = interior(prior, 41)
        u = u[np.abs(u) > 1e-3]
        h = 1e-5 * max(1.0, np.max(np.abs(u)))
        f_p, fp_p, _ = penalty_terms(prior, 1.0, u + h)
        f_m, fp_m, _ = penalty_terms(prior, 1.0, u - h)
        _, fp, fpp = penalty_terms(prior, 1.0, u)
        np.testing.assert_allclose((f_p - f_m) / (2 * h), fp, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose((fp_p - fp_m) / (2 * h), fpp, rtol=1e-6, atol=1e-7)

    def test_spike_slab_strictly_convex(self):
        prior = GaussianSpikeSlab(0.5, 0.2)
        grid, _ = sweep_grid(prior, 1.0)
        assert np.all(penalty_terms(prior, 1.0, grid)[2] > 0)

    def test_outside_open_support(self):
        with pytest.raises(OutOfSupport):
            F(ThreePointDiscrete(0.5), 1.0, 1.0)

    @given(u=st.floats(-3, 3), delta2=st.floats(0.1, 5), sigma2=st.floats(0.2, 5))
    def test_gaussian_closed_form(self, u, delta2, sigma2):
        f, fp, fpp = penalty_terms(GaussianMeanZero(delta2), sigma2, u)
        np.testing.assert_allclose([f, fp, fpp], [u * u / (2 * delta2), u / delta2, 1 / delta2],
                                   rtol=1e-10, atol=1e-12)


class TestCheckConvexity:
    def test_discrete_ghs(self):
        r = check_convexity(ThreePointDiscrete(0.8), 1.0)
        assert r.certified and r.certificate == "DiscreteGHS"

    def test_low_snr(self):
        r = check_convexity(ThreePointDiscrete(0.5), 2.0)
        assert r.certified and r.certificate == "LowSNR"

    def test_spike_slab_condition(self):
        r = check_convexity(GaussianSpikeSlab(0.5, 0.2), 1.0)
        assert r.certified and r.certificate == "SpikeSlabCondition"
        np.testing.assert_allclose(r.detail["easy_condition_lhs"], 0.532, atol=5e-4)

    def test_easy_condition_arithmetic(self):
        lhs = spike_slab_easy_lhs(0.5, 0.2, 1.0)
        np.testing.assert_allclose(lhs, (1 + 2 * np.sqrt(1.2)) * 0.2 / 1.2, rtol=1e-15)

    def test_nice_prior(self):
        assert check_convexity(laplace_grid(2.0), 0.5).certificate == "NicePrior"
        assert check_convexity(GaussianMeanZero(3.0), 0.1).certificate == "NicePrior"

    def test_numerical_sweep(self):
        r = check_convexity(ThreePointDiscrete(0.5), 0.5)
        assert r.certificate in ("NumericalSweep", "Failed")
        assert r.certified == (r.min_F_second > 0)

    def test_failed(self):
        r = check_convexity(GaussianSpikeSlab(0.9, 5.0), 1.0)
        assert not r.certified and r.certificate == "Failed"
        assert r.min_F_second <= 0

    def test_near_point_mass_spike_detected(self):
        # a quantile-only sweep collapses to 0 here and would miss the non-convexity
        r = check_convexity(GaussianSpikeSlab(0.999999, 1.0), 1.0)
        assert not r.certified

    def test_report_serialises(self):
        d = check_convexity(GaussianMeanZero(1.0), 1.0).to_dict()
        assert {"certified", "certificate", "min_F_second"} <= set(d)
        assert d["certificate"] in CERTIFICATES

    @pytest.mark.parametrize("q, delta2, sigma2", [(0.5, 0.2, 1.0), (0.3, 0.5, 1.0),
                                                   (0.2, 0.1, 0.5), (0.6, 0.3, 2.0)])
    def test_easy_condition_implies_full(self, q, delta2, sigma2):
        if spike_slab_easy_lhs(q, delta2, sigma2) < 1:
            assert spike_slab_max_tilted_variance(q, delta2, sigma2)[0] < sigma2

    @given(q=st.floats(0.01, 0.95), delta2=st.floats(0.05, 3.0), sigma2=st.floats(0.3, 3.0))
    def test_easy_condition_implies_full_property(self, q, delta2, sigma2):
        if spike_slab_easy_lhs(q, delta2, sigma2) < 1:
            assert spike_slab_max_tilted_variance(q, delta2, sigma2)[0] < sigma2

    @pytest.mark.parametrize("prior, sigma2", [(GaussianSpikeSlab(0.5, 0.2), 1.0),
                                               (ThreePointDiscrete(0.8), 1.0),
                                               (laplace_grid(2.0), 1.0)])
    def test_certified_means_positive_on_grid(self, prior, sigma2):
        r = check_convexity(prior, sigma2)
        grid, _ = sweep_grid(prior, sigma2)
        fpp = penalty_terms(prior, sigma2, grid)[2]
        assert r.certified and np.min(fpp) >= r.min_F_second > 0

    def test_non_nice_grid_falls_back(self):
        # double-well potential: V' changes sign
        prior = GridDensity.from_function(1.0, lambda x: -4 * x * x, 257)
        r = check_convexity(prior, 2.0)
        assert r.certificate == "LowSNR"


class TestProblemSpec:
    def test_defaults(self):
        p = ProblemSpec(GaussianMeanZero(2.0))
        assert p.truth == p.prior and p.s2 == 2.0 and p.sigma == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            ProblemSpec(GaussianMeanZero(1.0), sigma2=0.0)
        with pytest.raises(ValueError):
            ProblemSpec(GaussianMeanZero(1.0), alpha=-1.0)

    def test_replace(self):
        p = ProblemSpec(GaussianMeanZero(1.0)).replace(alpha=3.0)
        assert p.alpha == 3.0
