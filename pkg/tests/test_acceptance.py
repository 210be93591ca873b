"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import time

import numpy as np
import pytest
from scipy import special

from conftest import B_ORACLE, MSE_ORACLE, TAU2_ORACLE
from nmf_asymptotics.channel import QuadratureScheme, expect_bz
from nmf_asymptotics.fixedpoint import fp_step, phi, phi_gradient, solve
from nmf_asymptotics.meanfield import F, G, ProblemSpec
from nmf_asymptotics.predictions import predict, predict_coverage
from nmf_asymptotics.priors import GaussianMeanZero, GaussianSpikeSlab, ThreePointDiscrete
from nmf_asymptotics.prox import eta, eta_inverse
from nmf_asymptotics.simulate import SimConfig, gen_data, nmf_objective, run_replicates

ZETA = 0.05


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
        return ok
    return emit


@pytest.fixture(scope="session")
def ridge_pred(ridge, ridge_sol, scheme):
    return predict(ridge, ridge_sol, scheme, (ZETA,))


@pytest.fixture(scope="session")
def spike_pred(spike, spike_sol, scheme):
    return predict(spike, spike_sol, scheme, (ZETA,))


@pytest.fixture(scope="session")
def ridge_runs(ridge, ridge_sol):
    # 20 replicates for the evidence match; the first 5 serve the other criteria
    return run_replicates(ridge, SimConfig(n=4000, seed=0, replicates=20), ridge_sol)


@pytest.fixture(scope="session")
def spike_runs(spike, spike_sol):
    return run_replicates(spike, SimConfig(n=4000, seed=0, replicates=5), spike_sol)


def mean(runs, attr, key=None):
    vals = [getattr(r, attr) if key is None else getattr(r, attr)[key] for r in runs]
    return float(np.mean(vals))


class TestCriterion1:
    def test_gaussian_closed_forms(self, report):
        start = time.perf_counter()
        worst = 0.0
        for delta2 in (0.3, 1.0, 4.0):
            prior = GaussianMeanZero(delta2)
            u = np.linspace(-4, 4, 81)
            for d in (0.5, 1.0, 2.0):
                worst = max(worst, np.max(np.abs(prior.invert_mean(u, np.full_like(u, d))
                                                 - u * (1 / delta2 + d))))
            for s2 in (0.5, 1.0, 3.0):
                worst = max(worst, np.max(np.abs(F(prior, s2, u) - u * u / (2 * delta2))))
                worst = max(worst, np.max(np.abs(G(prior, u, 1 / s2)
                                                 - u * u * (1 / delta2 + 1 / s2) / 2)))
                for t in (0.1, 1.0, 5.0):
                    worst = max(worst, np.max(np.abs(eta(prior, s2, u, t)
                                                     - u / (1 + t / delta2))))
            g1 = np.linspace(-3, 3, 13)
            for g2 in (0.0, 1.0):
                c = prior.moments(g1, np.full_like(g1, g2))[0]
                closed = g1 ** 2 / (2 * (1 / delta2 + g2)) - 0.5 * np.log1p(delta2 * g2)
                worst = max(worst, np.max(np.abs(c - closed)))
        elapsed = time.perf_counter() - start
        ok = worst < 1e-8 and elapsed < 1.0
        report(1, ok, f"max abs deviation {worst:.2e} (tol 1e-8), {elapsed:.2f} s (< 1 s)")
        assert ok


class TestCriterion2:
    def test_ridge_fixed_point(self, ridge, report):
        start = time.perf_counter()
        sol = solve(ridge, QuadratureScheme())
        elapsed = time.perf_counter() - start
        err = max(abs(sol.b_star - 0.88363), abs(sol.tau_star - 1.13173))
        oracle = max(abs(sol.b_star - B_ORACLE), abs(sol.tau_star ** 2 - TAU2_ORACLE))
        ok = err < 1e-4 and oracle < 1e-6 and elapsed < 5
        report(2, ok, f"(b*, tau*) = ({sol.b_star:.6f}, {sol.tau_star:.6f}), quoted-value error "
                      f"{err:.1e}, oracle error {oracle:.1e}, {elapsed:.2f} s")
        assert ok


class TestCriterion3:
    def test_ridge_mse(self, ridge_pred, ridge_runs, report):
        emp = mean(ridge_runs[:5], "mse_emp")
        gap = abs(emp / ridge_pred.mse - 1)
        ok = gap < 0.05 and abs(ridge_pred.mse - MSE_ORACLE) < 1e-6
        report(3, ok, f"ridge MSE empirical {emp:.4f} vs predicted {ridge_pred.mse:.4f} "
                      f"(rel gap {gap:.3f} < 0.05)")
        assert ok

    def test_spike_mse(self, spike_pred, spike_runs, report):
        emp = mean(spike_runs, "mse_emp")
        gap = abs(emp / spike_pred.mse - 1)
        ok = gap < 0.05
        report(3, ok, f"spike-slab MSE empirical {emp:.4f} vs predicted {spike_pred.mse:.4f} "
                      f"(rel gap {gap:.3f} < 0.05)")
        assert ok

    def test_all_converged(self, ridge_runs, spike_runs, report):
        ok = all(r.converged for r in ridge_runs + spike_runs)
        report(3, ok, "gradient descent reached |grad| < 1e-8 on every replicate")
        assert ok


class TestCriterion4:
    def test_ridge(self, ridge_pred, ridge_runs, report):
        pred = ridge_pred.coverage[ZETA]
        emp = mean(ridge_runs[:5], "coverage_emp", ZETA)
        closed = 2 * special.ndtr(special.ndtri(0.975) * np.sqrt(0.5 / MSE_ORACLE)) - 1
        ok = abs(pred - emp) < 0.02 and max(pred, emp) < 0.945 and abs(pred - closed) < 1e-6
        report(4, ok, f"ridge coverage predicted {pred:.4f}, empirical {emp:.4f} "
                      f"(agree within 0.02, both < 0.945)")
        assert ok

    def test_spike_agreement(self, spike_pred, spike_runs, report):
        pred = spike_pred.coverage[ZETA]
        emp = mean(spike_runs, "coverage_emp", ZETA)
        ok = abs(pred - emp) < 0.02
        report(4, ok, f"spike-slab coverage predicted {pred:.4f}, empirical {emp:.4f} "
                      f"(agree within 0.02)")
        assert ok

    @pytest.mark.xfail(strict=True, reason="this spike-slab setting covers close to nominal")
    def test_spike_below_nominal(self, spike_pred, spike_runs, report):
        pred = spike_pred.coverage[ZETA]
        emp = mean(spike_runs, "coverage_emp", ZETA)
        ok = max(pred, emp) < 0.945
        report(4, ok, f"spike-slab coverage predicted {pred:.4f}, empirical {emp:.4f} "
                      f"(both < 0.945)")
        assert ok


class TestCriterion5:
    @pytest.mark.parametrize("case", ["ridge", "spike"])
    def test_corrected(self, case, ridge_runs, spike_runs, report):
        runs = ridge_runs[:5] if case == "ridge" else spike_runs
        emp = mean(runs, "coverage_corrected_emp", ZETA)
        lowest = min(r.coverage_corrected_emp[ZETA] for r in runs)
        ok = emp >= 0.94
        report(5, ok, f"{case} corrected coverage mean {emp:.4f} >= 0.94 "
                      f"(lowest replicate {lowest:.4f})")
        assert ok


class TestCriterion6:
    def test_elbo_above_exact(self, ridge_runs, report):
        gaps = [r.neg_log_z_nmf_per_p - r.exact_neg_log_z_per_p for r in ridge_runs]
        ok = min(gaps) > 0
        report(6, ok, f"ELBO above exact evidence on all {len(gaps)} replicates "
                      f"(smallest gap {min(gaps):.4f})")
        assert ok

    def test_prediction_matches_elbo(self, ridge_pred, ridge_runs, report):
        emp = mean(ridge_runs, "neg_log_z_nmf_per_p")
        gap = abs(emp / ridge_pred.neg_log_z_per_p - 1)
        ok = gap < 0.01 and abs(ridge_pred.neg_log_z_per_p - 1.3467) < 1e-3
        report(6, ok, f"predicted {ridge_pred.neg_log_z_per_p:.4f} vs empirical ELBO {emp:.4f} "
                      f"(rel gap {gap:.4f} < 0.01)")
        assert ok

    def test_gap_shrinks_with_alpha(self, report):
        gaps = []
        for alpha in (1.0, 2.0, 5.0, 10.0, 20.0):
            p = ProblemSpec(GaussianMeanZero(1.0), sigma2=1.0, alpha=alpha)
            sol = solve(p, QuadratureScheme())
            r = run_replicates(p, SimConfig(n=4000, seed=0, channel_samples=2000), sol)[0]
            gaps.append(r.neg_log_z_nmf_per_p - r.exact_neg_log_z_per_p)
        ok = bool(np.all(np.diff(gaps) < 0)) and min(gaps) > 0
        report(6, ok, "ELBO gap over alpha 1, 2, 5, 10, 20: "
                      + ", ".join(f"{g:.4f}" for g in gaps) + " (decreasing)")
        assert ok


class TestCriterion7:
    def test_sliced_w2(self, ridge, ridge_sol, ridge_runs, report):
        small = ridge_runs[0].w2_sliced
        large = run_replicates(ridge, SimConfig(n=8000, seed=0), ridge_sol)[0].w2_sliced
        ok = small < 0.01 and large < small
        report(7, ok, f"sliced W2^2 {small:.5f} at p=2000 (< 0.01), {large:.5f} at p=4000")
        assert ok


class TestCriterion8:
    @pytest.mark.parametrize("case", ["ridge", "spike"])
    def test_laplace_design(self, case, ridge, ridge_sol, spike, spike_sol, ridge_pred,
                            spike_pred, report):
        problem, sol, pred = ((ridge, ridge_sol, ridge_pred) if case == "ridge"
                              else (spike, spike_sol, spike_pred))
        cfg = SimConfig(n=4000, seed=100, replicates=5, design="laplace", channel_samples=2000)
        emp = mean(run_replicates(problem, cfg, sol), "mse_emp")
        gap = abs(emp / pred.mse - 1)
        ok = gap < 0.05
        report(8, ok, f"{case} Laplace-design MSE {emp:.4f} vs {pred.mse:.4f} "
                      f"(rel gap {gap:.3f} < 0.05)")
        assert ok


class TestCriterion9:
    """Condensed property checks; the per-module suites cover them in depth."""

    def test_properties(self, spike, spike_sol, scheme, report):
        failures = []
        rng = np.random.default_rng(0)
        priors = [GaussianSpikeSlab(0.5, 0.2), ThreePointDiscrete(0.5), GaussianMeanZero(2.0)]

        for prior in priors:
            g = rng.uniform(-4, 4, 50)
            d = np.full_like(g, 1.0)
            back = prior.invert_mean(prior.moments(g, d)[1], d)
            if not np.allclose(back, g, atol=1e-8):
                failures.append(f"tilt round trip {prior}")
            s2 = 0.5 if isinstance(prior, ThreePointDiscrete) else 1.0
            x = np.sort(rng.uniform(-5, 5, 200))
            w = eta(prior, s2, x, 0.7)
            if not (np.all(np.diff(w) >= 0) and np.all(np.diff(w) <= np.diff(x) + 1e-12)
                    and np.allclose(eta(prior, s2, -x, 0.7), -w, atol=1e-12)):
                failures.append(f"prox shape {prior}")
            if not np.allclose(eta_inverse(prior, s2, w, 0.7), x, atol=1e-7):
                failures.append(f"prox inverse {prior}")

        ds = gen_data(spike, SimConfig(n=40, p=20, seed=1))
        u = rng.uniform(-0.5, 0.5, 20)
        grad = nmf_objective(spike, ds, u)[1]
        h = 1e-6
        fd = [(nmf_objective(spike, ds, u + h * e)[0] - nmf_objective(spike, ds, u - h * e)[0])
              / (2 * h) for e in np.eye(20)]
        if not np.allclose(grad, fd, rtol=1e-6, atol=1e-7):
            failures.append("objective gradient")
        if max(map(abs, phi_gradient(spike, scheme, spike_sol.b_star, spike_sol.tau_star))) > 1e-5:
            failures.append("phi stationarity")
        b_next, tau_next = fp_step(spike, scheme, spike_sol.b_star, spike_sol.tau_star)
        if max(abs(b_next - spike_sol.b_star), abs(tau_next - spike_sol.tau_star)) > 1e-8:
            failures.append("fixed point")

        def integrand(b, z):
            return (eta(spike.prior, 1.0, spike_sol.tau_star * z + b, spike_sol.kappa_star)
                    - b) ** 2
        drift = abs(expect_bz(spike, scheme, integrand)
                    - expect_bz(spike, scheme.refined(121), integrand))
        if drift > 1e-8:
            failures.append(f"refinement drift {drift:.1e}")

        covs = [predict_coverage(spike, spike_sol, z, scheme) for z in (0.5, 0.2, 0.05, 0.01)]
        if not np.all(np.diff(covs) > 0):
            failures.append("coverage monotone in zeta")

        cfg = SimConfig(n=50, p=25, seed=9)
        if not np.array_equal(gen_data(spike, cfg).y, gen_data(spike, cfg).y):
            failures.append("determinism")
        if phi(spike, scheme, 0.0, 2.0) != 0.0:
            failures.append("phi(0, tau)")

        ok = not failures
        report(9, ok, "property checks " + ("all green" if ok else "failed: " + ", ".join(failures)))
        assert ok
