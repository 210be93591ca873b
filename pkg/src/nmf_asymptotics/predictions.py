"""Asymptotic predictions read off a solved fixed point."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import QuadratureScheme, interval_coverage
from .fixedpoint import _ChannelAt, _penalty_at_eta
from .priors import GaussianSpikeSlab, ThreePointDiscrete
from .prox import eta_inverse, prox_state

log = logging.getLogger(__name__)

MSE_IDENTITY_TOL = 1e-8


@dataclass
class Predictions:
    mse: float
    neg_log_z_per_p: float
    coverage: dict
    zeta_list: list
    corrected_coverage: dict = field(default_factory=dict)
    mse_channel: float = float("nan")
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {"mse": self.mse, "mse_channel": self.mse_channel,
                "neg_log_z_per_p": self.neg_log_z_per_p,
                "coverage": {str(k): v for k, v in self.coverage.items()},
                "corrected_coverage": {str(k): v for k, v in self.corrected_coverage.items()},
                "zeta_list": list(self.zeta_list), "warnings": list(self.warnings)}


def _scheme(scheme):
    return QuadratureScheme() if scheme is None else scheme


def _require(sol):
    if not sol.converged:
        raise ValueError("predictions need a converged fixed point")


def channel_mse(problem, sol, scheme=None):
    """``E (eta(tau* Z + B, kappa*) - B)^2`` by quadrature."""
    ch = _ChannelAt(problem, _scheme(scheme), sol.b_star, sol.tau_star)
    return ch.mean((ch.eta - ch.B) ** 2)


def predict_mse(problem, sol, scheme=None):
    """``alpha (tau*^2 - sigma^2)``, cross-checked against the channel expectation."""
    _require(sol)
    mse = problem.alpha * (sol.tau_star ** 2 - problem.sigma2)
    other = channel_mse(problem, sol, scheme)
    # the two differ by alpha * (tau^2 - tau_next^2), i.e. the solver residual
    slack = max(MSE_IDENTITY_TOL, 4 * problem.alpha * sol.tau_star * abs(sol.residual_tau))
    if abs(mse - other) > slack:
        raise AssertionError(f"MSE identity violated: {mse!r} vs {other!r}")
    return float(mse)


def predict_neg_log_z(problem, sol, scheme=None):
    """Limit of ``-(1/p) log Z^NMF``.

    The denoiser inside the expectation is evaluated at ``kappa* = tau* sigma^2 / b*``.
    """
    _require(sol)
    ch = _ChannelAt(problem, _scheme(scheme), sol.b_star, sol.tau_star)
    d = 1.0 / problem.sigma2
    c0 = float(problem.prior.moments(0.0, d)[0])
    e_f = ch.mean(_penalty_at_eta(problem, ch.state))
    return problem.alpha * sol.b_star ** 2 / (2 * problem.sigma2) + e_f - c0


def has_atoms(prior):
    return isinstance(prior, ThreePointDiscrete) or (
        isinstance(prior, GaussianSpikeSlab) and prior.q > 0)


def _nmf_bounds(problem, sol, zeta):
    prior, s2 = problem.prior, problem.sigma2
    d = 1.0 / s2

    def bound(level):
        def f(b, z):
            st = prox_state(prior, s2, sol.tau_star * z + b, sol.kappa_star, check=False)
            return prior.quantile(st.gamma, d, level)
        return f

    return bound(zeta / 2), bound(1 - zeta / 2)


def predict_coverage(problem, sol, zeta, scheme=None):
    """Limit of the average coverage of the NMF credible intervals at level 1 - zeta.

    Intervals are closed; the Z integral is done exactly per B node.
    """
    _require(sol)
    if not 0 < zeta < 1:
        raise ValueError("zeta must lie in (0, 1)")
    if has_atoms(problem.prior):
        log.warning("prior quantile function is discontinuous; coverage limit may not apply")
    lower, upper = _nmf_bounds(problem, sol, zeta)
    return interval_coverage(problem.truth, _scheme(scheme), lower, upper)


def conditional_quantile(problem, sol, t, x):
    """``t``-quantile of B given ``eta(tau* Z + B, kappa*) = x`` (vectorised in x).

    Inverting the denoiser gives ``s = tau* Z + B``; the posterior of B given
    s is the ``(s / tau*^2, 1 / tau*^2)`` tilt of the truth.
    """
    _require(sol)
    if not np.all((np.asarray(t) > 0) & (np.asarray(t) < 1)):
        raise ValueError("quantile level must lie in (0, 1)")
    s = np.asarray(eta_inverse(problem.prior, problem.sigma2, x, sol.kappa_star))
    prec = 1.0 / sol.tau_star ** 2
    q = problem.truth.quantile(s * prec, prec, t)
    return float(q) if np.ndim(q) == 0 else q


def corrected_interval(problem, sol, zeta, x):
    lo = conditional_quantile(problem, sol, zeta / 2, x)
    hi = conditional_quantile(problem, sol, 1 - zeta / 2, x)
    return lo, hi


def predict_corrected_coverage(problem, sol, zeta, scheme=None):
    """Population coverage of the corrected intervals under the limit law."""
    _require(sol)
    prec = 1.0 / sol.tau_star ** 2
    truth = problem.truth

    def bound(level):
        return lambda b, z: truth.quantile((sol.tau_star * z + b) * prec, prec, level)

    return interval_coverage(truth, _scheme(scheme), bound(zeta / 2), bound(1 - zeta / 2))


def predict(problem, sol, scheme=None, zetas=(0.05,)):
    scheme = _scheme(scheme)
    warnings = []
    if has_atoms(problem.prior):
        warnings.append("prior has atoms: the coverage limit assumes a continuous quantile function")
    cov = {float(z): predict_coverage(problem, sol, z, scheme) for z in zetas}
    corr = {float(z): predict_corrected_coverage(problem, sol, z, scheme) for z in zetas}
    return Predictions(
        mse=predict_mse(problem, sol, scheme),
        neg_log_z_per_p=predict_neg_log_z(problem, sol, scheme),
        coverage=cov, zeta_list=[float(z) for z in zetas], corrected_coverage=corr,
        mse_channel=channel_mse(problem, sol, scheme), warnings=warnings)
