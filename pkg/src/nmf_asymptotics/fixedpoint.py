"""The scalar max-min potential phi(b, tau) and its fixed-point equations."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

from .channel import bz_grid, expect_bz
from .errors import NoConvergence, NonFinite, NonPositiveB, NotConvexCertified, VerificationFailed
from .meanfield import G, check_convexity
from .prox import prox_state

log = logging.getLogger(__name__)



@dataclass
class FixedPointSolution:
    b_star: float
    tau_star: float
    kappa_star: float
    phi_value: float
    residual_tau: float
    residual_b: float
    iterations: int
    converged: bool
    init_used: tuple
    multi_start_agreement: bool
    candidates: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["init_used"] = list(self.init_used)
        return d


def _require_certified(problem):
    report = check_convexity(problem.prior, problem.sigma2)
    if not report.certified:
        raise NotConvexCertified("F is not certified strongly convex for this problem")
    return report


@lru_cache(maxsize=64)
def _penalty_at_truth_nodes(prior, truth, sigma2, scheme):
    """F(B) at every B node of the tensor grid (boundary means allowed)."""
    B, _, _ = bz_grid(truth, scheme)
    vals, inv = np.unique(B, return_inverse=True)
    f = G(prior, vals, 1.0 / sigma2) - 0.5 * vals * vals / sigma2
    return np.asarray(f)[inv]


class _ChannelAt:
    """Denoiser outputs at all quadrature nodes for one (b, tau)."""

    def __init__(self, problem, scheme, b, tau):
        self.b, self.tau = float(b), float(tau)
        self.kappa = tau * problem.sigma2 / b
        self.B, self.Z, self.W = bz_grid(problem.truth, scheme)
        st = prox_state(problem.prior, problem.sigma2, tau * self.Z + self.B, self.kappa,
                        check=False)
        self.state = st
        self.eta = st.w
        s2 = problem.sigma2
        self.eta_prime = st.var / (st.var + self.kappa - self.kappa * st.var / s2)

    def mean(self, vals):
        vals = np.broadcast_to(vals, self.W.shape)
        if not np.all(np.isfinite(vals)):
            raise NonFinite("integrand is not finite at some quadrature node")
        return float(self.W @ vals)


def _penalty_at_eta(problem, st):
    d = 1.0 / problem.sigma2
    c0 = problem.prior.moments(0.0, d)[0]
    return st.w * st.gamma - st.cgf + c0 - 0.5 * st.w * st.w * d


def phi(problem, scheme, b, tau):
    """Potential phi(b, tau); the inner minimum is evaluated through the prox."""
    _require_certified(problem)
    return _phi(problem, scheme, b, tau)


def _phi(problem, scheme, b, tau):
    if b == 0:
        return 0.0
    if b < 0 or tau < problem.sigma:
        raise ValueError("phi is defined for b >= 0 and tau >= sigma")
    ch = _ChannelAt(problem, scheme, b, tau)
    s2 = problem.sigma2
    wbar = ch.eta - ch.B
    f_b = _penalty_at_truth_nodes(problem.prior, problem.truth, s2, scheme)
    inner = (b / (2 * tau)) * wbar ** 2 - b * ch.Z * wbar \
        + s2 * (_penalty_at_eta(problem, ch.state) - f_b)
    return 0.5 * b * (s2 / tau + tau) - 0.5 * b * b + ch.mean(inner) / problem.alpha


def phi_gradient(problem, scheme, b, tau):
    """(d phi / d b, d phi / d tau) by the envelope theorem."""
    ch = _ChannelAt(problem, scheme, b, tau)
    s2, a = problem.sigma2, problem.alpha
    wbar = ch.eta - ch.B
    e_w2 = ch.mean(wbar ** 2)
    d_b = 0.5 * (s2 / tau + tau) - b + ch.mean(wbar ** 2 / (2 * tau) - ch.Z * wbar) / a
    d_tau = 0.5 * b * (1 - s2 / tau ** 2) - b * e_w2 / (2 * a * tau ** 2)
    return d_b, d_tau


def fp_step(problem, scheme, b, tau):
    """One undamped application of the fixed-point map, derivative form."""
    if not b > 0 or tau < problem.sigma:
        raise ValueError("fp_step needs b > 0 and tau >= sigma")
    ch = _ChannelAt(problem, scheme, b, tau)
    tau_next = np.sqrt(problem.sigma2 + ch.mean((ch.eta - ch.B) ** 2) / problem.alpha)
    b_next = tau * (1 - ch.mean(ch.eta_prime) / problem.alpha)
    if not b_next > 0:
        raise NonPositiveB(f"b update left the valid region (b_next={b_next:.6g})")
    return float(b_next), float(tau_next)


def b_update_stein(problem, scheme, b, tau):
    """The b update written with ``E[Z eta]`` instead of ``E[eta']``."""
    ch = _ChannelAt(problem, scheme, b, tau)
    return float(tau - ch.mean(ch.Z * ch.eta) / problem.alpha)


def tau_cap(problem):
    return 100.0 * np.sqrt(problem.sigma2 + problem.s2 / problem.alpha)


def psi(problem, scheme, b):
    """``min_tau phi(b, tau)`` over ``[sigma, tau_cap]``; returns (value, argmin)."""
    if b == 0:
        return 0.0, problem.sigma
    lo, hi = problem.sigma, tau_cap(problem)
    res = optimize.minimize_scalar(lambda t: _phi(problem, scheme, b, t), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-10 * hi})
    at_lo = _phi(problem, scheme, b, lo)
    if at_lo <= res.fun:
        return float(at_lo), lo
    return float(res.fun), float(res.x)


def default_inits(sigma):
    return [(0.5, 2 * sigma), (1.0, sigma + 1), (2.0, 5 * sigma), (0.1, 1.1 * sigma)]


def _iterate(problem, scheme, init, damping, tol, max_iter):
    b, tau = init
    history = [(b, tau)]
    r_b = r_tau = np.inf
    for it in range(1, max_iter + 1):
        b_next, tau_next = fp_step(problem, scheme, b, tau)
        r_b, r_tau = b_next - b, tau_next - tau
        if max(abs(r_b), abs(r_tau)) < tol:
            return b, tau, r_b, r_tau, it, True, history
        b = b + damping * r_b
        tau = max(tau + damping * r_tau, problem.sigma)
        history.append((b, tau))
    return b, tau, r_b, r_tau, max_iter, False, history


def solve(problem, scheme, damping=0.5, tol=1e-9, max_iter=500, inits=None, threads=1):
    """Damped fixed-point iteration from several starts.

    Among converged starts the candidate maximising ``psi(b)`` is returned;
    ``multi_start_agreement`` records whether all converged starts coincide to
    1e-6.  Raises :class:`NoConvergence` (with every iterate) if none converge.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    _require_certified(problem)
    sigma = problem.sigma
    if inits is None:
        inits = default_inits(sigma)
    inits = [(float(b0), float(t0)) for b0, t0 in inits]

    def run(init):
        try:
            return _iterate(problem, scheme, init, damping, tol, max_iter)
        except (NonPositiveB, NoConvergence, NonFinite) as exc:
            log.info("fixed-point start %s failed: %s", init, exc)
            return exc

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            runs = list(pool.map(run, inits))
    else:
        runs = [run(i) for i in inits]

    converged = [(init, r) for init, r in zip(inits, runs)
                 if not isinstance(r, Exception) and r[5]]
    if not converged:
        diag = {str(init): (repr(r) if isinstance(r, Exception) else r[6])
                for init, r in zip(inits, runs)}
        raise NoConvergence("no start of the fixed-point iteration converged", diag)

    candidates = []
    for init, (b, tau, r_b, r_tau, it, _, _) in converged:
        candidates.append({"init": list(init), "b": b, "tau": tau, "iterations": it,
                           "psi": psi(problem, scheme, b)[0]})
    pts = np.array([[c["b"], c["tau"]] for c in candidates])
    agree = len(converged) == len(inits) and bool(np.all(np.abs(pts - pts[0]) < 1e-6))
    k = int(np.argmax([c["psi"] for c in candidates]))
    init, (b, tau, r_b, r_tau, it, _, _) = converged[k]
    if not agree:
        log.warning("fixed-point starts disagree; selected b=%.6g, tau=%.6g by max psi", b, tau)
    return FixedPointSolution(
        b_star=b, tau_star=tau, kappa_star=tau * problem.sigma2 / b,
        phi_value=_phi(problem, scheme, b, tau), residual_tau=r_tau, residual_b=r_b,
        iterations=it, converged=True, init_used=init, multi_start_agreement=agree,
        candidates=candidates)


def verify(problem, scheme, sol, grad_tol=1e-5, concavity_tol=1e-6, grid_points=21):
    """Check stationarity, concavity of psi near b*, and d phi/d tau < 0 at tau = sigma."""
    if not sol.converged:
        raise ValueError("verify needs a converged solution")
    b, tau = sol.b_star, sol.tau_star
    hb, ht = 1e-5 * max(1.0, b), 1e-5 * max(1.0, tau)
    d_b = (_phi(problem, scheme, b + hb, tau) - _phi(problem, scheme, b - hb, tau)) / (2 * hb)
    d_tau = (_phi(problem, scheme, b, tau + ht) - _phi(problem, scheme, b, tau - ht)) / (2 * ht)
    bs = np.linspace(0.5 * b, 1.5 * b, grid_points)
    psis = np.array([psi(problem, scheme, bb)[0] for bb in bs])
    second = psis[2:] - 2 * psis[1:-1] + psis[:-2]
    s = problem.sigma
    h = 1e-6 * s
    d_tau_sigma = (_phi(problem, scheme, b, s + h) - _phi(problem, scheme, b, s)) / h
    diag = {"dphi_db": d_b, "dphi_dtau": d_tau, "psi_grid": bs.tolist(),
            "psi_values": psis.tolist(), "max_second_difference": float(second.max()),
            "dphi_dtau_at_sigma": d_tau_sigma}
    failed = []
    if not (abs(d_b) < grad_tol and abs(d_tau) < grad_tol):
        failed.append("stationarity")
    if not second.max() <= concavity_tol:
        failed.append("psi_concavity")
    if not d_tau_sigma < 0:
        failed.append("dphi_dtau_at_sigma")
    if failed:
        raise VerificationFailed(failed, diag)
    return diag
