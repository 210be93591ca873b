"""Synthetic regression data, NMF objective minimisation and empirical metrics."""

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .channel import ChannelLaw, sample_channel
from .errors import NotGaussianPrior, OutOfSupport
from .priors import GaussianMeanZero, GaussianSpikeSlab
from .predictions import corrected_interval

log = logging.getLogger(__name__)

DESIGNS = ("gaussian", "laplace")
MAGIC = b"NMFD1"


@dataclass(frozen=True)
class SimConfig:
    """One simulation setting; ``p`` defaults to ``round(n / alpha)``."""

    n: int = 4000
    p: int = None
    seed: int = 0
    design: str = "gaussian"
    replicates: int = 1
    grad_tol: float = 1e-8
    max_iter: int = 5000
    zeta_list: tuple = (0.05,)
    channel_samples: int = 100_000
    projections: int = 128

    def __post_init__(self):
        if self.n < 1 or (self.p is not None and self.p < 1):
            raise ValueError("n and p must be positive")
        if self.design not in DESIGNS:
            raise ValueError(f"design must be one of {DESIGNS}")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if not self.grad_tol > 0 or self.max_iter < 1:
            raise ValueError("grad_tol and max_iter must be positive")

    def dims(self, problem):
        p = self.p if self.p is not None else max(1, int(round(self.n / problem.alpha)))
        return self.n, p

    def to_dict(self):
        return {"n": self.n, "p": self.p, "seed": self.seed, "design": self.design,
                "replicates": self.replicates, "grad_tol": self.grad_tol,
                "max_iter": self.max_iter, "zeta_list": list(self.zeta_list),
                "channel_samples": self.channel_samples, "projections": self.projections}


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    beta_star: np.ndarray
    epsilon: np.ndarray
    d: np.ndarray
    sigma2: float

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


def design_matrix(rng, n, p, design):
    """``n x p`` matrix with iid entries of variance ``1 / n``."""
    if design == "gaussian":
        return rng.standard_normal((n, p)) / np.sqrt(n)
    if design == "laplace":
        # Laplace with scale b has variance 2 b^2
        return rng.laplace(0.0, 1.0 / np.sqrt(2 * n), (n, p))
    raise ValueError(f"unknown design {design!r}")


def _dataset(X, beta, eps, sigma2):
    y = X @ beta + eps
    d = np.einsum("ij,ij->j", X, X) / sigma2
    return Dataset(X, y, beta, eps, d, float(sigma2))


def gen_data(problem, cfg, seed=None):
    """Draw ``X``, ``beta*`` from the truth and Gaussian noise; deterministic per seed."""
    n, p = cfg.dims(problem)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    X = design_matrix(rng, n, p, cfg.design)
    beta = problem.truth.sample(rng, p)
    eps = np.sqrt(problem.sigma2) * rng.standard_normal(n)
    return _dataset(X, beta, eps, problem.sigma2)


def save_dataset(ds, path):
    """Flat binary: magic, u32 n, u32 p, then X (row-major), y, beta* as little-endian f8."""
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", ds.n, ds.p))
        for a in (ds.X, ds.y, ds.beta_star):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_dataset(path, sigma2):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] != MAGIC:
        raise ValueError("not an NMFD1 file")
    n, p = struct.unpack("<II", raw[5:13])
    body = np.frombuffer(raw, dtype="<f8", offset=13)
    if body.size != n * p + n + p:
        raise ValueError("truncated NMFD1 file")
    X = body[:n * p].reshape(n, p).astype(float)
    y = body[n * p:n * p + n].astype(float)
    beta = body[n * p + n:].astype(float)
    ds = _dataset(X, beta, y - X @ beta, sigma2)
    ds.y = y
    return ds


def _penalty(prior, u, d, h0=None):
    """Per-coordinate ``G(u_i, d_i) - d_i u_i^2 / 2``, its gradient, and ``h``."""
    lo, hi = prior.support()
    if np.any((u <= lo) | (u >= hi)) or not np.all(np.isfinite(u)):
        raise OutOfSupport("iterate left the open support of the prior")
    h = prior.invert_mean(u, d, x0=h0)
    c_h = prior.moments(h, d)[0]
    c_0 = prior.moments(np.zeros_like(d), d)[0]
    return u * h - c_h + c_0 - 0.5 * d * u * u, h - d * u, h


def nmf_objective(problem, ds, u, h0=None, return_h=False):
    """``M_p(u)`` and its gradient."""
    u = np.asarray(u, float)
    r = ds.X @ u - ds.y
    pen, dpen, h = _penalty(problem.prior, u, ds.d, h0)
    value = 0.5 * (r @ r) / ds.sigma2 + pen.sum()
    grad = ds.X.T @ r / ds.sigma2 + dpen
    if return_h:
        return value, grad, h
    return value, grad


def _op_norm_sq(X, iters=60, seed=0):
    v = np.random.default_rng(seed).standard_normal(X.shape[1])
    lam = 0.0
    for _ in range(iters):
        w = X.T @ (X @ v)
        lam = np.linalg.norm(w)
        v = w / lam
    return lam


def lipschitz_estimate(problem, ds):
    """``||X||_op^2 / sigma2`` plus the largest penalty curvature on a probe grid."""
    prior = problem.prior
    lo, hi = prior.support()
    d_lo, d_hi = ds.d.min(), ds.d.max()
    probe = np.linspace(-1, 1, 201) * (0.999 * hi if np.isfinite(hi) else 3 * np.sqrt(problem.s2) + 1)
    curv = 0.0
    for d in (d_lo, d_hi):
        dd = np.full(probe.shape, d)
        var = prior.moments(prior.invert_mean(probe, dd), dd)[2]
        curv = max(curv, float(np.max(1.0 / var - d)))
    return _op_norm_sq(ds.X) / ds.sigma2 + curv


@dataclass
class OptResult:
    u: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    monotone: bool
    values: list = field(default_factory=list)


def minimize_nmf(problem, ds, grad_tol=1e-8, max_iter=5000, u0=None, step_rule="bb"):
    """Gradient descent with Armijo backtracking on ``M_p``.

    The first trial step is ``1 / L`` with ``L`` from :func:`lipschitz_estimate`.
    Later trial steps are the Barzilai-Borwein step ``s's / s'g`` (``step_rule="bb"``)
    or twice the last accepted step (``"double"``); either is then shrunk until
    the Armijo condition holds, so the objective never increases.  Stops when
    the Euclidean gradient norm drops below ``grad_tol``.
    """
    armijo, shrink = 1e-4, 0.5
    u = np.zeros(ds.p) if u0 is None else np.array(u0, float)
    val, g, h = nmf_objective(problem, ds, u, return_h=True)
    if step_rule not in ("bb", "double"):
        raise ValueError("step_rule must be 'bb' or 'double'")
    step0 = 1.0 / lipschitz_estimate(problem, ds)
    step = step0
    values, monotone = [val], True
    gn = float(np.linalg.norm(g))
    it = 0
    while gn >= grad_tol and it < max_iter:
        it += 1
        gg = gn * gn
        while True:
            cand = u - step * g
            try:
                v_new, g_new, h_new = nmf_objective(problem, ds, cand, h0=h, return_h=True)
            except OutOfSupport:
                v_new = np.inf
            if v_new <= val - armijo * step * gg:
                break
            # below the rounding floor of M_p, fall back to gradient-norm decrease
            if (abs(v_new - val) <= 64 * np.finfo(float).eps * abs(val)
                    and np.linalg.norm(g_new) < gn):
                break
            step *= shrink
            if step < 1e-300:
                break
        if not np.isfinite(v_new) or step < 1e-300:
            log.warning("line search failed at iteration %d", it)
            break
        if v_new > val + 64 * np.finfo(float).eps * abs(val):
            monotone = False
        s_k, y_k = cand - u, g_new - g
        u, val, g, h = cand, v_new, g_new, h_new
        values.append(val)
        gn = float(np.linalg.norm(g))
        sy = s_k @ y_k
        if step_rule == "bb" and sy > 0:
            step = max((s_k @ s_k) / sy, step0)
        else:
            step *= 2.0
    converged = gn < grad_tol
    if not converged:
        log.warning("gradient descent stopped with |grad|=%.3g after %d iterations", gn, it)
    return OptResult(u, float(val), gn, it, converged, monotone, values)


def w2_1d(a, b):
    """Squared 1-D W2 between two empirical measures (sizes may differ)."""
    a, b = np.sort(np.asarray(a, float)), np.sort(np.asarray(b, float))
    na, nb = a.size, b.size
    # breakpoints of both quantile functions on (0, 1)
    t = np.union1d(np.arange(1, na) / na, np.arange(1, nb) / nb)
    edges = np.concatenate([[0.0], t, [1.0]])
    mid = 0.5 * (edges[:-1] + edges[1:])
    qa = a[np.minimum((mid * na).astype(int), na - 1)]
    qb = b[np.minimum((mid * nb).astype(int), nb - 1)]
    return float(np.sum(np.diff(edges) * (qa - qb) ** 2))


def w2_sliced(joint_emp, channel_samples, num_projections=128, seed=0):
    """Sliced squared W2 between two 2-D point clouds.

    Average over random unit directions of the exact 1-D squared W2 between
    the projected samples (quantile coupling).
    """
    x, y = np.asarray(joint_emp, float), np.asarray(channel_samples, float)
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ValueError("need at least two points on each side")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((num_projections, x.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return float(np.mean([w2_1d(x @ e, y @ e) for e in dirs]))


def exact_logz_gaussian(ds, delta2, sigma2):
    """Exact ``-(1/p) log Z_p`` for a ``N(0, delta2)`` prior.

    ``Z_p = int exp(-||y - X b||^2 / (2 sigma2)) pi(db)``.
    """
    X, y = ds.X, ds.y
    p = X.shape[1]
    K = X.T @ X / sigma2
    A = np.eye(p) + delta2 * K
    cf = linalg.cho_factor(A)
    logdet = 2 * np.sum(np.log(np.diag(cf[0])))
    v = X.T @ y / sigma2
    # (K + I / delta2)^{-1} = delta2 A^{-1}
    quad = delta2 * v @ linalg.cho_solve(cf, v)
    return float((0.5 * logdet + 0.5 * (y @ y) / sigma2 - 0.5 * quad) / p)


def _is_gaussian(prior):
    return isinstance(prior, GaussianMeanZero) or (
        isinstance(prior, GaussianSpikeSlab) and prior.q == 0)


def exact_logz(problem, ds):
    if not _is_gaussian(problem.prior):
        raise NotGaussianPrior("exact evidence is only available for Gaussian priors")
    return exact_logz_gaussian(ds, problem.prior.delta2, problem.sigma2)


@dataclass
class SimResult:
    u_hat: np.ndarray
    mse_emp: float
    neg_log_z_nmf_per_p: float
    coverage_emp: dict
    coverage_corrected_emp: dict
    w2_sliced: float
    grad_norm_final: float
    iterations: int
    converged: bool = True
    w2_marginal: dict = field(default_factory=dict)
    exact_neg_log_z_per_p: float = None
    objective_monotone: bool = True
    max_d_deviation: float = float("nan")
    seed: int = None
    n: int = None
    p: int = None

    def to_dict(self, include_u=False):
        d = {k: getattr(self, k) for k in (
            "seed", "n", "p", "mse_emp", "neg_log_z_nmf_per_p", "exact_neg_log_z_per_p",
            "w2_sliced", "grad_norm_final", "iterations", "converged",
            "objective_monotone", "max_d_deviation")}
        d["coverage_emp"] = {str(k): v for k, v in self.coverage_emp.items()}
        d["coverage_corrected_emp"] = {str(k): v for k, v in self.coverage_corrected_emp.items()}
        d["w2_marginal"] = dict(self.w2_marginal)
        if include_u:
            d["u_hat"] = self.u_hat.tolist()
        return d


def empirical_coverage(problem, ds, u_hat, zeta, h=None):
    prior = problem.prior
    if h is None:
        h = prior.invert_mean(u_hat, ds.d)
    lo = prior.quantile(h, ds.d, zeta / 2)
    hi = prior.quantile(h, ds.d, 1 - zeta / 2)
    b = ds.beta_star
    return float(np.mean((lo <= b) & (b <= hi)))


def empirical_corrected_coverage(problem, ds, u_hat, sol, zeta):
    lo, hi = corrected_interval(problem, sol, zeta, u_hat)
    b = ds.beta_star
    return float(np.mean((lo <= b) & (b <= hi)))


def empirical_metrics(problem, ds, u_hat, sol, zeta_list=(0.05,), opt=None,
                      channel_samples=100_000, projections=128, seed=0):
    prior = problem.prior
    value, _, h = nmf_objective(problem, ds, u_hat, return_h=True)
    c0 = prior.moments(np.zeros_like(ds.d), ds.d)[0]
    p = ds.p
    cov = {float(z): empirical_coverage(problem, ds, u_hat, z, h) for z in zeta_list}
    corr = {float(z): empirical_corrected_coverage(problem, ds, u_hat, sol, z)
            for z in zeta_list}
    law = ChannelLaw.from_solution(problem, sol)
    ch = sample_channel(law, seed, channel_samples)
    joint = np.column_stack([u_hat, ds.beta_star])
    exact = exact_logz(problem, ds) if _is_gaussian(prior) else None
    return SimResult(
        u_hat=u_hat, mse_emp=float(np.mean((u_hat - ds.beta_star) ** 2)),
        neg_log_z_nmf_per_p=float((value - c0.sum()) / p),
        coverage_emp=cov, coverage_corrected_emp=corr,
        w2_sliced=w2_sliced(joint, ch, projections, seed),
        grad_norm_final=opt.grad_norm if opt else float("nan"),
        iterations=opt.iterations if opt else 0,
        converged=opt.converged if opt else True,
        w2_marginal={"u_vs_eta": w2_1d(u_hat, ch[:, 0]), "beta_vs_B": w2_1d(ds.beta_star, ch[:, 1])},
        exact_neg_log_z_per_p=exact,
        objective_monotone=opt.monotone if opt else True,
        max_d_deviation=float(np.max(np.abs(ds.d - 1.0 / problem.sigma2))),
        n=ds.n, p=p)


def run_replicate(problem, cfg, sol, seed):
    ds = gen_data(problem, cfg, seed)
    opt = minimize_nmf(problem, ds, cfg.grad_tol, cfg.max_iter)
    res = empirical_metrics(problem, ds, opt.u, sol, cfg.zeta_list, opt,
                            cfg.channel_samples, cfg.projections, seed)
    res.seed = seed
    return res


def run_replicates(problem, cfg, sol, threads=1):
    """Replicates use seeds ``cfg.seed + k``; results come back in replicate order."""
    seeds = [cfg.seed + k for k in range(cfg.replicates)]
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda s: run_replicate(problem, cfg, sol, s), seeds))
    return [run_replicate(problem, cfg, sol, s) for s in seeds]
