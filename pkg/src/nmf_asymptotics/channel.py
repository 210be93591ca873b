"""Expectations over (B, Z) ~ truth x N(0, 1) and the limiting joint law."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import NonFinite
from .priors import GaussianMeanZero, GaussianSpikeSlab, ThreePointDiscrete
from .prox import prox_state

Z_MAX = 12.0


@dataclass(frozen=True)
class QuadratureScheme:
    """Tensor quadrature: Gauss-Hermite in Z, atoms plus slab rule in B.

    ``slab`` is ``"hermite"`` (Gauss-Hermite over Gaussian slabs) or
    ``"montecarlo"``; truths without a Gaussian slab (grid densities) always
    use seeded Monte Carlo draws for B.
    """

    hermite_nodes_z: int = 61
    slab: str = "hermite"
    slab_nodes: int = 61
    mc_samples: int = 20000
    seed: int = 0

    def __post_init__(self):
        for n in (self.hermite_nodes_z, self.slab_nodes):
            if n < 21 or n % 2 == 0:
                raise ValueError("Hermite node counts must be odd and >= 21")
        if self.slab not in ("hermite", "montecarlo"):
            raise ValueError("slab strategy must be 'hermite' or 'montecarlo'")
        if self.mc_samples < 10_000:
            raise ValueError("Monte Carlo sample count must be >= 1e4")

    def refined(self, nodes=121):
        return QuadratureScheme(nodes, self.slab, nodes, self.mc_samples, self.seed)

    def to_dict(self):
        return {"hermite_nodes": self.hermite_nodes_z, "slab": self.slab,
                "slab_nodes": self.slab_nodes, "mc_samples": self.mc_samples, "seed": self.seed}


@lru_cache(maxsize=16)
def hermite_rule(n):
    """Nodes and weights integrating against the standard normal density."""
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2 * np.pi)


def _gaussian_part(truth):
    if isinstance(truth, GaussianMeanZero):
        return 0.0, truth.delta2
    if isinstance(truth, GaussianSpikeSlab):
        return truth.q, truth.delta2
    return None


@lru_cache(maxsize=64)
def b_rule(truth, scheme):
    """Nodes and weights for B ~ truth."""
    if isinstance(truth, ThreePointDiscrete):
        p = (1 - truth.q) / 2
        return np.array([-1.0, 0.0, 1.0]), np.array([p, truth.q, p])
    parts = _gaussian_part(truth)
    if parts is None or scheme.slab == "montecarlo":
        if parts is None:
            draws = truth.sample(scheme.seed, scheme.mc_samples)
            return draws, np.full(draws.size, 1.0 / draws.size)
        q, delta2 = parts
        x = np.sqrt(delta2) * np.random.default_rng(scheme.seed).standard_normal(scheme.mc_samples)
        w = np.full(x.size, (1 - q) / x.size)
    else:
        q, delta2 = parts
        x, w = hermite_rule(scheme.slab_nodes)
        x, w = np.sqrt(delta2) * x, (1 - q) * w
    if q > 0:
        x, w = np.append(x, 0.0), np.append(w, q)
    return x, w


@lru_cache(maxsize=64)
def b_rule_split(truth, scheme, panels=6, order=24, s_max=10.0):
    """Like :func:`b_rule`, but the Gaussian slab is integrated separately on
    each half-line, so no slab node sits on the atom at 0.  Used for
    integrands that are discontinuous at B = 0.
    """
    parts = _gaussian_part(truth)
    if parts is None or scheme.slab == "montecarlo":
        return b_rule(truth, scheme)
    q, delta2 = parts
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, s_max, panels + 1)
    half = 0.5 * np.diff(edges)
    s = ((edges[:-1] + half)[:, None] + half[:, None] * t).ravel()
    ws = (half[:, None] * w).ravel() * np.exp(-0.5 * s * s) / np.sqrt(2 * np.pi)
    sd = np.sqrt(delta2)
    x = np.concatenate([-sd * s[::-1], sd * s])
    wx = (1 - q) * np.concatenate([ws[::-1], ws])
    if q > 0:
        x, wx = np.append(x, 0.0), np.append(wx, q)
    return x, wx


@lru_cache(maxsize=64)
def bz_grid(truth, scheme):
    b, wb = b_rule(truth, scheme)
    z, wz = hermite_rule(scheme.hermite_nodes_z)
    B = np.repeat(b, z.size)
    Z = np.tile(z, b.size)
    W = np.repeat(wb, z.size) * np.tile(wz, b.size)
    for a in (B, Z, W):
        a.setflags(write=False)
    return B, Z, W


def expect_bz(problem, scheme, f):
    """``E f(B, Z)`` for ``(B, Z) ~ truth x N(0, 1)``.

    ``f`` is called once with the flattened node arrays and must broadcast.
    Nodes are reduced in a fixed order, so results are bitwise reproducible.
    """
    B, Z, W = bz_grid(problem.truth, scheme)
    vals = np.broadcast_to(np.asarray(f(B, Z), float), B.shape)
    if not np.all(np.isfinite(vals)):
        raise NonFinite("integrand is not finite at some quadrature node")
    return float(W @ vals)


def expect_b(truth, scheme, f):
    b, w = b_rule(truth, scheme)
    vals = np.broadcast_to(np.asarray(f(b), float), b.shape)
    if not np.all(np.isfinite(vals)):
        raise NonFinite("integrand is not finite at some quadrature node")
    return float(w @ vals)


def interval_coverage(truth, scheme, lower, upper, iters=64):
    """``P(lower(B, Z) <= B <= upper(B, Z))`` for bounds nondecreasing in Z.

    For each B node the covering Z values form an interval whose endpoints are
    located by bisection, so the Z integral is exact (``ndtr`` differences)
    instead of a quadrature of an indicator.
    """
    b, wb = b_rule_split(truth, scheme)
    zmin, zmax = np.full(b.size, -Z_MAX), np.full(b.size, Z_MAX)

    def last_true(pred):
        # sup{z : pred(z)} for a predicate that is true on a down-set
        lo, hi = zmin.copy(), zmax.copy()
        ok_lo, ok_hi = pred(lo), pred(hi)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            good = pred(mid)
            lo, hi = np.where(good, mid, lo), np.where(good, hi, mid)
        return np.where(ok_hi, np.inf, np.where(ok_lo, lo, -np.inf))

    z_hi = last_true(lambda z: lower(b, z) <= b)
    # inf{z : upper >= b} is the supremum of the down-set {z : upper < b}
    z_lo = last_true(lambda z: upper(b, z) < b)
    prob = np.clip(special.ndtr(z_hi) - special.ndtr(z_lo), 0.0, 1.0)
    return float(wb @ prob)


@dataclass(frozen=True)
class ChannelLaw:
    """Law of ``(eta(tau Z + B, kappa), B)`` at a solved fixed point."""

    problem: object
    tau_star: float
    kappa_star: float

    def __post_init__(self):
        if not self.tau_star > self.problem.sigma:
            raise ValueError("tau_star must exceed sigma")
        if not self.kappa_star > 0:
            raise ValueError("kappa_star must be positive")

    @classmethod
    def from_solution(cls, problem, sol):
        return cls(problem, sol.tau_star, sol.kappa_star)


def sample_channel(law, seed, m):
    """``m`` draws of ``(eta, B)`` as an ``(m, 2)`` array."""
    if m < 1:
        raise ValueError("sample size must be positive")
    rng = np.random.default_rng(seed)
    pb = law.problem
    b = pb.truth.sample(rng, m)
    z = rng.standard_normal(m)
    w = prox_state(pb.prior, pb.sigma2, law.tau_star * z + b, law.kappa_star).w
    return np.column_stack([w, b])


__all__ = ["ChannelLaw", "QuadratureScheme", "b_rule", "b_rule_split",
           "bz_grid", "expect_b", "expect_bz", "hermite_rule", "interval_coverage",
           "sample_channel"]
