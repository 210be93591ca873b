"""Symmetric priors, their exponential tilts and tilted moments.

A tilt ``(g1, g2)`` of a prior ``pi`` is the probability measure

    d pi^(g1, g2) / d pi (x) = exp(g1 * x - g2 * x**2 / 2 - c(g1, g2))

where ``c`` is the cumulant generating function.  Every prior kind exposes a
vectorised ``moments(g1, g2)`` returning ``(c, mean, variance)`` of the tilt;
all other quantities (the inverse-mean map, quantiles) are derived from it.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Union

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator

from ._roots import increasing_root
from .errors import NonNormalizable, OutOfSupport

LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


class Tilt(NamedTuple):
    gamma1: float
    gamma2: float


class TiltedMoments(NamedTuple):
    cgf: float
    mean: float
    variance: float


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _gaussian_slab(g1, g2, delta2):
    """CGF, mean and variance of the (g1, g2) tilt of N(0, delta2)."""
    prec = 1.0 / delta2 + g2
    if np.any(prec <= 0):
        raise NonNormalizable(f"gamma2 must exceed {-1.0 / delta2:g} for slab variance {delta2:g}")
    cgf = 0.5 * g1 * g1 / prec - 0.5 * np.log(delta2 * prec)
    return cgf, g1 / prec, 1.0 / prec


@dataclass(frozen=True)
class GaussianMeanZero:
    delta2: float

    def __post_init__(self):
        if not self.delta2 > 0:
            raise ValueError("delta2 must be positive")

    kind = "gaussian"
    bounded = False

    def support(self):
        return -np.inf, np.inf

    @property
    def second_moment(self):
        return float(self.delta2)

    def moments(self, g1, g2):
        g1, g2 = np.broadcast_arrays(np.asarray(g1, float), np.asarray(g2, float))
        return _gaussian_slab(g1, g2, self.delta2)

    def quantile(self, g1, g2, t):
        _, m, v = self.moments(g1, g2)
        return m + np.sqrt(v) * special.ndtri(t)

    def cdf(self, g1, g2, x):
        _, m, v = self.moments(g1, g2)
        return special.ndtr((x - m) / np.sqrt(v))

    def invert_mean(self, u, d, x0=None):
        u, d = np.broadcast_arrays(np.asarray(u, float), np.asarray(d, float))
        if np.any(1.0 / self.delta2 + d <= 0):
            raise NonNormalizable("tilt not normalizable")
        return u * (1.0 / self.delta2 + d)

    def sample(self, seed, m):
        return np.sqrt(self.delta2) * _rng(seed).standard_normal(m)

    def to_dict(self):
        return {"kind": self.kind, "delta2": self.delta2}


@dataclass(frozen=True)
class GaussianSpikeSlab:
    """Mixture ``q * delta_0 + (1 - q) * N(0, delta2)``."""

    q: float
    delta2: float

    def __post_init__(self):
        if not 0 <= self.q < 1:
            raise ValueError("q must lie in [0, 1)")
        if not self.delta2 > 0:
            raise ValueError("delta2 must be positive")

    kind = "spike_slab"
    bounded = False

    def support(self):
        return -np.inf, np.inf

    @property
    def second_moment(self):
        return float((1 - self.q) * self.delta2)

    def _parts(self, g1, g2):
        g1, g2 = np.broadcast_arrays(np.asarray(g1, float), np.asarray(g2, float))
        cs, ms, vs = _gaussian_slab(g1, g2, self.delta2)
        log_slab = np.log1p(-self.q) + cs
        if self.q == 0:
            cgf = log_slab
            w = np.ones_like(cs)
        else:
            cgf = np.logaddexp(np.log(self.q), log_slab)
            w = np.exp(log_slab - cgf)
        return cgf, w, ms, vs

    def moments(self, g1, g2):
        cgf, w, ms, vs = self._parts(g1, g2)
        mean = w * ms
        var = w * vs + w * (1 - w) * ms * ms
        return cgf, mean, var

    def cdf(self, g1, g2, x):
        _, w, ms, vs = self._parts(g1, g2)
        return w * special.ndtr((x - ms) / np.sqrt(vs)) + (1 - w) * (np.asarray(x) >= 0)

    def quantile(self, g1, g2, t):
        """Left-continuous generalised inverse; the atom at 0 is a CDF jump."""
        _, w, ms, vs = self._parts(g1, g2)
        t = np.asarray(t, float)
        sd = np.sqrt(vs)
        below = w * special.ndtr(-ms / sd)  # CDF just before 0
        with np.errstate(divide="ignore", invalid="ignore"):
            left = ms + sd * special.ndtri(t / w)
            right = ms + sd * special.ndtri((t - (1 - w)) / w)
        return np.where(t <= below, np.minimum(left, 0.0),
                        np.where(t <= below + (1 - w), 0.0, np.maximum(right, 0.0)))

    def invert_mean(self, u, d, x0=None):
        return _invert_mean_numeric(self, u, d, x0)

    def sample(self, seed, m):
        rng = _rng(seed)
        slab = rng.random(m) >= self.q
        return np.where(slab, np.sqrt(self.delta2) * rng.standard_normal(m), 0.0)

    def to_dict(self):
        return {"kind": self.kind, "q": self.q, "delta2": self.delta2}


@dataclass(frozen=True)
class ThreePointDiscrete:
    """Masses ``q`` at 0 and ``(1 - q) / 2`` at each of -1 and +1."""

    q: float

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ValueError("q must lie in (0, 1)")

    kind = "three_point"
    bounded = True

    def support(self):
        return -1.0, 1.0

    @property
    def second_moment(self):
        return float(1 - self.q)

    def _probs(self, g1, g2):
        g1, g2 = np.broadcast_arrays(np.asarray(g1, float), np.asarray(g2, float))
        a = np.log((1 - self.q) / 2) - 0.5 * g2
        lp, l0, lm = a + g1, np.full_like(g1, np.log(self.q)), a - g1
        cgf = np.logaddexp(np.logaddexp(lp, lm), l0)
        return cgf, np.exp(lm - cgf), np.exp(l0 - cgf), np.exp(lp - cgf)

    def moments(self, g1, g2):
        cgf, pm, p0, pp = self._probs(g1, g2)
        mean = pp - pm
        # (1 - mean) and (1 + mean) written without cancellation
        var = pp * (p0 + 2 * pm) ** 2 + pm * (p0 + 2 * pp) ** 2 + p0 * mean ** 2
        return cgf, mean, var

    def cdf(self, g1, g2, x):
        _, pm, p0, _ = self._probs(g1, g2)
        x = np.asarray(x, float)
        return np.where(x >= 1, 1.0, np.where(x >= 0, pm + p0, np.where(x >= -1, pm, 0.0)))

    def quantile(self, g1, g2, t):
        _, pm, p0, _ = self._probs(g1, g2)
        t = np.asarray(t, float)
        return np.where(t <= pm, -1.0, np.where(t <= pm + p0, 0.0, 1.0))

    def invert_mean(self, u, d, x0=None):
        return _invert_mean_numeric(self, u, d, x0)

    def boundary_kl(self, d):
        """KL(delta_{+1} || pi^(0, d)); equal at -1 by symmetry."""
        c0 = self.moments(0.0, d)[0]
        return c0 + 0.5 * d - np.log((1 - self.q) / 2)

    def sample(self, seed, m):
        p = [(1 - self.q) / 2, self.q, (1 - self.q) / 2]
        return _rng(seed).choice(np.array([-1.0, 0.0, 1.0]), size=m, p=p)

    def to_dict(self):
        return {"kind": self.kind, "q": self.q}


@dataclass(frozen=True)
class GridDensity:
    """Density proportional to ``exp(-V)`` on ``[-a, a]``.

    ``potential`` holds V sampled on a uniform grid of ``[-a, a]`` (endpoints
    included); it is interpolated by a monotone (PCHIP) cubic.  Tilted integrals use
    composite Gauss-Legendre quadrature.
    """

    a: float
    potential: tuple

    order = 4
    edge_levels = 36
    fine_nodes = 4097
    kind = "grid"
    bounded = True

    def __post_init__(self):
        v = np.asarray(self.potential, float)
        if not self.a > 0:
            raise ValueError("support half-width must be positive")
        if v.ndim != 1 or v.size < 128:
            raise ValueError("potential grid needs at least 128 nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential must be finite on the grid")
        if np.max(np.abs(v - v[::-1])) > 1e-10:
            raise ValueError("potential must be even")
        object.__setattr__(self, "potential", tuple(float(x) for x in v))

    @classmethod
    def from_function(cls, a, fn, nodes=513):
        x = np.linspace(-a, a, nodes)
        v = np.asarray(fn(x), float)
        v = 0.5 * (v + v[::-1])
        return cls(a, tuple(v))

    def support(self):
        return -float(self.a), float(self.a)

    @cached_property
    def _spline(self):
        v = np.asarray(self.potential)
        return PchipInterpolator(np.linspace(-self.a, self.a, v.size), v)

    @cached_property
    def _nodes(self):
        t, w = np.polynomial.legendre.leggauss(self.order)
        cells = np.linspace(-self.a, self.a, len(self.potential))
        width = cells[1] - cells[0]
        # one panel per interpolation cell (the interpolant is smooth inside
        # each), graded geometrically toward +-a for edge-concentrated tilts
        graded = self.a - width * 2.0 ** -np.arange(1, self.edge_levels + 1)
        edges = np.unique(np.concatenate([cells, graded, -graded]))
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        x = (mid[:, None] + half[:, None] * t[None, :]).ravel()
        logw = (np.log(half)[:, None] + np.log(w)[None, :]).ravel() - self._spline(x)
        return x, logw - special.logsumexp(logw)

    @cached_property
    def _fine(self):
        x = np.linspace(-self.a, self.a, self.fine_nodes)
        return x, -self._spline(x)

    @property
    def second_moment(self):
        x, lw = self._nodes
        return float(np.sum(np.exp(lw) * x * x))

    def moments(self, g1, g2):
        g1, g2 = np.broadcast_arrays(np.asarray(g1, float), np.asarray(g2, float))
        shape = g1.shape
        g1, g2 = g1.reshape(-1, 1), g2.reshape(-1, 1)
        x, lw = self._nodes
        out = [np.empty(g1.shape[0]) for _ in range(3)]
        for s in range(0, g1.shape[0], 512):
            sl = slice(s, s + 512)
            log_terms = lw + g1[sl] * x - 0.5 * g2[sl] * x * x
            cgf = special.logsumexp(log_terms, axis=1)
            p = np.exp(log_terms - cgf[:, None])
            mean = p @ x
            out[0][sl], out[1][sl] = cgf, mean
            out[2][sl] = np.einsum("ij,ij->i", p, (x - mean[:, None]) ** 2)
        return tuple(o.reshape(shape) for o in out)

    def _tilted_cdf_table(self, g1, g2):
        x, lv = self._fine
        logd = lv + g1[:, None] * x - 0.5 * g2[:, None] * x * x
        dens = np.exp(logd - logd.max(axis=1, keepdims=True))
        cum = np.concatenate([np.zeros((dens.shape[0], 1)),
                              np.cumsum(0.5 * (dens[:, 1:] + dens[:, :-1]), axis=1)], axis=1)
        return x, cum / cum[:, -1:]

    def cdf(self, g1, g2, x):
        g1, g2, x = np.broadcast_arrays(*(np.asarray(v, float) for v in (g1, g2, x)))
        grid, table = self._tilted_cdf_table(g1.ravel(), g2.ravel())
        vals = [np.interp(xi, grid, row) for xi, row in zip(x.ravel(), table)]
        return np.asarray(vals).reshape(x.shape)

    def quantile(self, g1, g2, t):
        g1, g2, t = np.broadcast_arrays(*(np.asarray(v, float) for v in (g1, g2, t)))
        grid, table = self._tilted_cdf_table(g1.ravel(), g2.ravel())
        vals = [np.interp(ti, row, grid) for ti, row in zip(t.ravel(), table)]
        return np.asarray(vals).reshape(t.shape)

    def invert_mean(self, u, d, x0=None):
        return _invert_mean_numeric(self, u, d, x0)

    def sample(self, seed, m):
        grid, table = self._tilted_cdf_table(np.zeros(1), np.zeros(1))
        return np.interp(_rng(seed).random(m), table[0], grid)

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "potential": list(self.potential)}


PriorSpec = Union[GaussianMeanZero, GaussianSpikeSlab, ThreePointDiscrete, GridDensity]


def _invert_mean_numeric(prior, u, d, x0=None):
    u, d = np.broadcast_arrays(np.asarray(u, float), np.asarray(d, float))
    shape = u.shape
    u, d = u.ravel(), d.ravel()
    lo, hi = prior.support()
    if np.any((u <= lo) | (u >= hi)):
        raise OutOfSupport(f"mean must lie strictly inside ({lo}, {hi})")
    if x0 is not None:
        x0 = np.broadcast_to(np.asarray(x0, float), shape).ravel()

    def fun(g, sel):
        _, mean, var = prior.moments(g, d[sel])
        return mean - u[sel], var

    return increasing_root(fun, u.size, x0=x0, ftol=1e-14 * (1 + np.abs(u))).reshape(shape)


def support(prior):
    """Closure endpoints ``(m(pi), M(pi))`` of the support."""
    return prior.support()


def cgf(prior, tilt):
    return float(prior.moments(*tilt)[0])


def tilted_moments(prior, tilt):
    c, m, v = prior.moments(*tilt)
    return TiltedMoments(float(c), float(m), float(v))


def invert_mean(prior, u, d):
    """The unique ``g1`` whose ``(g1, d)`` tilt has mean ``u``.

    Accepts scalars or arrays (broadcast against each other).
    """
    out = prior.invert_mean(u, d)
    return float(out) if np.ndim(out) == 0 else out


def tilted_quantile(prior, tilt, t):
    if not np.all((np.asarray(t) > 0) & (np.asarray(t) < 1)):
        raise ValueError("quantile level must lie in (0, 1)")
    out = prior.quantile(tilt[0], tilt[1], t)
    return float(out) if np.ndim(out) == 0 else out


def tilted_cdf(prior, tilt, x):
    out = prior.cdf(tilt[0], tilt[1], x)
    return float(out) if np.ndim(out) == 0 else out


def sample(prior, seed, m):
    if m < 1:
        raise ValueError("sample size must be positive")
    return prior.sample(seed, m)


def laplace_grid(a, scale=1.0, nodes=513):
    """Laplace density truncated to ``[-a, a]`` as a :class:`GridDensity`."""
    return GridDensity.from_function(a, lambda x: np.abs(x) / scale, nodes)


def prior_from_dict(cfg):
    """Build a prior from config keys (``kind`` plus kind-specific keys)."""
    kind = cfg.get("kind")
    if kind in ("gaussian", "gaussian_mean_zero"):
        return GaussianMeanZero(float(cfg["delta2"]))
    if kind in ("spike_slab", "gaussian_spike_slab"):
        return GaussianSpikeSlab(float(cfg.get("q", 0.0)), float(cfg["delta2"]))
    if kind in ("three_point", "three_point_discrete"):
        return ThreePointDiscrete(float(cfg["q"]))
    if kind == "laplace":
        return laplace_grid(float(cfg["a"]), float(cfg.get("scale", 1.0)), int(cfg.get("nodes", 513)))
    if kind in ("grid", "grid_density"):
        if "potential" in cfg:
            v = cfg["potential"]
            if isinstance(v, str):
                v = [float(s) for s in v.replace(",", " ").split()]
            return GridDensity(float(cfg["a"]), tuple(v))
        return GridDensity(float(cfg["a"]), tuple(np.loadtxt(cfg["potential_file"]).ravel()))
    raise ValueError(f"unknown prior kind {kind!r}")


__all__ = [
    "GaussianMeanZero", "GaussianSpikeSlab", "GridDensity", "PriorSpec",
    "ThreePointDiscrete", "Tilt", "TiltedMoments", "cgf", "invert_mean",
    "laplace_grid", "prior_from_dict", "sample", "support", "tilted_cdf",
    "tilted_moments", "tilted_quantile",
]
