"""Mean-field penalty G(u, d), the effective penalty F and convexity checks."""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .errors import OutOfSupport
from .priors import (GaussianMeanZero, GaussianSpikeSlab, GridDensity,
                     ThreePointDiscrete)

CERTIFICATES = ("NicePrior", "DiscreteGHS", "LowSNR", "SpikeSlabCondition",
                "NumericalSweep", "Failed")


@dataclass(frozen=True)
class ProblemSpec:
    """Fitted prior, true signal law, noise variance and aspect ratio n/p."""

    prior: object
    truth: object = None
    sigma2: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.truth is None:
            object.__setattr__(self, "truth", self.prior)
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not np.isfinite(self.s2):
            raise ValueError("truth must have a finite second moment")

    @property
    def s2(self):
        return self.truth.second_moment

    @property
    def sigma(self):
        return float(np.sqrt(self.sigma2))

    def replace(self, **kw):
        d = {"prior": self.prior, "truth": self.truth, "sigma2": self.sigma2, "alpha": self.alpha}
        d.update(kw)
        return ProblemSpec(**d)

    def to_dict(self):
        return {"prior": self.prior.to_dict(), "truth": self.truth.to_dict(),
                "sigma2": self.sigma2, "alpha": self.alpha, "s2": self.s2}


def _check_closed_support(prior, u):
    lo, hi = prior.support()
    if np.any((u < lo) | (u > hi)) or np.any(np.isnan(u)):
        raise OutOfSupport(f"mean outside [{lo}, {hi}]")
    return lo, hi


def G(prior, u, d):
    """KL divergence between the mean-``u`` tilt and the ``(0, d)`` tilt of ``prior``.

    Boundary means get the KL of the degenerate law (``+inf`` for continuous
    priors).  Scalar in, scalar out; arrays broadcast.
    """
    u, d = np.broadcast_arrays(np.asarray(u, float), np.asarray(d, float))
    lo, hi = _check_closed_support(prior, u)
    out = np.empty(u.shape)
    edge = (u == lo) | (u == hi)
    inner = ~edge
    if inner.any():
        ui, di = u[inner], d[inner]
        h = prior.invert_mean(ui, di)
        c_h = prior.moments(h, di)[0]
        c_0 = prior.moments(np.zeros_like(di), di)[0]
        out[inner] = ui * h - c_h + c_0
    if edge.any():
        if isinstance(prior, ThreePointDiscrete):
            out[edge] = prior.boundary_kl(d[edge])
        else:
            out[edge] = np.inf
    return float(out) if out.ndim == 0 else out


def penalty_terms(prior, sigma2, u):
    """Return ``(F, F', F'')`` at interior means ``u``."""
    u = np.asarray(u, float)
    lo, hi = prior.support()
    if np.any((u <= lo) | (u >= hi)) or np.any(np.isnan(u)):
        raise OutOfSupport(f"mean must lie strictly inside ({lo}, {hi})")
    d = 1.0 / sigma2
    h = prior.invert_mean(u, d)
    c_h, _, var = prior.moments(h, d)
    c_0 = prior.moments(0.0, d)[0]
    f = u * h - c_h + c_0 - 0.5 * u * u / sigma2
    return f, h - u / sigma2, 1.0 / var - 1.0 / sigma2


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def F(prior, sigma2, u):
    """Effective penalty ``G(u, 1/sigma2) - u^2 / (2 sigma2)``."""
    return _scalar(penalty_terms(prior, sigma2, u)[0])


def F_prime(prior, sigma2, u):
    return _scalar(penalty_terms(prior, sigma2, u)[1])


def F_second(prior, sigma2, u):
    return _scalar(penalty_terms(prior, sigma2, u)[2])


@dataclass
class ConvexityReport:
    certified: bool
    certificate: str
    min_F_second: float
    sweep_grid: str
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {"certified": self.certified, "certificate": self.certificate,
                "min_F_second": self.min_F_second, "sweep_grid": self.sweep_grid,
                "detail": self.detail}


def spike_slab_easy_lhs(q, delta2, sigma2):
    """Left side of the closed-form sufficient condition (certified when < 1)."""
    return (1 + 2 * q / (1 - q) * np.sqrt(1 + delta2 / sigma2)) * delta2 / (sigma2 + delta2)


def spike_slab_max_tilted_variance(q, delta2, sigma2, h_max=50.0):
    """Largest variance over ``h`` of the ``(h, 0)`` tilt of the reduced mixture.

    The ``(h, 1/sigma2)`` tilts of the spike-and-slab prior are exactly the
    ``(h, 0)`` tilts of another spike-and-slab with modified ``q`` and slab
    variance, so F is strongly convex iff this supremum stays below sigma2.
    A coarse scan locates the peak; golden-section search refines it.
    """
    q_t = q / (q + (1 - q) / np.sqrt(1 + delta2 / sigma2))
    d_t = sigma2 * delta2 / (sigma2 + delta2)
    reduced = GaussianSpikeSlab(q_t, d_t)

    def neg_var(h):
        return -float(reduced.moments(h, 0.0)[2])

    hs = np.linspace(0.0, h_max, 401)
    vals = -reduced.moments(hs, 0.0)[2]
    k = int(np.argmin(vals))
    a, b = hs[max(k - 1, 0)], hs[min(k + 1, hs.size - 1)]
    res = optimize.minimize_scalar(neg_var, bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-10})
    best = min(-res.fun, -vals[k])
    return best, {"q_tilde": q_t, "delta2_tilde": d_t, "argmax_h": float(res.x)}


def _nice_potential(prior):
    v = np.asarray(prior.potential)
    half = v[v.size // 2:]
    dv = np.diff(half)
    ddv = np.diff(dv)
    # V' >= 0 and V' convex on the positive half-line (grid differences)
    scale = 1e-8 * max(1.0, np.max(np.abs(half)))
    return bool(np.all(dv >= -scale) and np.all(np.diff(ddv) >= -scale))


def sweep_grid(prior, sigma2, points=2048):
    """Means at which F'' is probed.

    Union of the central ``1 - 1e-6`` probability range of the prior, the
    means of the tilts ``(h, 1/sigma2)`` for ``h`` in ``[-50, 50]`` (which
    stays informative when the prior is nearly degenerate) and a dense patch
    around 0.
    """
    lo, hi = prior.support()
    if np.isfinite(hi):
        edge = hi * (1 - 1e-6)
    else:
        tail = 0.5e-6
        if isinstance(prior, GaussianSpikeSlab):
            tail = min(tail / (1 - prior.q), 0.5)
        edge = np.sqrt(prior.delta2) * float(special.ndtri(1 - tail))
    tilt_means = prior.moments(np.linspace(-50.0, 50.0, points), 1.0 / sigma2)[1]
    tilt_means = tilt_means[(tilt_means > lo) & (tilt_means < hi)]
    grid = np.concatenate([np.linspace(-edge, edge, points), tilt_means,
                           np.linspace(-0.01 * edge, 0.01 * edge, 257)])
    grid = np.unique(grid[(grid > lo) & (grid < hi)])
    return grid, (f"{points} points on [{-edge:.6g}, {edge:.6g}], {tilt_means.size} tilt means "
                  f"for |h| <= 50, 257 within 1% of 0")


def check_convexity(prior, sigma2):
    """Certify strong convexity of F for ``prior`` at noise level ``sigma2``.

    Applies the sufficient condition matching the prior kind and always runs a
    numerical F'' sweep, whose minimum is reported.
    """
    return _check_convexity(prior, float(sigma2))


@lru_cache(maxsize=256)
def _check_convexity(prior, sigma2):
    grid, desc = sweep_grid(prior, sigma2)
    fpp = penalty_terms(prior, sigma2, grid)[2]
    min_fpp = float(np.min(fpp))
    detail = {}
    certificate = None
    if isinstance(prior, GaussianMeanZero) or (isinstance(prior, GaussianSpikeSlab) and prior.q == 0):
        certificate = "NicePrior"
    elif isinstance(prior, GaussianSpikeSlab):
        lhs = float(spike_slab_easy_lhs(prior.q, prior.delta2, sigma2))
        detail["easy_condition_lhs"] = lhs
        vmax, info = spike_slab_max_tilted_variance(prior.q, prior.delta2, sigma2)
        detail["max_tilted_variance"] = float(vmax)
        detail.update(info)
        if lhs < 1 or vmax < sigma2:
            certificate = "SpikeSlabCondition"
    elif isinstance(prior, ThreePointDiscrete):
        if 2 / 3 < prior.q < 1:
            certificate = "DiscreteGHS"
        elif sigma2 > 1.0:
            certificate = "LowSNR"
    elif isinstance(prior, GridDensity):
        if _nice_potential(prior):
            certificate = "NicePrior"
        elif sigma2 > prior.a ** 2:
            certificate = "LowSNR"
    if certificate is None:
        certificate = "NumericalSweep" if min_fpp > 0 else "Failed"
    certified = certificate != "Failed" and min_fpp > 0
    if not certified:
        certificate = "Failed"
    return ConvexityReport(certified, certificate, min_fpp, desc, detail)
