"""Scalar denoiser: the proximal operator of ``t * F``.

The stationarity condition ``(w - x) / t + F'(w) = 0`` is solved in the tilt
parameter ``g = h(w, 1/sigma2)`` rather than in ``w``.  With ``w = c'(g)``
and ``F'(w) = g - w / sigma2`` the residual becomes

    r(g) = (c'(g) - x) / t + g - c'(g) / sigma2,
    r'(g) = c''(g) / t + 1 - c''(g) / sigma2,

which is strictly increasing whenever F'' > 0 (equivalently c'' < sigma2), so
one bracketed Newton solve replaces a nested inversion of the mean map.
"""

from typing import NamedTuple

import numpy as np

from ._roots import increasing_root
from .errors import NotConvexCertified, OutOfRange
from .meanfield import check_convexity

RESIDUAL_TOL = 1e-13


class ProxState(NamedTuple):
    w: np.ndarray
    gamma: np.ndarray
    var: np.ndarray
    cgf: np.ndarray


def _require_convex(prior, sigma2):
    report = check_convexity(prior, sigma2)
    if not report.certified:
        raise NotConvexCertified(
            f"F is not certified strongly convex for {prior.to_dict()} at sigma2={sigma2}")


def prox_state(prior, sigma2, x, t, gamma0=None, check=True):
    """Solve the prox at every ``(x, t)`` pair; returns arrays shaped like ``x``."""
    if check:
        _require_convex(prior, sigma2)
    x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
    shape = x.shape
    xf, tf = x.ravel(), t.ravel()
    if np.any(tf <= 0):
        raise ValueError("prox parameter t must be positive")
    d = 1.0 / sigma2

    def fun(g, sel):
        _, m, v = prior.moments(g, d)
        ts = tf[sel]
        return (m - xf[sel]) / ts + g - m * d, v / ts + 1 - v * d

    if gamma0 is None:
        v0 = prior.moments(0.0, d)[2]
        gamma0 = (xf / tf) / (v0 / tf + 1 - v0 * d)
    else:
        gamma0 = np.broadcast_to(np.asarray(gamma0, float), shape).ravel()
    ftol = RESIDUAL_TOL * (1 + np.abs(xf) / tf)
    g = increasing_root(fun, xf.size, x0=gamma0, ftol=ftol)
    c, w, v = prior.moments(g, d)
    return ProxState(w.reshape(shape), g.reshape(shape), v.reshape(shape), c.reshape(shape))


def _out(a):
    return float(a) if np.ndim(a) == 0 else a


def eta(prior, sigma2, x, t):
    """``argmin_w (w - x)^2 / (2t) + F(w)``; vectorised over ``x`` and ``t``."""
    return _out(prox_state(prior, sigma2, x, t).w)


def eta_prime(prior, sigma2, x, t):
    """Derivative of ``eta`` in ``x``: ``1 / (1 + t F''(eta))``."""
    s = prox_state(prior, sigma2, x, t)
    t = np.asarray(t, float)
    return _out(s.var / (s.var + t - t * s.var / sigma2))


def stationarity_residual(prior, sigma2, w, x, t):
    from .meanfield import F_prime
    return (np.asarray(w) - x) / t + F_prime(prior, sigma2, w)


def eta_inverse(prior, sigma2, w, t):
    """The unique ``x`` with ``eta(x, t) = w``, namely ``w + t F'(w)``."""
    w = np.asarray(w, float)
    lo, hi = prior.support()
    if np.any((w <= lo) | (w >= hi)) or np.any(np.isnan(w)):
        raise OutOfRange(f"denoiser output must lie strictly inside ({lo}, {hi})")
    h = prior.invert_mean(w, 1.0 / sigma2)
    return _out(w + np.asarray(t, float) * (h - w / sigma2))
