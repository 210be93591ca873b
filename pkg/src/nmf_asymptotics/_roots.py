"""Vectorised safeguarded Newton for increasing scalar functions."""

import numpy as np

from .errors import NoConvergence


def increasing_root(fun, size, x0=None, lo=None, hi=None, ftol=1e-13, xtol=1e-14,
                    max_iter=200, max_expand=80):
    """Solve ``f_i(x_i) = 0`` for ``i < size`` where every ``f_i`` is increasing.

    ``fun(x, sel)`` returns ``(f, df)`` for the elements selected by the
    integer index array ``sel``.  ``ftol`` may be an array (per-element
    tolerance on ``|f|``).  Brackets are grown geometrically from ``[-1, 1]``
    (shifted to ``x0`` when given) unless ``lo``/``hi`` are supplied; Newton
    steps leaving the bracket are replaced by bisection.
    """
    ftol = np.broadcast_to(np.asarray(ftol, dtype=float), (size,))
    x = np.zeros(size) if x0 is None else np.array(x0, dtype=float, copy=True)
    x = np.broadcast_to(x, (size,)).copy()
    all_idx = np.arange(size)

    if lo is None or hi is None:
        lo = x - 1.0
        hi = x + 1.0
        step = np.full(size, 2.0)
        f_lo, _ = fun(lo, all_idx)
        f_hi, _ = fun(hi, all_idx)
        for _ in range(max_expand):
            need_lo = f_lo > 0
            need_hi = f_hi < 0
            if not (need_lo.any() or need_hi.any()):
                break
            if need_lo.any():
                sel = all_idx[need_lo]
                hi[sel] = np.minimum(hi[sel], lo[sel])
                f_hi[sel] = np.minimum(f_hi[sel], f_lo[sel])
                lo[sel] = lo[sel] - step[sel]
                f_lo[sel], _ = fun(lo[sel], sel)
            if need_hi.any():
                sel = all_idx[need_hi]
                lo[sel] = np.maximum(lo[sel], hi[sel])
                hi[sel] = hi[sel] + step[sel]
                f_hi[sel], _ = fun(hi[sel], sel)
            step = step * 2.0
        else:
            raise NoConvergence("could not bracket root", {"lo": lo, "hi": hi})
        x = np.clip(x, lo, hi)
    else:
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (size,)).copy()
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (size,)).copy()

    active = all_idx
    for _ in range(max_iter):
        if active.size == 0:
            return x
        xa = x[active]
        f, df = fun(xa, active)
        done = np.abs(f) <= ftol[active]
        neg = f < 0
        lo[active] = np.where(neg, xa, lo[active])
        hi[active] = np.where(neg, hi[active], xa)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xa - f / df
        la, ha = lo[active], hi[active]
        bad = ~np.isfinite(xn) | (xn <= la) | (xn >= ha)
        xn = np.where(bad, 0.5 * (la + ha), xn)
        scale = 1.0 + np.abs(xa)
        done |= np.abs(xn - xa) <= xtol * scale
        done |= (ha - la) <= xtol * scale
        x[active] = np.where(done & (np.abs(f) <= ftol[active]), xa, xn)
        active = active[~done]
    if active.size:
        raise NoConvergence(f"root finding did not converge for {active.size} elements",
                            {"x": x[active], "lo": lo[active], "hi": hi[active]})
    return x
