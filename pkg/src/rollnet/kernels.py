"""Hot inner loops, each with a numba and a numpy implementation.

The public names (``bisect_margins``, ``min_ratio``, ``crossover_project``)
dispatch to the numba version unless ``ROLLNET_DISABLE_NUMBA`` is set. Both
implementations perform the same floating point operations in the same
order, so results agree bit for bit; ``tests/test_kernels.py`` checks this.
"""

import numpy as np

from rollnet._accel import USE_NUMBA, njit

__all__ = [
    "bisect_margins",
    "bisect_margins_numpy",
    "min_ratio",
    "min_ratio_numpy",
    "crossover_project",
    "crossover_project_numpy",
]


# ---------------------------------------------------------------------------
# directional bisection
#
# Constraint c along direction d is feasible at step eps iff
#     values[c] + eps * slopes[d, c] >= 0
# where values = o * z (non-negative at the base point) and
# slopes = o * (grad z . direction).


def bisect_margins_numpy(values, slopes, cap, stop_gap):
    values = np.ascontiguousarray(values, dtype=np.float64)
    slopes = np.ascontiguousarray(slopes, dtype=np.float64)
    n_dirs = slopes.shape[0]
    lower = np.zeros(n_dirs)
    upper = np.ones(n_dirs)
    capped = np.zeros(n_dirs, dtype=np.bool_)

    def feasible(eps, rows):
        return np.all(values[None, :] + eps[:, None] * slopes[rows] >= 0.0, axis=1)

    if values.size and values.min() < 0.0:
        # base point outside its own region; nothing to certify
        return lower, np.zeros(n_dirs), capped

    # exponential search for an infeasible upper end
    grow = np.arange(n_dirs)
    while grow.size:
        ok = feasible(upper[grow], grow)
        grow = grow[ok]
        if not grow.size:
            break
        hit_cap = upper[grow] >= cap
        capped[grow[hit_cap]] = True
        grow = grow[~hit_cap]
        upper[grow] *= 2.0
    lower[capped] = cap
    upper[capped] = np.inf

    # bisection with lower end feasible, upper end infeasible
    active = np.flatnonzero(~capped)
    while active.size:
        active = active[upper[active] - lower[active] > stop_gap]
        if not active.size:
            break
        mid = 0.5 * (lower[active] + upper[active])
        stuck = (mid <= lower[active]) | (mid >= upper[active])
        active, mid = active[~stuck], mid[~stuck]
        if not active.size:
            break
        ok = feasible(mid, active)
        lower[active[ok]] = mid[ok]
        upper[active[~ok]] = mid[~ok]
    return lower, upper, capped


@njit
def _feasible_nb(values, slopes, d, eps):
    for c in range(values.shape[0]):
        if values[c] + eps * slopes[d, c] < 0.0:
            return False
    return True


@njit
def _bisect_margins_nb(values, slopes, cap, stop_gap):
    n_dirs = slopes.shape[0]
    lower = np.zeros(n_dirs)
    upper = np.ones(n_dirs)
    capped = np.zeros(n_dirs, dtype=np.bool_)
    for c in range(values.shape[0]):
        if values[c] < 0.0:
            return lower, np.zeros(n_dirs), capped
    for d in range(n_dirs):
        u = 1.0
        while _feasible_nb(values, slopes, d, u):
            if u >= cap:
                capped[d] = True
                break
            u *= 2.0
        if capped[d]:
            lower[d] = cap
            upper[d] = np.inf
            continue
        lo = 0.0
        while u - lo > stop_gap:
            mid = 0.5 * (lo + u)
            if mid <= lo or mid >= u:
                break
            if _feasible_nb(values, slopes, d, mid):
                lo = mid
            else:
                u = mid
        lower[d] = lo
        upper[d] = u
    return lower, upper, capped


def _bisect_margins_numba(values, slopes, cap, stop_gap):
    values = np.ascontiguousarray(values, dtype=np.float64)
    slopes = np.ascontiguousarray(slopes, dtype=np.float64)
    if slopes.ndim != 2 or slopes.shape[1] != values.shape[0]:
        raise ValueError("slopes must have shape (n_dirs, len(values))")
    return _bisect_margins_nb(values, slopes, float(cap), float(stop_gap))


# ---------------------------------------------------------------------------
# analytic l2 margin: min |z| / ||grad z||


def min_ratio_numpy(z, gnorm):
    """Return ``(margin, witness)``; witness is -1 when no neuron bounds the region."""
    z = np.asarray(z, dtype=np.float64)
    gnorm = np.asarray(gnorm, dtype=np.float64)
    ratio = np.full(z.shape, np.inf)
    on_plane = z == 0.0
    live = (gnorm > 0.0) & ~on_plane
    ratio[live] = np.abs(z[live]) / gnorm[live]
    ratio[on_plane] = 0.0
    if not ratio.size:
        return np.inf, -1
    w = int(np.argmin(ratio))
    if not np.isfinite(ratio[w]):
        return np.inf, -1
    return float(ratio[w]), w


@njit
def _min_ratio_nb(z, gnorm):
    best = np.inf
    w = -1
    for c in range(z.shape[0]):
        if z[c] == 0.0:
            r = 0.0
        elif gnorm[c] > 0.0:
            r = abs(z[c]) / gnorm[c]
        else:
            continue
        if r < best:
            best = r
            w = c
    return best, w


def _min_ratio_numba(z, gnorm):
    best, w = _min_ratio_nb(np.ascontiguousarray(z, dtype=np.float64),
                            np.ascontiguousarray(gnorm, dtype=np.float64))
    return float(best), int(w)


# ---------------------------------------------------------------------------
# GA crossover followed by box projection


def crossover_project_numpy(parents, idx_a, idx_b, alpha, lo, hi):
    a = parents[idx_a]
    b = parents[idx_b]
    child = alpha[:, None] * a + (1.0 - alpha)[:, None] * b
    return np.minimum(np.maximum(child, lo[None, :]), hi[None, :])


@njit
def _crossover_project_nb(parents, idx_a, idx_b, alpha, lo, hi):
    n = idx_a.shape[0]
    dim = parents.shape[1]
    out = np.empty((n, dim))
    for r in range(n):
        al = alpha[r]
        be = 1.0 - al
        pa = idx_a[r]
        pb = idx_b[r]
        for k in range(dim):
            v = al * parents[pa, k] + be * parents[pb, k]
            if v < lo[k]:
                v = lo[k]
            if v > hi[k]:
                v = hi[k]
            out[r, k] = v
    return out


def _crossover_project_numba(parents, idx_a, idx_b, alpha, lo, hi):
    return _crossover_project_nb(
        np.ascontiguousarray(parents, dtype=np.float64),
        np.ascontiguousarray(idx_a, dtype=np.int64),
        np.ascontiguousarray(idx_b, dtype=np.int64),
        np.ascontiguousarray(alpha, dtype=np.float64),
        np.ascontiguousarray(lo, dtype=np.float64),
        np.ascontiguousarray(hi, dtype=np.float64),
    )


if USE_NUMBA:
    bisect_margins = _bisect_margins_numba
    min_ratio = _min_ratio_numba
    crossover_project = _crossover_project_numba
else:
    bisect_margins = bisect_margins_numpy
    min_ratio = min_ratio_numpy
    crossover_project = crossover_project_numpy
