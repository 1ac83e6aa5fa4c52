"""Margins of the activation region around a point, and region counting.

All margins are distances in the network's input space. ``capped`` marks a
direction in which no region boundary was found below ``CAP``; the margin
is then reported as ``CAP``.
"""

from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from rollnet import kernels
from rollnet.linearization import TOL_FEAS, constraint_values, linearize, linearize_batch
from rollnet.network import forward_batch, input_gradients

CAP = 2.0 ** 60
STOP_GAP = 1e-7
JACOBIAN_GRID = 1e-9
UNIT_TOL = 1e-9

__all__ = [
    "Certificate", "ClrReport", "CoordinateBounds",
    "l2_margin", "directional_feasible", "directional_margin", "l1_margin",
    "axis_margins", "coordinate_stability_bounds", "count_clr", "percentiles",
    "certify_points",
]


@dataclass(frozen=True)
class Certificate:
    kind: str
    margin: float
    witness: tuple = None
    gap: float = 0.0
    capped: bool = False
    diagnostic: str = ""
    direction: int = None


@dataclass(frozen=True)
class ClrReport:
    upper: int
    lower: int
    boundary_points: int
    n_points: int

    @property
    def tight(self):
        return self.upper == self.lower


CoordinateBounds = namedtuple("CoordinateBounds", "low high capped_low capped_high")


def l2_margin(lin):
    """Distance from ``lin.x`` to the nearest neuron hyperplane."""
    if lin.z.size == 0:
        return Certificate("l2", CAP, capped=True, diagnostic="no hidden neurons")
    gnorm = np.linalg.norm(lin.grads, axis=1)
    margin, w = kernels.min_ratio(lin.z, gnorm)
    if w < 0:
        return Certificate("l2", CAP, capped=True,
                           diagnostic="every neuron is constant on the region")
    diag = ""
    if margin == 0.0:
        diag = ("neuron with zero gradient sits at z=0" if gnorm[w] == 0.0
                else "point lies on a region boundary")
    return Certificate("l2", margin, witness=lin.neuron(w), diagnostic=diag)


def _unit(direction, dim):
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (dim,):
        raise ValueError(f"direction must have shape ({dim},)")
    if abs(np.linalg.norm(d) - 1.0) > UNIT_TOL:
        raise ValueError("direction must be a unit vector")
    return d


def directional_feasible(lin, direction, eps):
    """True iff ``x + eps * direction`` satisfies every constraint of the region."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    d = _unit(direction, lin.x.shape[0])
    return bool(np.all(constraint_values(lin, lin.x + eps * d) >= -TOL_FEAS))


def _bisect(lin, slopes):
    values = lin.signs * lin.z
    return kernels.bisect_margins(values, slopes, CAP, STOP_GAP)


def directional_margin(lin, direction):
    d = _unit(direction, lin.x.shape[0])
    slopes = (lin.signs * (lin.grads @ d))[None, :]
    lo, hi, capped = _bisect(lin, slopes)
    if capped[0]:
        return Certificate("directional", CAP, capped=True, gap=np.inf)
    return Certificate("directional", float(lo[0]), gap=float(hi[0] - lo[0]))


def axis_margins(lin):
    """Directional margins along ``+e_k`` and ``-e_k`` for every axis.

    Returns ``(lower, upper, capped)`` arrays of shape (2, D): row 0 is the
    positive direction, row 1 the negative one.
    """
    D = lin.x.shape[0]
    s = lin.signs[None, :] * lin.grads.T
    lo, hi, capped = _bisect(lin, np.concatenate([s, -s], axis=0))
    return lo.reshape(2, D), hi.reshape(2, D), capped.reshape(2, D)


def l1_margin(lin):
    lo, hi, capped = axis_margins(lin)
    if np.all(capped):
        return Certificate("l1", CAP, capped=True, gap=np.inf)
    flat = lo.ravel()
    d = int(np.argmin(flat))
    gap = float(np.min(hi) - flat[d])
    D = lin.x.shape[0]
    signed_axis = (d % D + 1) * (1 if d < D else -1)
    return Certificate("l1", float(flat[d]), gap=gap, direction=signed_axis)


def coordinate_stability_bounds(net, x, lin=None):
    """Per-axis interval ``[-margin(-e_k), +margin(+e_k)]`` of a stable gradient."""
    lin = linearize(net, x) if lin is None else lin
    lo, _, capped = axis_margins(lin)
    return CoordinateBounds(-lo[1], lo[0], capped[1], capped[0])


def _jacobians(net, X):
    L = net.output_dim
    eye = np.eye(L, dtype=net.dtype)
    return np.stack([
        input_gradients(net, X, np.broadcast_to(eye[l], (X.shape[0], L))) for l in range(L)
    ], axis=1)


def count_clr(net, X):
    """Bracket the number of complete linear regions spanned by ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=net.dtype))
    if X.shape[0] == 0:
        return ClrReport(0, 0, 0, 0)
    zs = forward_batch(net, X)[:-1]
    if zs:
        signs = np.concatenate([np.where(z >= 0, 1, -1).astype(np.int8) for z in zs], axis=1)
        min_abs = np.concatenate([np.abs(z) for z in zs], axis=1).min(axis=1)
    else:
        signs = np.zeros((X.shape[0], 0), dtype=np.int8)
        min_abs = np.full(X.shape[0], np.inf)
    patterns = {row.tobytes() for row in signs}
    J = _jacobians(net, X).astype(np.float64)
    grid = np.rint(J / JACOBIAN_GRID) + 0.0
    jacs = {row.tobytes() for row in grid.reshape(X.shape[0], -1)}
    return ClrReport(len(patterns), len(jacs), int(np.sum(min_abs <= TOL_FEAS)), X.shape[0])


def percentiles(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return {k: None for k in ("p25", "p50", "p75", "p100")}
    p = np.percentile(values, [25, 50, 75, 100])
    return {"p25": float(p[0]), "p50": float(p[1]), "p75": float(p[2]), "p100": float(p[3])}


def certify_points(net, X, l1=True, chunk=16):
    """Per-point l2 (and optionally l1) certificates for every row of ``X``."""
    rows = []
    for k, lin in enumerate(linearize_batch(net, X, chunk=chunk)):
        c2 = l2_margin(lin)
        rec = {"index": k, "l2": c2}
        if l1:
            rec["l1"] = l1_margin(lin)
        rows.append(rec)
    return rows


def pattern_matches(net, X, reference_signs):
    """Boolean per row of ``X``: does its activation pattern equal ``reference_signs``?"""
    zs = forward_batch(net, X)[:-1]
    signs = np.concatenate([np.where(z >= 0, 1, -1) for z in zs], axis=1)
    return np.all(signs == np.asarray(reference_signs)[None, :], axis=1)

