"""l1 gradient distortion inside an l-infinity ball clipped to the data domain.

``distortion(x, x')`` is ``||grad f(x')_y - grad f(x)_y||_1``. Its expectation
is estimated by uniform sampling and its maximum is searched with a genetic
algorithm: uniform initial population, truncation selection of the best
quarter, affine crossover of random survivor pairs with weights drawn from
``[-0.25, 1.25]``, and projection back onto the feasible box. No mutation.
"""

from dataclasses import dataclass, replace

import numpy as np

from rollnet import kernels
from rollnet.network import forward_batch, input_gradients, predict


@dataclass(frozen=True)
class AttackConfig:
    radius: float
    lo: float = -np.inf
    hi: float = np.inf
    population: int = 4800
    epochs: int = 30
    keep_fraction: float = 0.25
    alpha_range: tuple = (-0.25, 1.25)
    seed: int = 0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.population < 4:
            raise ValueError("population must be at least 4")
        if not 0.0 < self.keep_fraction < 1.0:
            raise ValueError("keep_fraction must lie in (0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    def desk(self):
        """Smaller search (480 members, 15 epochs) for quick runs."""
        return replace(self, population=480, epochs=15)


@dataclass(frozen=True, eq=False)
class DistortionReport:
    expected_l1: float
    max_l1: float
    argmax: np.ndarray
    prediction_flipped: bool
    uniform_max_l1: float = float("nan")
    best_per_epoch: tuple = ()

    def to_json(self, cfg=None, index=None):
        out = {"expected_l1": self.expected_l1, "max_l1": self.max_l1,
               "flipped": bool(self.prediction_flipped),
               "uniform_max_l1": self.uniform_max_l1}
        if cfg is not None:
            out.update(epochs=cfg.epochs, population=cfg.population, seed=cfg.seed)
        if index is not None:
            out["index"] = int(index)
        return out


def _coordinate(net, y):
    # a single-logit binary model has one gradient regardless of the label
    if net.output_dim == 1:
        return 0
    if not 0 <= int(y) < net.output_dim:
        raise IndexError(f"label {y} out of range for {net.output_dim} outputs")
    return int(y)


def box(x, cfg):
    x = np.asarray(x, dtype=np.float64)
    lo = np.maximum(x - cfg.radius, cfg.lo)
    hi = np.minimum(x + cfg.radius, cfg.hi)
    return lo, hi


def label_gradients(net, X, y):
    """Reverse pass for the label logit, batched over the rows of ``X``.

    The reference point and the population go through this same code path,
    so two points with the same activation pattern get bit-identical gradients.
    """
    X = np.atleast_2d(X)
    seeds = np.zeros((X.shape[0], net.output_dim))
    seeds[:, _coordinate(net, y)] = 1.0
    return input_gradients(net, X, seeds)


def label_gradient(net, x, y):
    return label_gradients(net, np.asarray(x, dtype=np.float64)[None, :], y)[0]


def _signs(net, X):
    zs = forward_batch(net, np.atleast_2d(X))[:-1]
    if not zs:
        return np.zeros((np.atleast_2d(X).shape[0], 0), dtype=bool)
    return np.concatenate([z >= 0 for z in zs], axis=1)


def distortion(net, x, x_prime, y):
    return float(batch_distortion(net, np.atleast_2d(x_prime), Reference.at(net, x, y), y)[0])


class Reference:
    """Label gradient and activation pattern of the attacked point."""

    def __init__(self, grad, signs):
        self.grad, self.signs = grad, signs

    @classmethod
    def at(cls, net, x, y):
        x = np.asarray(x, dtype=np.float64)
        return cls(label_gradient(net, x, y), _signs(net, x)[0])


def batch_distortion(net, X_prime, ref, y, chunk=2048):
    """Distortion of every row of ``X_prime``.

    The gradient is a function of the activation pattern, so rows sharing
    the reference pattern get exactly 0 instead of a rounding residue.
    """
    out = np.empty(X_prime.shape[0])
    for s in range(0, X_prime.shape[0], chunk):
        Xc = X_prime[s:s + chunk]
        d = np.abs(label_gradients(net, Xc, y) - ref.grad).sum(axis=1)
        d[np.all(_signs(net, Xc) == ref.signs, axis=1)] = 0.0
        out[s:s + chunk] = d
    return out


def uniform_distortions(net, x, y, cfg, n_samples, rng=None):
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    lo, hi = box(x, cfg)
    pts = rng.uniform(lo, hi, size=(n_samples, lo.shape[0]))
    return batch_distortion(net, pts, Reference.at(net, x, y), y)


def expected_distortion(net, x, y, cfg, n_samples, rng=None):
    return float(np.mean(uniform_distortions(net, x, y, cfg, n_samples, rng)))


def ga_max_distortion(net, x, y, cfg, on_epoch=None):
    """Genetic search for the largest distortion; returns ``(max, argmax, best_per_epoch)``.

    ``on_epoch(epoch, population)`` is called after each projection step.
    """
    rng = np.random.default_rng(cfg.seed)
    x = np.asarray(x, dtype=np.float64)
    lo, hi = box(x, cfg)
    ref = Reference.at(net, x, y)
    pop = rng.uniform(lo, hi, size=(cfg.population, x.shape[0]))
    fit = batch_distortion(net, pop, ref, y)
    n_keep = max(1, int(cfg.keep_fraction * cfg.population))
    n_child = cfg.population - n_keep
    a_lo, a_hi = cfg.alpha_range
    j = int(np.argmax(fit))
    best, best_pt = float(fit[j]), pop[j].copy()
    trail = [best]

    for epoch in range(cfg.epochs):
        # survivors keep their fitness; only children are evaluated
        order = np.argsort(-fit, kind="stable")[:n_keep]
        survivors, kept = pop[order], fit[order]
        ia = rng.integers(0, n_keep, size=n_child)
        ib = rng.integers(0, n_keep, size=n_child)
        alpha = rng.uniform(a_lo, a_hi, size=n_child)
        children = kernels.crossover_project(survivors, ia, ib, alpha, lo, hi)
        pop = np.concatenate([survivors, children])
        fit = np.concatenate([kept, batch_distortion(net, children, ref, y)])
        j = int(np.argmax(fit))
        if fit[j] > best:
            best, best_pt = float(fit[j]), pop[j].copy()
        trail.append(best)
        if on_epoch is not None:
            on_epoch(epoch, pop)
    return best, best_pt, tuple(trail)


def attack_point(net, x, y, cfg, n_samples=8000):
    """Uniform-sample expectation and GA maximum of the distortion at ``x``."""
    samples = uniform_distortions(net, x, y, cfg, n_samples, np.random.default_rng(cfg.seed + 1))
    best, pt, trail = ga_max_distortion(net, x, y, cfg)
    flipped = bool(predict(net, pt[None, :])[0] != predict(net, np.asarray(x)[None, :])[0])
    return DistortionReport(float(samples.mean()), best, pt, flipped,
                            float(samples.max()), trail)
