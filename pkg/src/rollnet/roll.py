"""Margin regularizers.

The per-neuron score is ``||grad_x z||^2 + C * max(0, 1 - |z|)``. The
regularizer averages the scores of the top ``gamma`` percent neurons of
each point (or only the largest one, ``gamma="max"``) and is added to the
cross-entropy with weight ``lam``.

Two evaluation paths exist: plain numpy functions over ``Linearization``
objects (used for reporting and as finite-difference oracles) and
``objective_tape`` which builds a differentiable graph for training.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from rollnet import tape
from rollnet.certify import l2_margin
from rollnet.linearization import linearize, perturbation_layer_grads
from rollnet.network import activation_slopes, forward_batch

MAX_ONLY = "max"


@dataclass(frozen=True)
class RollConfig:
    lam: float = 0.0
    c: float = 0.0
    gamma: object = 100.0
    subsample_axes: int = None
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0 or self.c < 0:
            raise ValueError("lambda and C must be non-negative")
        if self.gamma != MAX_ONLY:
            g = float(self.gamma)
            if not 0.0 < g <= 100.0:
                raise ValueError("gamma must lie in (0, 100] or be 'max'")
            object.__setattr__(self, "gamma", g)
        if self.subsample_axes is not None:
            if int(self.subsample_axes) < 1:
                raise ValueError("subsample_axes must be >= 1")
            if self.gamma != 100.0:
                raise ValueError("axis subsampling is only unbiased for gamma = 100")

    @property
    def full_set(self):
        return self.gamma == 100.0

    def to_json(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        return cls(**{k: obj[k] for k in ("lam", "c", "gamma", "subsample_axes", "seed") if k in obj})


def top_set_size(n, gamma):
    if n == 0:
        raise ValueError("network has no hidden neurons")
    if gamma == MAX_ONLY:
        return 1
    return max(1, min(n, math.ceil(float(gamma) / 100.0 * n - 1e-12)))


def neuron_tsvm_loss(z, grad, c):
    grad = np.asarray(grad, dtype=np.float64)
    return float(grad @ grad + c * max(0.0, 1.0 - abs(float(z))))


def neuron_scores(lin, c):
    return np.einsum("ij,ij->i", lin.grads, lin.grads) + c * np.maximum(0.0, 1.0 - np.abs(lin.z))


def top_mean(scores, gamma):
    k = top_set_size(scores.shape[-1], gamma)
    if k == scores.shape[-1]:
        return float(np.mean(scores))
    order = np.argsort(-scores, kind="stable")
    return float(np.mean(scores[order[:k]]))


def raw_margin_objective(lin, lam):
    """``-lam`` times the l2 margin (evaluation only; not used for training)."""
    if lam == 0:
        return 0.0
    return -lam * l2_margin(lin).margin


def roll_regularizer(lins, cfg):
    """Batch mean of the per-point top-gamma mean of neuron scores."""
    lins = list(lins)
    if not lins:
        raise ValueError("empty batch")
    return float(np.mean([top_mean(neuron_scores(lin, cfg.c), cfg.gamma) for lin in lins]))


def axis_gradient_energy(net, x, axes=None):
    """``sum_(i,j) (d z^i_j / d x_k)^2`` for each requested input axis ``k``."""
    zs = forward_batch(net, x)[:-1]
    slopes = [activation_slopes(z, net.alpha) for z in zs]
    grads = perturbation_layer_grads(net, slopes, axes=axes)
    return sum(np.sum(g[0] ** 2, axis=0) for g in grads)


def roll_regularizer_subsampled(net, x, cfg, rng=None):
    """Unbiased estimate of the gamma=100 regularizer from ``subsample_axes`` axes."""
    D = net.input_dim
    d_sub = D if cfg.subsample_axes is None else int(cfg.subsample_axes)
    if d_sub > D:
        raise ValueError(f"subsample_axes={d_sub} exceeds input dimension {D}")
    if not cfg.full_set:
        raise ValueError("axis subsampling requires gamma = 100")
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    zs = forward_batch(net, x)[:-1]
    z = np.concatenate([zz[0] for zz in zs])
    n = z.shape[0]
    hinge = cfg.c * np.sum(np.maximum(0.0, 1.0 - np.abs(z)))
    axes = np.sort(rng.choice(D, size=d_sub, replace=False))
    energy = axis_gradient_energy(net, x, axes)
    return float((D / n) * np.mean(energy) + hinge / n)


def objective_value(net, X, y, cfg):
    """Mean cross-entropy plus ``lam`` times the regularizer, in numpy."""
    X = np.atleast_2d(np.asarray(X, dtype=net.dtype))
    logits = forward_batch(net, X)[-1].astype(np.float64)
    y = np.asarray(y)
    if logits.shape[1] == 1:
        s = logits[:, 0] * (2.0 * y - 1.0)
        xent = float(np.mean(np.logaddexp(0.0, -s)))
    else:
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        xent = float(np.mean(lse - logits[np.arange(len(y)), y]))
    if cfg.lam == 0:
        return xent
    return xent + cfg.lam * roll_regularizer([linearize(net, x) for x in X], cfg)


# ---------------------------------------------------------------------------
# differentiable objective


def objective_tape(params, X, y, cfg, alpha=0.0, axes=None):
    """Training objective as a tape graph.

    Parameters
    ----------
    params : list of ``Tensor`` ``[W1, b1, ..., W_out, b_out]``.
    X, y : batch of inputs (B, D) and labels.
    axes : input axes used for the gradient-norm term; ``None`` means all,
        otherwise the term is rescaled by ``D / len(axes)``.

    The top-gamma neuron set and the activation pattern are read off the
    current values and held constant in the graph.
    """
    Ws, bs = params[0::2], params[1::2]
    M = len(Ws) - 1
    dtype = Ws[0].data.dtype
    X = np.asarray(X, dtype=dtype)
    h = tape.const(X)
    zs, slopes = [], []
    for i in range(M):
        z = tape.linear(h, Ws[i], bs[i])
        s = activation_slopes(z.data, alpha)
        h = z * s
        zs.append(z)
        slopes.append(s)
    logits = tape.linear(h, Ws[M], bs[M])
    loss = tape.sigmoid_xent(logits, y) if logits.shape[1] == 1 else tape.softmax_xent(logits, y)
    if cfg.lam == 0:
        return loss
    if M == 0:
        raise ValueError("network has no hidden neurons")

    B, D = X.shape
    axes = np.arange(D) if axes is None else np.asarray(axes)
    scale = D / len(axes)
    rows = np.zeros((len(axes) + 1, D), dtype=dtype)
    rows[np.arange(1, len(axes) + 1), axes] = 1.0
    spread = np.zeros((B, 1), dtype=dtype)
    scores = []
    zhat = tape.linear(tape.const(rows), Ws[0])  # biases cancel in the differences
    for i in range(M):
        if i:
            zhat = tape.linear(zhat * slopes[i - 1][:, None, :], Ws[i])
        diff = zhat[..., 1:, :] - zhat[..., :1, :]
        gsq = tape.tsum(tape.square(diff), axis=-2)
        if i == 0:
            gsq = gsq + spread
        if scale != 1.0:
            gsq = gsq * scale
        hinge = tape.relu0(1.0 - tape.tabs(zs[i]))
        scores.append(gsq + hinge * cfg.c if cfg.c else gsq)
    scores = tape.concat(scores, axis=1)
    n = scores.shape[1]
    if cfg.gamma == 100.0:
        reg = tape.mean(scores)
    else:
        k = top_set_size(n, cfg.gamma)
        if k == 1:
            order = np.argmax(scores.data, axis=1)[:, None]
        else:
            order = np.argsort(-scores.data, axis=1, kind="stable")[:, :k]
        mask = np.zeros(scores.shape, dtype=dtype)
        np.put_along_axis(mask, order, 1.0, axis=1)
        reg = tape.tsum(scores * mask) * (1.0 / (k * B))
    return loss + reg * cfg.lam
