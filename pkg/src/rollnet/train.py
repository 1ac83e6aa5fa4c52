"""Mini-batch training with the vanilla or the margin-regularized objective."""

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from rollnet import tape
from rollnet.certify import l2_margin
from rollnet.linearization import linearize_batch
from rollnet.network import Network, predict
from rollnet.roll import RollConfig, objective_tape

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_acc", "probe_median_eps2")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainRecipe:
    epochs: int = 5
    batch_size: int = 64
    optimizer: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.5
    roll: RollConfig = field(default_factory=RollConfig)
    seed: int = 0
    dtype: str = "float64"
    probe_size: int = 64
    probe_every: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def mnist_recipe(**overrides):
    """SGD with Nesterov momentum, lr 0.01, momentum 0.5, batch 64 (desk scale: 5 epochs)."""
    return replace(TrainRecipe(epochs=5, batch_size=64, optimizer="sgd", lr=0.01, momentum=0.5,
                               dtype="float32"), **overrides)


def toy_recipe(**overrides):
    """Full-batch Adam for 5000 epochs."""
    return replace(TrainRecipe(epochs=5000, batch_size=10 ** 9, optimizer="adam", lr=1e-3,
                               momentum=0.0, probe_every=100), **overrides)


# ---------------------------------------------------------------------------
# optimizers


class NesterovSGD:
    def __init__(self, params, lr, momentum):
        self.params, self.lr, self.mu = params, lr, momentum
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self):
        for p, v in zip(self.params, self.v):
            g = p.grad
            v *= self.mu
            v += g
            p.data -= self.lr * (g + self.mu * v)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr = params, lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def init_params(sizes, rng, dtype):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    params = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(n_in)
        params.append(rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype))
        params.append(rng.uniform(-bound, bound, size=n_out).astype(dtype))
    return params


# ---------------------------------------------------------------------------


def _batches(n, size, rng):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def _eval_objective(params, X, y, cfg, alpha, chunk):
    total = 0.0
    for start in range(0, X.shape[0], chunk):
        sl = slice(start, start + chunk)
        ts = [tape.const(p) for p in params]
        total += float(objective_tape(ts, X[sl], y[sl], cfg, alpha).data) * len(y[sl])
    return total / X.shape[0]


def probe_median_margin(net, X):
    net64 = net.astype(np.float64)
    margins = [l2_margin(lin).margin for lin in linearize_batch(net64, X)]
    return float(np.median(margins)) if margins else float("nan")


def train_model(train, val, hidden, recipe, activation="relu", alpha=0.0, n_outputs=None):
    """Train an FC network and return the snapshot with the lowest validation objective.

    Returns ``(network, history, best_epoch)``; ``history`` is a list of dicts
    keyed by ``HISTORY_COLUMNS``.
    """
    dtype = np.dtype(recipe.dtype)
    rng = np.random.default_rng(recipe.seed)
    n_outputs = n_outputs or max(train.n_classes, val.n_classes if val is not None else 0)
    sizes = (train.dim, *hidden, n_outputs)
    params = [tape.param(a) for a in init_params(sizes, rng, dtype)]
    if recipe.optimizer == "sgd":
        opt = NesterovSGD(params, recipe.lr, recipe.momentum)
    else:
        opt = Adam(params, recipe.lr)
    cfg = recipe.roll
    alpha = alpha if activation == "leaky_relu" else 0.0
    Xtr = train.features.astype(dtype)
    ytr = train.labels
    if val is None:
        val = train
    Xva = val.features.astype(dtype)
    yva = val.labels
    probe = val.features[:recipe.probe_size]
    # crafted-row graphs hold (rows, D + 1, width) tensors; size chunks to ~60M entries
    n_hidden = sum(hidden) or 1
    eval_chunk = int(np.clip(6e7 // ((train.dim + 1) * n_hidden), 1, 4096)) if cfg.lam else 4096

    def snapshot():
        return Network.from_params([p.data for p in params], activation, alpha, dtype)

    history = []
    best, best_loss, best_epoch = None, np.inf, -1
    for epoch in range(1, recipe.epochs + 1):
        losses, weights = [], []
        for idx in _batches(len(ytr), recipe.batch_size, rng):
            axes = None
            if cfg.lam and cfg.subsample_axes is not None:
                axes = np.sort(rng.choice(train.dim, size=int(cfg.subsample_axes), replace=False))
            for p in params:
                p.grad = None
            obj = objective_tape(params, Xtr[idx], ytr[idx], cfg, alpha, axes)
            value = float(obj.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite objective {value} at epoch {epoch}")
            obj.backward()
            opt.step()
            losses.append(value)
            weights.append(len(idx))
        train_loss = float(np.average(losses, weights=weights))
        val_loss = _eval_objective([p.data for p in params], Xva, yva, cfg, alpha, eval_chunk)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation objective at epoch {epoch}")
        net = snapshot()
        val_acc = float(np.mean(predict(net, Xva) == yva))
        eps2 = float("nan")
        if recipe.probe_size and (epoch % recipe.probe_every == 0 or epoch == recipe.epochs):
            eps2 = probe_median_margin(net, probe)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                        "val_acc": val_acc, "probe_median_eps2": eps2})
        log.info("epoch %d train %.5f val %.5f acc %.4f eps2 %.3g",
                 epoch, train_loss, val_loss, val_acc, eps2)
        if val_loss < best_loss:
            best, best_loss, best_epoch = net, val_loss, epoch
    return best, history, best_epoch


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow(row)
