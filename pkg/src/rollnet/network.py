"""Fully connected piecewise-linear networks.

A network has ``M`` hidden layers ``z^i = W^i a^{i-1} + b^i``,
``a^i = act(z^i)`` and an affine output layer ``f(x) = W^{M+1} a^M + b^{M+1}``.
Layer indices below are 1-based for hidden layers, matching ``a^0 = x``.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

MODEL_VERSION = "roll-model/1"
ACTIVATIONS = ("relu", "leaky_relu")
DEFAULT_LEAKY_ALPHA = 0.01


class ShapeError(ValueError):
    pass


class StaleTraceError(RuntimeError):
    pass


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable FC network.

    Parameters
    ----------
    weights : sequence of (N_i, N_{i-1}) arrays, hidden layers then output.
    biases : sequence of (N_i,) arrays.
    activation : ``"relu"`` or ``"leaky_relu"``.
    alpha : negative-side slope for leaky ReLU (ignored for ReLU).
    """

    weights: tuple
    biases: tuple
    activation: str = "relu"
    alpha: float = 0.0
    dtype: type = field(default=np.float64)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        alpha = float(self.alpha) if self.activation == "leaky_relu" else 0.0
        if self.activation == "leaky_relu" and not 0.0 < alpha < 1.0:
            raise ValueError("leaky ReLU slope must lie in (0, 1)")
        ws = tuple(_frozen(w, self.dtype) for w in self.weights)
        bs = tuple(_frozen(b, self.dtype) for b in self.biases)
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise ShapeError(f"layer {i + 1}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i + 1} expects {w.shape[1]} inputs, previous layer has {ws[i - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i + 1} has non-finite parameters")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "alpha", alpha)

    @property
    def n_hidden(self):
        return len(self.weights) - 1

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @property
    def hidden_sizes(self):
        return tuple(w.shape[0] for w in self.weights[:-1])

    @property
    def n_neurons(self):
        return int(sum(self.hidden_sizes))

    @property
    def slope(self):
        """Activation slope on the inactive side (0 for ReLU)."""
        return self.alpha

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(self.activation.encode())
        h.update(np.float64(self.alpha).tobytes())
        for w, b in zip(self.weights, self.biases):
            h.update(np.ascontiguousarray(w).tobytes())
            h.update(np.ascontiguousarray(b).tobytes())
        return h.hexdigest()

    def astype(self, dtype):
        return Network(self.weights, self.biases, self.activation, self.alpha, dtype)

    def params(self):
        """Flat list ``[W1, b1, W2, b2, ...]`` of read-only arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_params(cls, params, activation="relu", alpha=0.0, dtype=np.float64):
        return cls(tuple(params[0::2]), tuple(params[1::2]), activation, alpha, dtype)

    def __call__(self, x):
        return forward_batch(self, x)[-1]


def random_network(sizes, rng=None, activation="relu", alpha=DEFAULT_LEAKY_ALPHA,
                   bias_scale=0.1, dtype=np.float64):
    """He-initialised network with layer widths ``sizes = (D, N_1, ..., N_M, L)``."""
    rng = np.random.default_rng(rng)
    ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        ws.append(rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)))
        bs.append(rng.normal(0.0, bias_scale, size=n_out))
    if activation != "leaky_relu":
        alpha = 0.0
    return Network(tuple(ws), tuple(bs), activation, alpha, dtype)


def activation_slopes(z, alpha):
    """d a / d z with the ``o = +1 at z = 0`` convention."""
    return np.where(z >= 0, 1.0, alpha).astype(z.dtype, copy=False)


def activate(z, alpha):
    return np.where(z >= 0, z, alpha * z) if alpha else np.maximum(z, 0.0)


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Per-layer pre-activations ``z`` and activations ``a`` for one input.

    ``a[0]`` is the input, ``z[i]`` / ``a[i]`` for ``i = 1..M`` are hidden
    layers (``z[0]`` is ``None``), ``output`` is the logit vector.
    """

    z: tuple
    a: tuple
    output: np.ndarray
    fingerprint: str

    @property
    def x(self):
        return self.a[0]


def forward(net, x):
    x = np.asarray(x, dtype=net.dtype)
    if x.shape != (net.input_dim,):
        raise ShapeError(f"expected input of shape ({net.input_dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input has non-finite entries")
    zs, acts = [None], [x]
    a = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = w @ a + b
        a = activate(z, net.alpha)
        zs.append(z)
        acts.append(a)
    out = net.weights[-1] @ a + net.biases[-1]
    return ForwardTrace(tuple(zs), tuple(acts), out, net.fingerprint())


def forward_batch(net, X):
    """Hidden pre-activations and output for a batch.

    Returns a list ``[z^1, ..., z^M, f]`` of arrays with leading batch axis.
    """
    X = np.asarray(X, dtype=net.dtype)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[-1] != net.input_dim:
        raise ShapeError(f"expected {net.input_dim} input features, got {X.shape[-1]}")
    out = []
    a = X
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = a @ w.T + b
        out.append(z)
        a = activate(z, net.alpha)
    out.append(a @ net.weights[-1].T + net.biases[-1])
    return out


def predict(net, X):
    logits = forward_batch(net, X)[-1]
    if logits.shape[1] == 1:
        return (logits[:, 0] >= 0).astype(np.int64)
    return np.argmax(logits, axis=1)


def backprop_scalar(net, trace, seed):
    """Reverse pass for ``seed . f(x)``.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is
    ``[dW1, db1, dW2, db2, ...]``.
    """
    if trace.fingerprint != net.fingerprint():
        raise StaleTraceError("trace was produced by a different network")
    seed = np.asarray(seed, dtype=net.dtype)
    if seed.shape != (net.output_dim,):
        raise ShapeError(f"seed must have shape ({net.output_dim},)")
    n_layers = len(net.weights)
    grads = [None] * (2 * n_layers)
    delta = seed  # d/d of current layer's pre-activation
    for k in range(n_layers - 1, -1, -1):
        a_prev = trace.a[k]
        grads[2 * k] = np.outer(delta, a_prev)
        grads[2 * k + 1] = delta.copy()
        delta = net.weights[k].T @ delta
        if k:
            delta = delta * activation_slopes(trace.z[k], net.alpha)
    return grads, delta


def input_gradients(net, X, seeds):
    """Batched ``d (seed_n . f(x_n)) / d x_n``; ``seeds`` is (B, L)."""
    X = np.asarray(X, dtype=net.dtype)
    zs = forward_batch(net, X)[:-1]
    delta = np.asarray(seeds, dtype=net.dtype) @ net.weights[-1]
    for k in range(net.n_hidden, 0, -1):
        delta = delta * activation_slopes(zs[k - 1], net.alpha)
        delta = delta @ net.weights[k - 1]
    return delta


def loss_softmax_xent(logits, label):
    """Cross-entropy of softmax(logits) against ``label``; returns ``(loss, grad)``."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ShapeError("softmax cross-entropy needs at least two logits")
    if not 0 <= int(label) < logits.shape[0]:
        raise IndexError(f"label {label} out of range for {logits.shape[0]} classes")
    m = logits.max()
    lse = m + np.log(np.sum(np.exp(logits - m)))
    p = np.exp(logits - lse)
    grad = p.copy()
    grad[int(label)] -= 1.0
    return float(lse - logits[int(label)]), grad


def loss_sigmoid_xent(logit, label):
    """Binary cross-entropy with a single logit; ``label`` in {0, 1}."""
    logit = float(np.asarray(logit).reshape(()))
    if label not in (0, 1):
        raise IndexError("binary label must be 0 or 1")
    # log(1 + exp(-s)) for s = (2y-1) * logit, computed stably
    s = logit if label == 1 else -logit
    loss = np.logaddexp(0.0, -s)
    p = 0.5 * (1.0 + np.tanh(0.5 * logit))
    return float(loss), np.array([p - label])


# ---------------------------------------------------------------------------
# model files


def to_json(net):
    return {
        "version": MODEL_VERSION,
        "activation": net.activation,
        "alpha": float(net.alpha),
        "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(net.weights, net.biases)],
    }


def from_json(obj, dtype=np.float64):
    if obj.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {obj.get('version')!r}")
    layers = obj["layers"]
    return Network(
        tuple(np.asarray(l["w"], dtype=dtype).reshape(len(l["b"]), -1) for l in layers),
        tuple(np.asarray(l["b"], dtype=dtype) for l in layers),
        obj.get("activation", "relu"),
        float(obj.get("alpha", 0.0)),
        dtype,
    )


def save_model(net, path):
    with open(path, "w") as fh:
        json.dump(to_json(net), fh)


def load_model(path, dtype=np.float64):
    with open(path) as fh:
        return from_json(json.load(fh), dtype)
