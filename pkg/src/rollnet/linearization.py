"""Activation patterns and input gradients of every hidden neuron.

Three interchangeable engines produce the (N_total, D) matrix of
``grad_x z^i_j``:

* ``perturbation`` -- freeze the pattern into a linear network and push a
  zero input plus the D one-hot inputs through it in one batched forward;
  gradients are differences against the zero row.
* ``dp`` -- chain the layer Jacobians ``J^i = W^i diag(s^{i-1}) J^{i-1}``.
* ``backprop`` -- one reverse pass per neuron on the autodiff tape (slow;
  kept as the reference the other two are checked against).
"""

from dataclasses import dataclass

import numpy as np

from rollnet import tape
from rollnet.network import ShapeError, activation_slopes, forward, forward_batch

TOL_FEAS = 1e-9
ENGINES = ("perturbation", "dp", "backprop")


@dataclass(frozen=True, eq=False)
class ActivationPattern:
    """Sign indicators ``o^i`` in {-1, +1} for each hidden layer."""

    signs: tuple

    @property
    def layer_sizes(self):
        return tuple(s.shape[0] for s in self.signs)

    @property
    def flat(self):
        if not self.signs:
            return np.zeros(0, dtype=np.int8)
        return np.concatenate(self.signs)

    def key(self):
        return self.flat.tobytes()

    def __eq__(self, other):
        return isinstance(other, ActivationPattern) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def slopes(self, alpha=0.0):
        """Frozen activation slopes: 1 where o = +1, ``alpha`` where o = -1."""
        return [np.where(s > 0, 1.0, alpha) for s in self.signs]


def pattern_from_z(zs):
    return ActivationPattern(tuple(np.where(z >= 0, 1, -1).astype(np.int8) for z in zs))


def extract_pattern(trace):
    return pattern_from_z(trace.z[1:])


def _check_pattern(net, pattern):
    if pattern.layer_sizes != net.hidden_sizes:
        raise ShapeError(f"pattern layers {pattern.layer_sizes} != network {net.hidden_sizes}")


# ---------------------------------------------------------------------------
# perturbation engine


def _crafted_inputs(dim, axes, dtype):
    rows = np.zeros((len(axes) + 1, dim), dtype=dtype)
    rows[np.arange(1, len(axes) + 1), axes] = 1.0
    return rows


def perturbation_layer_grads(net, slopes, axes=None, max_rows=None):
    """Gradients of hidden neurons for a batch of frozen patterns.

    Parameters
    ----------
    slopes : list over hidden layers of (B, N_i) arrays of frozen slopes.
    axes : input axes to differentiate against (default: all D).
    max_rows : cap on crafted rows per pass; axes are processed in chunks.

    Returns
    -------
    list over hidden layers of (B, N_i, len(axes)) arrays.
    """
    D = net.input_dim
    axes = np.arange(D) if axes is None else np.asarray(axes, dtype=np.int64)
    B = slopes[0].shape[0] if slopes else 1
    chunk = len(axes) if not max_rows else max(1, int(max_rows) - 1)
    out = [np.empty((B, n, len(axes)), dtype=net.dtype) for n in net.hidden_sizes]
    for start in range(0, len(axes), chunk):
        sel = axes[start:start + chunk]
        rows = _crafted_inputs(D, sel, net.dtype)
        # biases cancel in zhat(e_k) - zhat(0); leaving them out keeps the
        # difference free of cancellation error (first layer rows are exact)
        zhat = rows @ net.weights[0].T
        zhat = np.broadcast_to(zhat, (B,) + zhat.shape)
        for i in range(net.n_hidden):
            if i:
                ahat = zhat * slopes[i - 1][:, None, :]
                zhat = ahat @ net.weights[i].T
            diff = zhat[:, 1:, :] - zhat[:, :1, :]
            out[i][:, :, start:start + len(sel)] = diff.transpose(0, 2, 1)
    return out


def perturbation_gradients(net, pattern, max_rows=None):
    _check_pattern(net, pattern)
    slopes = [s[None, :].astype(net.dtype) for s in pattern.slopes(net.alpha)]
    if not slopes:
        return np.zeros((0, net.input_dim), dtype=net.dtype)
    grads = perturbation_layer_grads(net, slopes, max_rows=max_rows)
    return np.concatenate([g[0] for g in grads], axis=0)


# ---------------------------------------------------------------------------
# dynamic programming engine


def dp_layer_grads(net, slopes):
    """Layer Jacobians for a batch of frozen patterns; (B, N_i, D) per layer."""
    B = slopes[0].shape[0] if slopes else 1
    J = np.broadcast_to(net.weights[0], (B,) + net.weights[0].shape)
    out = [np.array(J)]
    for i in range(1, net.n_hidden):
        J = net.weights[i] @ (slopes[i - 1][:, :, None] * J)
        out.append(J)
    return out


def dp_gradients(net, pattern):
    _check_pattern(net, pattern)
    if not net.n_hidden:
        return np.zeros((0, net.input_dim), dtype=net.dtype)
    slopes = [s[None, :].astype(net.dtype) for s in pattern.slopes(net.alpha)]
    return np.concatenate([g[0] for g in dp_layer_grads(net, slopes)], axis=0)


# ---------------------------------------------------------------------------
# per-neuron back-propagation (reference)


def backprop_neuron_gradients(net, X):
    """Input gradient of every hidden neuron via one reverse pass per neuron.

    Each neuron gets its own forward pass up to its layer followed by a
    backward pass, batched over the rows of ``X``. Returns (B, N_total, D).
    """
    X = np.atleast_2d(np.asarray(X, dtype=net.dtype))
    B, D = X.shape
    out = np.empty((B, net.n_neurons, D), dtype=net.dtype)
    c = 0
    for i, n in enumerate(net.hidden_sizes):
        for j in range(n):
            x = tape.param(X)
            h = x
            for k in range(i + 1):
                z = tape.linear(h, net.weights[k], net.biases[k])
                if k < i:
                    h = tape.activation(z, net.alpha)
            seed = np.zeros(z.shape, dtype=net.dtype)
            seed[:, j] = 1.0
            z.backward(seed)
            out[:, c, :] = x.grad
            c += 1
    return out


# ---------------------------------------------------------------------------
# linearization


@dataclass(frozen=True, eq=False)
class Linearization:
    """Local affine description of every hidden neuron around ``x``.

    ``z`` is the flattened (N_total,) vector of pre-activations, ``grads`` the
    (N_total, D) matrix of their input gradients, ordered layer by layer.
    """

    x: np.ndarray
    pattern: ActivationPattern
    z: np.ndarray
    grads: np.ndarray

    @property
    def layer_sizes(self):
        return self.pattern.layer_sizes

    @property
    def signs(self):
        return self.pattern.flat.astype(np.float64)

    def neuron(self, c):
        """Map a flat neuron index to ``(layer, j)`` with 1-based hidden layer."""
        for i, n in enumerate(self.layer_sizes):
            if c < n:
                return i + 1, int(c)
            c -= n
        raise IndexError("neuron index out of range")

    def values(self):
        cuts = np.cumsum(self.layer_sizes)[:-1]
        return np.split(self.z, cuts)

    def offsets(self):
        return self.z - self.grads @ self.x

    def to_json(self):
        return {
            "x": self.x.tolist(),
            "layer_sizes": list(self.layer_sizes),
            "signs": self.pattern.flat.tolist(),
            "z": self.z.tolist(),
            "grads": self.grads.tolist(),
        }


def linearize(net, x, engine="perturbation", max_rows=None):
    trace = forward(net, x)
    pattern = extract_pattern(trace)
    if engine == "perturbation":
        grads = perturbation_gradients(net, pattern, max_rows=max_rows)
    elif engine == "dp":
        grads = dp_gradients(net, pattern)
    elif engine == "backprop":
        grads = backprop_neuron_gradients(net, trace.x)[0]
    else:
        raise ValueError(f"unknown engine {engine!r}; pick one of {ENGINES}")
    z = np.concatenate(trace.z[1:]) if net.n_hidden else np.zeros(0)
    return Linearization(trace.x, pattern, z, grads)


def linearize_batch(net, X, chunk=16, max_rows=None):
    """Yield a perturbation-engine ``Linearization`` for every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=net.dtype))
    for start in range(0, X.shape[0], chunk):
        Xc = X[start:start + chunk]
        zs = forward_batch(net, Xc)[:-1]
        slopes = [activation_slopes(z, net.alpha) for z in zs]
        grads = perturbation_layer_grads(net, slopes, max_rows=max_rows)
        for b in range(Xc.shape[0]):
            zb = [z[b] for z in zs]
            yield Linearization(
                Xc[b].copy(),
                pattern_from_z(zb),
                np.concatenate(zb),
                np.concatenate([g[b] for g in grads], axis=0),
            )


def constraint_coefficients(lin):
    """One halfspace ``sign * (normal . xbar + offset) >= 0`` per hidden neuron."""
    offsets = lin.offsets()
    signs = lin.pattern.flat
    return [(lin.grads[c].copy(), float(offsets[c]), int(signs[c])) for c in range(lin.z.shape[0])]


def constraint_values(lin, points):
    """Signed constraint values at ``points`` (P, D); shape (P, N_total)."""
    points = np.atleast_2d(points)
    return lin.signs * (points @ lin.grads.T + lin.offsets())


def contains(lin, points, tol=TOL_FEAS):
    """Sign-constraint membership of ``points`` in the region of ``lin``."""
    vals = constraint_values(lin, points)
    if vals.shape[1] == 0:
        return np.ones(vals.shape[0], dtype=bool)
    return vals.min(axis=1) >= -tol


def op_count_estimate(net_or_sizes):
    """Idealised operation counts ``(perturbation, backprop)`` for all neuron gradients."""
    sizes = getattr(net_or_sizes, "hidden_sizes", net_or_sizes)
    sizes = list(sizes)
    M = len(sizes)
    return 2 * M, int(sum(2 * (i + 1) * n for i, n in enumerate(sizes)))
