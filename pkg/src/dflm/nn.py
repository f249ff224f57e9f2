"""Small dense networks with hand written reverse mode differentiation.

Training needs three things from a network: the scalar output, the gradient of
that output with respect to every parameter, and the gradient with respect to
the input point. All three come from explicit forward and backward passes over
plain numpy arrays, in float64 end to end, so there is no framework dependency
and results are bit reproducible for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh")


@dataclass
class Network:
    """Fully connected net; weights[l] has shape (out, in), biases[l] (out,)."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


@dataclass
class GradientSet:
    """Parameter gradients in the same layout as the network."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    step: int
    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    alpha: float = 1e-3
    beta1: float = 0.99
    beta2: float = 0.99
    eps: float = 1e-8


def init_network(layer_dims, activation: str = "relu", seed: int = 0) -> Network:
    """He style init: W ~ N(0, 2/fan_in), zero biases, deterministic in seed."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"bad layer_dims {layer_dims}")
    if dims[-1] != 1:
        raise ValueError("output dimension must be 1")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        std = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(dims, weights, biases, activation)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        # subgradient 0 at the kink
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _forward_cached(net: Network, X: np.ndarray):
    """Forward pass keeping pre-activations; hidden layers activated, output affine."""
    hs = [X]
    zs = []
    h = X
    last = net.n_layers - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W.T + b
        zs.append(z)
        h = _activate(net.activation, z) if l < last else z
        hs.append(h)
    return zs, hs


def forward(net: Network, x):
    """Evaluate the network. (k,) -> float, (n, k) -> (n,)."""
    X, single = _as_batch(x)
    _, hs = _forward_cached(net, X)
    out = hs[-1][:, 0]
    return float(out[0]) if single else out


def backprop(net: Network, x, upstream=1.0) -> GradientSet:
    """Gradients of upstream * u(x) with respect to every parameter.

    For a batch of points, upstream may be a vector and the result is the sum
    over the batch of upstream_i * du(x_i)/dtheta.
    """
    X, _ = _as_batch(x)
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (X.shape[0],))
    zs, hs = _forward_cached(net, X)
    delta = up[:, None].copy()  # (n, 1) at the output layer
    gw: list[np.ndarray] = [None] * net.n_layers
    gb: list[np.ndarray] = [None] * net.n_layers
    for l in range(net.n_layers - 1, -1, -1):
        gw[l] = delta.T @ hs[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l]) * _activate_grad(net.activation, zs[l - 1])
    return GradientSet(gw, gb)


def grad_input(net: Network, x):
    """Gradient of the output with respect to the input point(s)."""
    X, single = _as_batch(x)
    zs, _ = _forward_cached(net, X)
    delta = np.ones((X.shape[0], 1))
    for l in range(net.n_layers - 1, 0, -1):
        delta = (delta @ net.weights[l]) * _activate_grad(net.activation, zs[l - 1])
    dx = delta @ net.weights[0]
    return dx[0] if single else dx


def init_adam(net: Network, alpha: float = 1e-3, beta1: float = 0.99,
              beta2: float = 0.99, eps: float = 1e-8) -> AdamState:
    return AdamState(
        step=0,
        m_weights=[np.zeros_like(w) for w in net.weights],
        v_weights=[np.zeros_like(w) for w in net.weights],
        m_biases=[np.zeros_like(b) for b in net.biases],
        v_biases=[np.zeros_like(b) for b in net.biases],
        alpha=alpha, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(net: Network, grads: GradientSet, state: AdamState):
    """One bias corrected Adam update, in place. Returns (net, state).

    Zero gradients leave the parameters untouched on a fresh state; non finite
    gradients abort before any parameter is modified.
    """
    for l, g in enumerate(list(grads.weights) + list(grads.biases)):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in layer {l % net.n_layers}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for params, gs, ms, vs in (
        (net.weights, grads.weights, state.m_weights, state.v_weights),
        (net.biases, grads.biases, state.m_biases, state.v_biases),
    ):
        for p, g, m, v in zip(params, gs, ms, vs):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= state.alpha * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


def save_checkpoint(net: Network, path) -> None:
    """Write the network as JSON with row-major parameter lists.

    Floats go through repr, which round trips IEEE doubles exactly, so a
    load/save cycle is bit identical.
    """
    doc = {
        "kind": "network",
        "layer_dims": list(net.layer_dims),
        "activation": net.activation,
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("kind", "network") != "network":
        raise ValueError(f"checkpoint at {path} has kind {doc.get('kind')!r}, not a network")
    dims = [int(d) for d in doc["layer_dims"]]
    weights, biases = [], []
    for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = np.array(doc["weights"][l], dtype=np.float64).reshape(fan_out, fan_in)
        b = np.array(doc["biases"][l], dtype=np.float64)
        if b.shape != (fan_out,):
            raise ValueError(f"bias {l} has shape {b.shape}, expected ({fan_out},)")
        weights.append(w)
        biases.append(b)
    return Network(dims, weights, biases, doc["activation"])
