"""Small dense numeric core: MLP towers with manual backprop, BCE and Adam.

Weights are stored as ``(fan_in, fan_out)`` so a layer computes
``f(H @ W + b)`` on row-major batches. Everything is plain numpy.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

PRED_CLAMP = 1e-10


def xavier_init(n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Glorot-uniform weights in ``[-b, b]`` with ``b = sqrt(6 / (n_in + n_out))``."""
    if n_in < 1 or n_out < 1:
        raise ValueError("layer sizes must be >= 1")
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype, copy=False)


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    return expit(x)


@dataclass
class Mlp:
    """Fully connected ReLU network.

    ``final_activation`` is ``"relu"`` (every layer rectified) or ``"linear"``
    (last layer left affine).
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    final_activation: str = "relu"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("need one weight matrix and bias per layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[k], self.layer_sizes[k + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape} do not match {shape}")
        if self.final_activation not in ("relu", "linear"):
            raise ValueError(f"unknown final activation {self.final_activation!r}")

    @classmethod
    def init(cls, layer_sizes, rng, final_activation="relu", dtype=np.float64) -> "Mlp":
        sizes = tuple(layer_sizes)
        weights = [xavier_init(a, b, rng, dtype) for a, b in zip(sizes, sizes[1:])]
        biases = [np.zeros(b, dtype=dtype) for b in sizes[1:]]
        return cls(sizes, weights, biases, final_activation)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}W{k}"] = w
            out[f"{prefix}b{k}"] = b
        return out

    def rectified(self, layer: int) -> bool:
        return layer < self.n_layers - 1 or self.final_activation == "relu"


def mlp_forward(mlp: Mlp, x: np.ndarray):
    """Run the network on a vector or a batch of row vectors.

    Returns ``(output, cache)``; the cache holds each layer's input and
    pre-activation and is what :func:`mlp_backward` consumes.
    """
    h = np.asarray(x)
    if h.shape[-1] != mlp.layer_sizes[0]:
        raise ValueError(f"input has length {h.shape[-1]}, network expects {mlp.layer_sizes[0]}")
    cache = []
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w + b
        cache.append((h, z))
        h = relu(z) if mlp.rectified(k) else z
    return h, cache


def mlp_backward(mlp: Mlp, cache, grad_output: np.ndarray, need_input_grad: bool = True):
    """Backpropagate ``grad_output`` through a cached forward pass.

    Returns ``(dW, db, dx)`` with ``dW``/``db`` lists aligned to the layers.
    ``dx`` is None when ``need_input_grad`` is false. ReLU subgradient at 0
    is 0.
    """
    if len(cache) != mlp.n_layers:
        raise ValueError("cache does not belong to this network")
    g = np.asarray(grad_output)
    dW = [None] * mlp.n_layers
    db = [None] * mlp.n_layers
    for k in range(mlp.n_layers - 1, -1, -1):
        h, z = cache[k]
        if g.shape != z.shape:
            raise ValueError(f"gradient shape {g.shape} does not match layer output {z.shape}")
        if mlp.rectified(k):
            g = g * (z > 0)
        if g.ndim == 1:
            dW[k] = np.outer(h, g)
            db[k] = g.copy()
        else:
            dW[k] = h.T @ g
            db[k] = g.sum(axis=0)
        if k > 0 or need_input_grad:
            g = g @ mlp.weights[k].T
    return dW, db, (g if need_input_grad else None)


def bce_loss(predictions: np.ndarray, labels: np.ndarray):
    """Mean binary cross-entropy and its gradient w.r.t. the pre-sigmoid logits.

    Predictions are clamped to ``[1e-10, 1 - 1e-10]`` before taking logs.
    """
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    n = p.size
    pc = np.clip(p, PRED_CLAMP, 1.0 - PRED_CLAMP)
    loss = -np.sum(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)) / n
    return float(loss), (pc - y) / n


def bce_from_logits(logits: np.ndarray, labels: np.ndarray):
    return bce_loss(sigmoid(logits), labels)


@dataclass
class AdamState:
    learning_rate: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(
            self.learning_rate, self.beta1, self.beta2, self.epsilon, self.t,
            {k: v.copy() for k, v in self.first_moment.items()},
            {k: v.copy() for k, v in self.second_moment.items()},
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """Bias-corrected Adam update, applied in place to ``params``."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p)
            state.second_moment[name] = np.zeros_like(p)
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.learning_rate / bc1) * m / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


def save_checkpoint(path: str | os.PathLike, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Store arrays plus a JSON metadata blob in one ``.npz`` file."""
    payload = dict(arrays)
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
        meta = json.loads(z["__meta__"].tobytes().decode())
    return arrays, meta
