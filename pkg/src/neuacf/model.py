"""Aspect towers, attention / self-attention fusion and negative-sampling training.

Each (side, aspect) pair owns an MLP tower mapping a PathSim row to a latent
factor. Per side, the L aspect factors of a node are fused into one vector,
and the interaction probability is ``sigmoid(<u, v>)``.

Factor stacks are handled as arrays of shape ``(n, L, d)``: n nodes, L
aspects, latent dimension d.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from neuacf.nn import (
    AdamState,
    Mlp,
    PRED_CLAMP,
    adam_step,
    bce_from_logits,
    mlp_backward,
    mlp_forward,
    relu,
    sigmoid,
    xavier_init,
)

log = logging.getLogger(__name__)

SIDES = ("user", "item")


@dataclass(frozen=True)
class Aspect:
    label: str
    user_path: str
    item_path: str


class AspectSet(tuple):
    """Ordered, label-unique collection of :class:`Aspect`."""

    def __new__(cls, aspects: Sequence[Aspect | tuple[str, str, str]]):
        items = tuple(a if isinstance(a, Aspect) else Aspect(*a) for a in aspects)
        labels = [a.label for a in items]
        if len(set(labels)) != len(labels):
            raise ValueError(f"aspect labels must be unique: {labels}")
        if not items:
            raise ValueError("need at least one aspect")
        for a in items:
            if not a.user_path or not a.item_path:
                raise ValueError(f"aspect {a.label!r} needs both meta-paths")
        return super().__new__(cls, items)

    @property
    def labels(self) -> list[str]:
        return [a.label for a in self]

    def get(self, label: str) -> Aspect:
        for a in self:
            if a.label == label:
                return a
        raise KeyError(f"unknown aspect {label!r}")

    def to_list(self) -> list[list[str]]:
        return [[a.label, a.user_path, a.item_path] for a in self]


def parse_fusion(mode: str) -> tuple[str, str | None]:
    """Split ``"single:<aspect>"`` into its parts; other modes pass through."""
    if mode.startswith("single:"):
        return "single", mode.split(":", 1)[1]
    if mode in ("attention", "average", "self_attention"):
        return mode, None
    raise ValueError(f"unknown fusion mode {mode!r}")


# -- fusion ------------------------------------------------------------------


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class AttentionNet:
    """Two-layer scorer ``s = W2^T relu(W1^T u + b1) + b2`` shared across aspects."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator, dtype=np.float64) -> "AttentionNet":
        return cls(
            xavier_init(d, hidden, rng, dtype),
            np.zeros(hidden, dtype=dtype),
            xavier_init(hidden, 1, rng, dtype),
            np.zeros(1, dtype=dtype),
        )

    @classmethod
    def zeros(cls, d: int, hidden: int, dtype=np.float64) -> "AttentionNet":
        return cls(np.zeros((d, hidden), dtype), np.zeros(hidden, dtype), np.zeros((hidden, 1), dtype), np.zeros(1, dtype))

    def params(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {f"{prefix}W1": self.W1, f"{prefix}b1": self.b1, f"{prefix}W2": self.W2, f"{prefix}b2": self.b2}


def _as_stack(factors) -> tuple[np.ndarray, bool]:
    f = np.asarray(factors)
    if f.ndim == 2:
        return f[None], True
    if f.ndim != 3:
        raise ValueError(f"factors must be (L, d) or (n, L, d), got shape {f.shape}")
    return f, False


def weighted_sum(weights: np.ndarray, stack: np.ndarray) -> np.ndarray:
    return np.einsum("nl,nld->nd", weights, stack)


def attention_fuse(factors, net: AttentionNet, return_cache: bool = False):
    """Softmax-weighted convex combination of the aspect factors.

    ``factors`` is ``(L, d)`` for one node or ``(n, L, d)`` for a batch.
    Returns ``(fused, weights)`` (plus a cache for backward when asked).
    """
    stack, single = _as_stack(factors)
    z1 = stack @ net.W1 + net.b1
    h1 = relu(z1)
    scores = (h1 @ net.W2)[..., 0] + net.b2[0]
    weights = softmax(scores, axis=1)
    fused = weighted_sum(weights, stack)
    out = (fused[0], weights[0]) if single else (fused, weights)
    if return_cache:
        return out + ((stack, z1, h1, weights),)
    return out


def attention_fuse_backward(net: AttentionNet, cache, grad_fused: np.ndarray):
    """Gradients of the fused output w.r.t. the factor stack and the scorer."""
    stack, z1, h1, weights = cache
    g = grad_fused.reshape(stack.shape[0], stack.shape[2])
    dw = np.einsum("nld,nd->nl", stack, g)
    dstack = weights[..., None] * g[:, None, :]
    ds = weights * (dw - np.sum(weights * dw, axis=1, keepdims=True))
    hidden = h1.shape[-1]
    grads = {
        "W2": h1.reshape(-1, hidden).T @ ds.reshape(-1, 1),
        "b2": np.array([ds.sum()], dtype=stack.dtype),
    }
    dz1 = ds[..., None] * net.W2[:, 0] * (z1 > 0)
    grads["W1"] = stack.reshape(-1, stack.shape[2]).T @ dz1.reshape(-1, hidden)
    grads["b1"] = dz1.reshape(-1, hidden).sum(axis=0)
    dstack += dz1 @ net.W1.T
    return dstack, grads


def average_fuse(factors) -> np.ndarray:
    stack, single = _as_stack(factors)
    n, L, _ = stack.shape
    fused = weighted_sum(np.full((n, L), 1.0 / L, dtype=stack.dtype), stack)
    return fused[0] if single else fused


def self_attention_fuse(factors, return_cache: bool = False):
    """Parameter-free fusion through the masked inner-product affinity matrix.

    ``g_B = sum_{C != B} softmax_C(<u_B, u_C>) u_C`` and the fused vector is
    ``sum_B g_B``. The diagonal is removed from each row softmax, so its
    coefficient is exactly 0. With a single aspect the factor passes through.
    Returns ``(fused, affinity)`` where ``affinity`` is the unmasked matrix.
    """
    stack, single = _as_stack(factors)
    n, L, _ = stack.shape
    affinity = np.einsum("nbd,ncd->nbc", stack, stack)
    if L == 1:
        coef = np.ones((n, 1, 1), dtype=stack.dtype)
    else:
        masked = np.where(np.eye(L, dtype=bool), -np.inf, affinity)
        coef = softmax(masked, axis=2)
    fused = np.einsum("nbc,ncd->nd", coef, stack)
    out = (fused[0], affinity[0]) if single else (fused, affinity)
    if return_cache:
        return out + ((stack, coef),)
    return out


def self_attention_coefficients(factors) -> np.ndarray:
    """Row-softmax coefficients ``P[B, C]`` (diagonal 0) for inspection."""
    stack, single = _as_stack(factors)
    coef = self_attention_fuse(stack, return_cache=True)[2][1]
    return coef[0] if single else coef


def self_attention_fuse_backward(cache, grad_fused: np.ndarray) -> np.ndarray:
    stack, coef = cache
    n, L, d = stack.shape
    g = grad_fused.reshape(n, d)
    dstack = coef.sum(axis=1)[..., None] * g[:, None, :]
    if L == 1:
        return dstack
    dp = np.einsum("ncd,nd->nc", stack, g)[:, None, :]
    dm = coef * (dp - np.sum(coef * dp, axis=2, keepdims=True))
    dstack += np.einsum("nbc,ncd->nbd", dm, stack) + np.einsum("nbc,nbd->ncd", dm, stack)
    return dstack


# -- model -------------------------------------------------------------------


@dataclass
class ModelConfig:
    latent_dim: int = 64
    hidden: int = 600
    layers: int = 3
    attention_hidden: int = 64
    final_activation: str = "linear"
    fusion: str = "attention"
    dtype: str = "float64"

    def layer_sizes(self, d_in: int) -> tuple[int, ...]:
        return (d_in,) + (self.hidden,) * (self.layers - 1) + (self.latent_dim,)


@dataclass
class NeuACF:
    """Per-(side, aspect) towers plus the chosen fusion head.

    ``sims[side][label]`` holds the dense similarity matrix whose rows are
    the tower inputs.
    """

    aspects: AspectSet
    config: ModelConfig
    towers: dict[str, dict[str, Mlp]]
    attention: dict[str, AttentionNet] | None
    sims: dict[str, dict[str, np.ndarray]] = field(repr=False)
    adam: AdamState = field(default_factory=AdamState)

    @classmethod
    def create(
        cls,
        aspects: AspectSet,
        sims: dict[str, dict[str, np.ndarray]],
        config: ModelConfig,
        rng: np.random.Generator,
        learning_rate: float = 0.0005,
    ) -> "NeuACF":
        aspects = AspectSet(aspects)
        mode, only = parse_fusion(config.fusion)
        active = [only] if mode == "single" else aspects.labels
        if only is not None:
            aspects.get(only)
        dtype = np.dtype(config.dtype)
        towers: dict[str, dict[str, Mlp]] = {}
        for side in SIDES:
            towers[side] = {}
            for label in active:
                if label not in sims[side]:
                    raise KeyError(f"missing {side} similarity matrix for aspect {label!r}")
                n = sims[side][label].shape[1]
                towers[side][label] = Mlp.init(config.layer_sizes(n), rng, config.final_activation, dtype)
        attention = None
        if mode == "attention":
            attention = {s: AttentionNet.init(config.latent_dim, config.attention_hidden, rng, dtype) for s in SIDES}
        sims = {s: {k: np.ascontiguousarray(sims[s][k], dtype=dtype) for k in active} for s in SIDES}
        return cls(aspects, config, towers, attention, sims, AdamState(learning_rate=learning_rate))

    @property
    def fusion_mode(self) -> str:
        return parse_fusion(self.config.fusion)[0]

    @property
    def active_aspects(self) -> list[str]:
        return list(self.towers["user"])

    def n_nodes(self, side: str) -> int:
        return next(iter(self.sims[side].values())).shape[0]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for side in SIDES:
            for label, tower in self.towers[side].items():
                out.update(tower.params(f"{side}/{label}/"))
        if self.attention is not None:
            for side in SIDES:
                out.update(self.attention[side].params(f"att/{side}/"))
        return out

    # forward ---------------------------------------------------------------

    def aspect_factors(self, side: str, index, return_cache: bool = False):
        """Tower outputs for node(s) ``index``: ``(L, d)`` or ``(n, L, d)``."""
        idx = np.atleast_1d(np.asarray(index))
        outs, caches = [], []
        for label in self.active_aspects:
            out, cache = mlp_forward(self.towers[side][label], self.sims[side][label][idx])
            outs.append(out)
            caches.append(cache)
        stack = np.stack(outs, axis=1)
        if np.ndim(index) == 0:
            stack = stack[0]
        return (stack, caches) if return_cache else stack

    def fuse(self, side: str, stack: np.ndarray, return_cache: bool = False):
        """Fuse an ``(n, L, d)`` stack; returns ``(fused, aspect_weights[, cache])``."""
        mode = self.fusion_mode
        n, L, _ = stack.shape
        if mode == "attention":
            fused, weights, cache = attention_fuse(stack, self.attention[side], return_cache=True)
        elif mode == "self_attention":
            fused, _, cache = self_attention_fuse(stack, return_cache=True)
            weights = cache[1].sum(axis=1) / L
        else:
            weights = np.full((n, L), 1.0 / L, dtype=stack.dtype)
            fused, cache = weighted_sum(weights, stack), None
        return (fused, weights, cache) if return_cache else (fused, weights)

    def fuse_backward(self, side: str, cache, grad_fused: np.ndarray):
        mode = self.fusion_mode
        if mode == "attention":
            return attention_fuse_backward(self.attention[side], cache, grad_fused)
        if mode == "self_attention":
            return self_attention_fuse_backward(cache, grad_fused), {}
        L = len(self.active_aspects)
        return np.repeat(grad_fused[:, None, :] / L, L, axis=1), {}

    def fused_factors(self, side: str, index=None, chunk: int = 2048):
        """Fused factors and aspect weights for ``index`` (default: all nodes)."""
        if index is None:
            index = np.arange(self.n_nodes(side))
        index = np.asarray(index)
        fused, weights = [], []
        for start in range(0, len(index), chunk):
            stack = self.aspect_factors(side, index[start:start + chunk])
            f, w = self.fuse(side, stack)
            fused.append(f)
            weights.append(w)
        return np.concatenate(fused), np.concatenate(weights)

    def scores(self, users, items) -> np.ndarray:
        """Logits ``<u_i, v_j>`` for aligned arrays of users and items."""
        users, items = np.asarray(users), np.asarray(items)
        uu, uinv = np.unique(users, return_inverse=True)
        ii, iinv = np.unique(items, return_inverse=True)
        fu, _ = self.fused_factors("user", uu)
        fi, _ = self.fused_factors("item", ii)
        return np.einsum("nd,nd->n", fu[uinv], fi[iinv])

    # training --------------------------------------------------------------

    def loss_and_grads(self, users, items, labels):
        """Mean BCE over a batch and gradients for every parameter."""
        users, items = np.asarray(users), np.asarray(items)
        labels = np.asarray(labels, dtype=np.float64)
        grads: dict[str, np.ndarray] = {}
        uniq, inv, fused, caches = {}, {}, {}, {}
        for side, idx in (("user", users), ("item", items)):
            uniq[side], inv[side] = np.unique(idx, return_inverse=True)
            stack, tower_caches = self.aspect_factors(side, uniq[side], return_cache=True)
            f, _, fcache = self.fuse(side, stack, return_cache=True)
            fused[side] = f
            caches[side] = (tower_caches, fcache)
        fu = fused["user"][inv["user"]]
        fi = fused["item"][inv["item"]]
        logits = np.einsum("nd,nd->n", fu, fi)
        loss, dlogits = bce_from_logits(logits, labels)
        dlogits = dlogits.astype(fu.dtype, copy=False)

        dfused = {
            "user": _scatter_rows(dlogits[:, None] * fi, inv["user"], len(uniq["user"])),
            "item": _scatter_rows(dlogits[:, None] * fu, inv["item"], len(uniq["item"])),
        }
        for side in SIDES:
            tower_caches, fcache = caches[side]
            dstack, fgrads = self.fuse_backward(side, fcache, dfused[side])
            for name, g in fgrads.items():
                grads[f"att/{side}/{name}"] = g
            for k, label in enumerate(self.active_aspects):
                tower = self.towers[side][label]
                dW, db, _ = mlp_backward(tower, tower_caches[k], dstack[:, k, :], need_input_grad=False)
                for layer in range(tower.n_layers):
                    grads[f"{side}/{label}/W{layer}"] = dW[layer]
                    grads[f"{side}/{label}/b{layer}"] = db[layer]
        return loss, grads

    def macs_per_example(self) -> int:
        """Forward multiply-adds of all towers for one (user, item) pair."""
        total = 0
        for side in SIDES:
            for tower in self.towers[side].values():
                s = tower.layer_sizes
                total += sum(a * b for a, b in zip(s, s[1:]))
        return total


def _scatter_rows(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, values.shape[1]), dtype=values.dtype)
    np.add.at(out, index, values)
    return out


def predict(model: NeuACF, user_index, item_index):
    """Interaction probability ``sigmoid(<u, v>)``, clamped away from 0 and 1."""
    z = model.scores(np.atleast_1d(user_index), np.atleast_1d(item_index))
    p = np.clip(sigmoid(z), PRED_CLAMP, 1.0 - PRED_CLAMP)
    return float(p[0]) if np.ndim(user_index) == 0 else p


def aspect_factors(model: NeuACF, side: str, index):
    """List of per-aspect latent vectors for one node."""
    return list(model.aspect_factors(side, int(index)))


# -- negatives & batches -------------------------------------------------------


def sample_negatives(train_mask: np.ndarray, user_index: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` items drawn uniformly, with replacement, from the user's unobserved items."""
    unobserved = np.flatnonzero(~train_mask[user_index])
    if unobserved.size == 0:
        log.warning("user %d has interacted with every item; no negatives", user_index)
        return np.empty(0, dtype=np.int64)
    return unobserved[rng.integers(0, unobserved.size, size=count)]


def sample_negatives_batch(train_mask: np.ndarray, users: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised rejection sampler: ``(len(users), count)`` unobserved items."""
    n_items = train_mask.shape[1]
    full = train_mask[users].all(axis=1)
    if full.any():
        raise ValueError(f"users {np.unique(users[full]).tolist()} have no unobserved items")
    out = rng.integers(0, n_items, size=(len(users), count))
    bad = train_mask[users[:, None], out]
    while bad.any():
        r, c = np.nonzero(bad)
        out[r, c] = rng.integers(0, n_items, size=r.size)
        bad = np.zeros_like(bad)
        bad[r, c] = train_mask[users[r], out[r, c]]
    return out


@dataclass
class TrainData:
    """Training positives and the boolean user-item mask used to exclude them."""

    users: np.ndarray
    items: np.ndarray
    n_users: int
    n_items: int

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.mask = np.zeros((self.n_users, self.n_items), dtype=bool)
        self.mask[self.users, self.items] = True

    def __len__(self):
        return len(self.users)


@dataclass
class TrainBatch:
    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def iter_batches(data: TrainData, batch_size: int, neg_ratio: int, rng: np.random.Generator) -> Iterator[TrainBatch]:
    """Shuffle the positives and attach ``neg_ratio`` fresh negatives to each.

    A positive always travels with its own negatives, so a batch holds
    ``batch_size // (1 + neg_ratio)`` positives.
    """
    per_batch = max(1, batch_size // (1 + neg_ratio))
    order = rng.permutation(len(data))
    users, items = data.users[order], data.items[order]
    negs = sample_negatives_batch(data.mask, users, neg_ratio, rng) if neg_ratio else None
    labels_one = np.concatenate([[1.0], np.zeros(neg_ratio)])
    for start in range(0, len(order), per_batch):
        u = users[start:start + per_batch]
        pos = items[start:start + per_batch][:, None]
        it = np.hstack([pos, negs[start:start + per_batch]]) if neg_ratio else pos
        yield TrainBatch(
            np.repeat(u, 1 + neg_ratio),
            it.ravel(),
            np.tile(labels_one, len(u)),
        )


@dataclass
class TrainConfig:
    batch_size: int = 1024
    neg_ratio: int = 10


def train_epoch(model: NeuACF, data: TrainData, config: TrainConfig, rng: np.random.Generator) -> float:
    """One pass over the positives with Adam; returns the example-weighted mean loss."""
    params = model.params()
    total, seen = 0.0, 0
    for b, batch in enumerate(iter_batches(data, config.batch_size, config.neg_ratio, rng)):
        loss, grads = model.loss_and_grads(batch.users, batch.items, batch.labels)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss} in batch {b}")
        adam_step(params, grads, model.adam)
        total += loss * len(batch)
        seen += len(batch)
    return total / max(seen, 1)
