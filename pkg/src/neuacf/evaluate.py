"""Leave-one-out split, candidate ranking and HR@K / NDCG@K."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_KS = (5, 10, 15, 20)


@dataclass
class LooSplit:
    """Training interactions plus one held-out item and fixed candidates per test user."""

    train_users: np.ndarray
    train_items: np.ndarray
    train_times: np.ndarray
    test_users: np.ndarray
    test_items: np.ndarray
    candidates: np.ndarray  # (n_test, n_candidates)
    n_users: int
    n_items: int

    def rated_mask(self) -> np.ndarray:
        m = np.zeros((self.n_users, self.n_items), dtype=bool)
        m[self.train_users, self.train_items] = True
        m[self.test_users, self.test_items] = True
        return m


def leave_one_out_split(
    users: np.ndarray,
    items: np.ndarray,
    timestamps: np.ndarray,
    n_users: int,
    n_items: int,
    rng: np.random.Generator,
    n_candidates: int = 99,
) -> LooSplit:
    """Hold out each user's latest interaction and sample unrated candidates.

    "Latest" is the maximum ``(timestamp, item_index)``. Users with fewer than
    two interactions stay in training and get no test case. Candidates are
    drawn without replacement from the items the user never rated; when fewer
    than ``n_candidates`` exist, all of them are used (tiny synthetic data).
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    timestamps = np.asarray(timestamps, dtype=np.int64)
    order = np.lexsort((items, timestamps, users))
    users, items, timestamps = users[order], items[order], timestamps[order]

    counts = np.bincount(users, minlength=n_users)
    last = np.cumsum(counts) - 1
    eligible = np.flatnonzero(counts >= 2)
    skipped = np.flatnonzero(counts == 1)
    if skipped.size:
        log.info("%d users with a single interaction kept in train only", skipped.size)

    held = last[eligible]
    keep = np.ones(len(users), dtype=bool)
    keep[held] = False

    rated = np.zeros((n_users, n_items), dtype=bool)
    rated[users, items] = True
    k = min(n_candidates, int((~rated[eligible]).sum(axis=1).min())) if eligible.size else 0
    if k < n_candidates:
        log.warning("only %d unrated candidates available per user (wanted %d)", k, n_candidates)
    cands = np.empty((eligible.size, k), dtype=np.int64)
    for row, u in enumerate(eligible):
        pool = np.flatnonzero(~rated[u])
        cands[row] = rng.choice(pool, size=k, replace=False)

    return LooSplit(
        users[keep], items[keep], timestamps[keep],
        eligible.astype(np.int64), items[held], cands, n_users, n_items,
    )


def rank_candidates(scores: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Items sorted by descending score, ties by ascending item index."""
    scores = np.asarray(scores)
    items = np.asarray(items)
    return items[np.lexsort((items, -scores))]


def rank_for_model(model, split: LooSplit, score_fn=None) -> np.ndarray:
    """Ranked lists (one row per test user) over held-out item + candidates."""
    pool = np.hstack([split.test_items[:, None], split.candidates])
    if score_fn is None:
        fu, _ = model.fused_factors("user", split.test_users)
        fi, _ = model.fused_factors("item")
        scores = np.einsum("nd,nkd->nk", fu, fi[pool])
    else:
        scores = score_fn(split.test_users, pool)
    return np.vstack([rank_candidates(s, p) for s, p in zip(scores, pool)])


def hit_positions(ranked: np.ndarray, held_out: np.ndarray) -> np.ndarray:
    """1-based position of each held-out item in its ranked list (0 if absent)."""
    ranked = np.asarray(ranked)
    match = ranked == np.asarray(held_out)[:, None]
    pos = match.argmax(axis=1) + 1
    pos[~match.any(axis=1)] = 0
    return pos


def hr_ndcg_at_k(ranked: np.ndarray, held_out: np.ndarray, k: int) -> tuple[float, float]:
    if k < 1:
        raise ValueError("K must be >= 1")
    pos = hit_positions(ranked, held_out)
    hit = (pos >= 1) & (pos <= k)
    gains = np.zeros(len(pos))
    gains[hit] = 1.0 / np.log2(pos[hit] + 1.0)
    return float(hit.mean()), float(gains.mean())


@dataclass
class EvalReport:
    metrics: dict[int, tuple[float, float]]
    model: str = ""
    epoch: int = -1
    seed: int = 0
    config_hash: str = ""
    run_id: str = ""
    extra: dict = field(default_factory=dict)

    def records(self) -> list[dict]:
        return [
            {
                "run_id": self.run_id, "model": self.model, "K": k,
                "hr": hr, "ndcg": ndcg, "epoch": self.epoch, "seed": self.seed,
            }
            for k, (hr, ndcg) in sorted(self.metrics.items())
        ]

    def hr(self, k: int) -> float:
        return self.metrics[k][0]

    def ndcg(self, k: int) -> float:
        return self.metrics[k][1]


def evaluate_ranked(ranked, held_out, ks=DEFAULT_KS, **meta) -> EvalReport:
    return EvalReport({k: hr_ndcg_at_k(ranked, held_out, k) for k in ks}, **meta)


def item_popularity(split: LooSplit) -> np.ndarray:
    return np.bincount(split.train_items, minlength=split.n_items).astype(np.float64)


def item_pop_ranked(split: LooSplit) -> np.ndarray:
    pop = item_popularity(split)
    return rank_for_model(None, split, score_fn=lambda users, pool: pop[pool])


def format_table(reports: list[EvalReport], ks=DEFAULT_KS) -> str:
    head = f"{'model':<28}" + "".join(f"{'HR@' + str(k):>9}{'NDCG@' + str(k):>9}" for k in ks)
    lines = [head, "-" * len(head)]
    for r in reports:
        lines.append(f"{r.model:<28}" + "".join(f"{r.hr(k):>9.4f}{r.ndcg(k):>9.4f}" for k in ks))
    return "\n".join(lines)
