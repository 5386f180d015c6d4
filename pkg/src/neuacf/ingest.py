"""Raw rating/attribute files to implicit interactions and an HIN.

File contract (whitespace separated, one record per line):

* ratings: ``user_id item_id rating timestamp``
* attributes: ``item_id attribute_id`` (one file per relation)

Raw ids are kept as strings and mapped to dense 0-based indices per node
type, sorted numerically when every id is an integer.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from neuacf.hin import HinGraph, Schema, SchemaError, build_graph

log = logging.getLogger(__name__)

# MovieLens and Amazon schemas; G (genre) is an extra MovieLens attribute available in u.item.
MOVIELENS_SCHEMA = Schema(
    "UMDAG",
    [("UM", "U", "M"), ("MD", "M", "D"), ("MA", "M", "A"), ("MG", "M", "G")],
)
AMAZON_SCHEMA = Schema(
    "UIBCV",
    [("UI", "U", "I"), ("IB", "I", "B"), ("IC", "I", "C"), ("IV", "I", "V")],
)
SCHEMAS = {"movielens": MOVIELENS_SCHEMA, "amazon": AMAZON_SCHEMA}
INTERACTION_RELATION = {"movielens": "UM", "amazon": "UI"}


class ParseError(ValueError):
    pass


def _sort_ids(ids) -> list[str]:
    ids = set(ids)
    try:
        return sorted(ids, key=int)
    except ValueError:
        return sorted(ids)


@dataclass
class RawDataset:
    flavor: str
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    attribute_edges: dict[str, tuple[np.ndarray, np.ndarray]]
    id_maps: dict[str, list[str]]
    sources: dict[str, str] = field(default_factory=dict)

    @property
    def user_type(self) -> str:
        return "U"

    @property
    def item_type(self) -> str:
        return SCHEMAS[self.flavor].relation(INTERACTION_RELATION[self.flavor])[2]

    @property
    def n_users(self) -> int:
        return len(self.id_maps["U"])

    @property
    def n_items(self) -> int:
        return len(self.id_maps[self.item_type])

    @property
    def n_ratings(self) -> int:
        return len(self.users)

    @property
    def density(self) -> float:
        return self.n_ratings / (self.n_users * self.n_items)

    def index_of(self, node_type: str, raw_id) -> int:
        lookup = self.__dict__.setdefault("_lookup", {})
        if node_type not in lookup:
            lookup[node_type] = {r: k for k, r in enumerate(self.id_maps[node_type])}
        return lookup[node_type][str(raw_id)]

    def stats(self) -> dict:
        return {
            "users": self.n_users,
            "items": self.n_items,
            "ratings": self.n_ratings,
            "density": self.density,
        }

    def manifest(self) -> dict:
        return {
            "flavor": self.flavor,
            **self.stats(),
            "node_counts": {t: len(ids) for t, ids in self.id_maps.items()},
            "attribute_edges": {k: int(len(v[0])) for k, v in self.attribute_edges.items()},
            "checksums": dict(self.sources),
        }


def file_sha256(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_ratings(path: str | os.PathLike) -> list[tuple[str, str, float, int]]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.replace(",", " ").split()
            try:
                if len(parts) != 4:
                    raise ValueError(f"expected 4 fields, got {len(parts)}")
                ts = int(parts[3])
                if ts < 0:
                    raise ValueError("negative timestamp")
                rows.append((parts[0], parts[1], float(parts[2]), ts))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: malformed rating line {line.rstrip()!r} ({exc})") from None
    return rows


def read_pairs(path: str | os.PathLike) -> list[tuple[str, str]]:
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'item_id attribute_id', got {line.rstrip()!r}")
            pairs.append((parts[0], parts[1]))
    return pairs


def _assemble(flavor, rows, attribute_paths, sources) -> RawDataset:
    schema = SCHEMAS[flavor]
    item_type = schema.relation(INTERACTION_RELATION[flavor])[2]
    user_ids = _sort_ids(r[0] for r in rows)
    item_ids = _sort_ids(r[1] for r in rows)
    umap = {r: k for k, r in enumerate(user_ids)}
    imap = {r: k for k, r in enumerate(item_ids)}
    id_maps = {"U": user_ids, item_type: item_ids}

    attribute_edges = {}
    for label, path in (attribute_paths or {}).items():
        try:
            _, src, dst = schema.relation(label)
        except KeyError:
            raise SchemaError(f"relation {label!r} is not part of the {flavor} schema") from None
        if src != item_type:
            raise SchemaError(f"attribute relation {label!r} must start at {item_type!r}")
        pairs = read_pairs(path)
        sources[label] = file_sha256(path)
        known = [(i, a) for i, a in pairs if i in imap]
        if len(known) < len(pairs):
            log.warning("%s: skipped %d pairs with unknown items", path, len(pairs) - len(known))
        if not known:
            log.warning("%s: no usable attribute pairs; relation %s will be empty", path, label)
        attr_ids = _sort_ids(a for _, a in known)
        amap = {r: k for k, r in enumerate(attr_ids)}
        id_maps[dst] = attr_ids
        attribute_edges[label] = (
            np.array([imap[i] for i, _ in known], dtype=np.int64),
            np.array([amap[a] for _, a in known], dtype=np.int64),
        )
    for t in schema.node_types:
        id_maps.setdefault(t, [])

    return RawDataset(
        flavor,
        np.array([umap[r[0]] for r in rows], dtype=np.int64),
        np.array([imap[r[1]] for r in rows], dtype=np.int64),
        np.array([r[2] for r in rows], dtype=np.float64),
        np.array([r[3] for r in rows], dtype=np.int64),
        attribute_edges,
        id_maps,
        sources,
    )


def load_movielens(ratings_path, attribute_paths: Mapping[str, str | os.PathLike] | None = None) -> RawDataset:
    """MovieLens ``u.data``-style ratings plus ``MD``/``MA``/``MG`` pair files."""
    rows = read_ratings(ratings_path)
    return _assemble("movielens", rows, attribute_paths, {"ratings": file_sha256(ratings_path)})


def load_amazon(
    ratings_path,
    attribute_paths: Mapping[str, str | os.PathLike] | None = None,
    min_user_items: int = 10,
) -> RawDataset:
    """Amazon ratings with users buying fewer than ``min_user_items`` items removed.

    Co-view edges come as ``item_id viewed_item_id`` pairs for relation ``IV``;
    the viewed items form their own node type ``V``.
    """
    rows = read_ratings(ratings_path)
    per_user: dict[str, set] = {}
    for u, i, _, _ in rows:
        per_user.setdefault(u, set()).add(i)
    keep = {u for u, s in per_user.items() if len(s) >= min_user_items}
    dropped = len(per_user) - len(keep)
    if dropped:
        log.info("removed %d users with fewer than %d items", dropped, min_user_items)
    rows = [r for r in rows if r[0] in keep]
    return _assemble("amazon", rows, attribute_paths, {"ratings": file_sha256(ratings_path)})


def to_implicit(raw: RawDataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct ``(user, item)`` positives, keeping each pair's latest timestamp."""
    order = np.lexsort((raw.timestamps, raw.items, raw.users))
    u, i, t = raw.users[order], raw.items[order], raw.timestamps[order]
    last = np.ones(len(u), dtype=bool)
    last[:-1] = (u[1:] != u[:-1]) | (i[1:] != i[:-1])
    return u[last], i[last], t[last]


def build_hin(raw: RawDataset, schema: Schema, train_users, train_items) -> HinGraph:
    """HIN with the interaction relation taken from the given training pairs only."""
    expected = SCHEMAS[raw.flavor]
    if INTERACTION_RELATION[raw.flavor] not in schema.labels or any(
        label not in schema.labels for label in raw.attribute_edges
    ):
        raise SchemaError(f"schema does not match {raw.flavor} dataset")
    for label in schema.labels:
        if label not in expected.labels:
            raise SchemaError(f"relation {label!r} does not belong to the {raw.flavor} schema")
    counts = {t: len(raw.id_maps.get(t, [])) for t in schema.node_types}
    edges = {INTERACTION_RELATION[raw.flavor]: zip(np.asarray(train_users).tolist(), np.asarray(train_items).tolist())}
    for label, (src, dst) in raw.attribute_edges.items():
        edges[label] = zip(src.tolist(), dst.tolist())
    return build_graph(schema, edges, counts)


def block_dataset(n_blocks: int = 2, users_per_block: int = 2, items_per_block: int = 2) -> RawDataset:
    """Synthetic block-diagonal interactions with one brand per block.

    Every user rates every item of its own block; the default is 4 users by
    4 items. Timestamps follow item order, reversed for odd users, so the
    held-out items differ inside a block.
    """
    users, items, times, brand = [], [], [], []
    n_users = n_blocks * users_per_block
    n_items = n_blocks * items_per_block
    for b in range(n_blocks):
        block_items = list(range(b * items_per_block, (b + 1) * items_per_block))
        for u in range(b * users_per_block, (b + 1) * users_per_block):
            seq = block_items if u % 2 == 0 else block_items[::-1]
            for t, i in enumerate(seq):
                users.append(u)
                items.append(i)
                times.append(t)
        brand.extend([b] * items_per_block)
    return RawDataset(
        "amazon",
        np.array(users), np.array(items), np.ones(len(users)), np.array(times),
        {"IB": (np.arange(n_items), np.array(brand))},
        {
            "U": [str(k) for k in range(n_users)],
            "I": [str(k) for k in range(n_items)],
            "B": [str(k) for k in range(n_blocks)],
            "C": [], "V": [],
        },
    )
