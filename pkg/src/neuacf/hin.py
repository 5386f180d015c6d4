"""Typed heterogeneous graph with one sparse adjacency matrix per relation.

Node types are single letters (``U``, ``I``, ``B``, ...) so that meta-path
expressions such as ``UIBIU`` can be read letter by letter. Node indices are
dense and 0-based within each type.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp


class SchemaError(ValueError):
    pass


class EdgeError(ValueError):
    pass


@dataclass(frozen=True)
class Schema:
    node_types: frozenset[str]
    relations: tuple[tuple[str, str, str], ...]

    def __init__(self, node_types: Iterable[str], relations: Iterable[tuple[str, str, str]]):
        object.__setattr__(self, "node_types", frozenset(node_types))
        object.__setattr__(self, "relations", tuple(tuple(r) for r in relations))
        seen = set()
        for label, src, dst in self.relations:
            if label in seen:
                raise SchemaError(f"duplicate relation label {label!r}")
            seen.add(label)
            for t in (src, dst):
                if t not in self.node_types:
                    raise SchemaError(f"relation {label!r} names undeclared node type {t!r}")

    def relation(self, label: str) -> tuple[str, str, str]:
        for rel in self.relations:
            if rel[0] == label:
                return rel
        raise KeyError(f"unknown label {label!r}")

    @property
    def labels(self) -> list[str]:
        return [r[0] for r in self.relations]


@dataclass(frozen=True)
class HinGraph:
    schema: Schema
    node_counts: Mapping[str, int]
    relations: Mapping[str, sp.csr_matrix] = field(repr=False)

    def __post_init__(self):
        for label, src, dst in self.schema.relations:
            m = self.relations[label]
            expected = (self.node_counts[src], self.node_counts[dst])
            if m.shape != expected:
                raise SchemaError(f"relation {label!r} has shape {m.shape}, expected {expected}")

    def count(self, node_type: str) -> int:
        return self.node_counts[node_type]


def build_graph(
    schema: Schema,
    edge_lists: Mapping[str, Iterable[tuple[int, int]]],
    node_counts: Mapping[str, int],
) -> HinGraph:
    """Build a graph whose relation matrices hold the deduplicated edges as 1s.

    Relations missing from ``edge_lists`` get an all-zero matrix.
    """
    declared = set(schema.labels)
    for label in edge_lists:
        if label not in declared:
            raise EdgeError(f"unknown relation label {label!r}")
    missing = schema.node_types - set(node_counts)
    if missing:
        raise SchemaError(f"no node count for types {sorted(missing)}")

    matrices = {}
    for label, src, dst in schema.relations:
        n_src, n_dst = node_counts[src], node_counts[dst]
        edges = np.asarray(list(edge_lists.get(label, ())), dtype=np.int64).reshape(-1, 2)
        rows, cols = edges[:, 0], edges[:, 1]
        bad = (rows < 0) | (rows >= n_src) | (cols < 0) | (cols >= n_dst)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise EdgeError(
                f"out-of-range index in relation {label!r}: edge ({rows[k]}, {cols[k]}) "
                f"with shape ({n_src}, {n_dst})"
            )
        m = sp.coo_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(n_src, n_dst)
        ).tocsr()
        # coo->csr sums duplicates; collapse back to binary.
        m.data[:] = 1.0
        m.sort_indices()
        matrices[label] = m
    return HinGraph(schema, dict(node_counts), matrices)


def relation_matrix(graph: HinGraph, label: str, transposed: bool = False) -> sp.csr_matrix:
    if label not in graph.relations:
        raise KeyError(f"unknown label {label!r}")
    m = graph.relations[label]
    return m.T.tocsr() if transposed else m
