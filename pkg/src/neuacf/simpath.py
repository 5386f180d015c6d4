"""Meta-path parsing, commuting matrices and PathSim similarity.

A meta-path is written as a palindromic string of node-type letters, e.g.
``UIBIU``. Each adjacent pair of letters resolves to a schema relation, read
forward or transposed. The commuting matrix counts path instances between
the two endpoints; PathSim normalises it to ``[0, 1]``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp

from neuacf.hin import HinGraph, Schema, relation_matrix


class MetaPathError(ValueError):
    pass


@dataclass(frozen=True)
class MetaPath:
    label: str
    steps: tuple[tuple[str, bool], ...]
    endpoint_type: str

    def __str__(self):
        return self.label


def _resolve_pair(schema: Schema, a: str, b: str) -> tuple[str, bool]:
    for label, src, dst in schema.relations:
        if (src, dst) == (a, b):
            return label, False
    for label, src, dst in schema.relations:
        if (src, dst) == (b, a):
            return label, True
    raise MetaPathError(f"no relation between {a!r} and {b!r} in either direction")


def parse_metapath(expr: str, schema: Schema) -> MetaPath:
    """Resolve a meta-path string like ``"UIBIU"`` against ``schema``.

    >>> s = Schema("UIB", [("UI", "U", "I"), ("IB", "I", "B")])
    >>> parse_metapath("IBI", s).steps
    (('IB', False), ('IB', True))
    """
    expr = expr.strip()
    if len(expr) < 3 or len(expr) % 2 == 0:
        raise MetaPathError(f"meta-path {expr!r} must have odd length >= 3")
    if expr != expr[::-1]:
        raise MetaPathError(f"non-palindromic meta-path {expr!r}")
    for t in expr:
        if t not in schema.node_types:
            raise MetaPathError(f"unknown node type {t!r} in meta-path {expr!r}")
    steps = tuple(_resolve_pair(schema, a, b) for a, b in zip(expr, expr[1:]))
    return MetaPath(expr, steps, expr[0])


def step_matrices(graph: HinGraph, path: MetaPath) -> list[sp.csr_matrix]:
    return [relation_matrix(graph, label, transposed) for label, transposed in path.steps]


def commuting_matrix(graph: HinGraph, path: MetaPath) -> sp.csr_matrix:
    """Ordered product of the step matrices, evaluated left to right.

    Entry ``(a, b)`` is the number of path instances from ``a`` to ``b``.
    """
    mats = step_matrices(graph, path)
    for left, right in zip(mats, mats[1:]):
        if left.shape[1] != right.shape[0]:
            raise MetaPathError(
                f"dimension mismatch along {path.label}: {left.shape} x {right.shape}"
            )
    out = reduce(lambda a, b: (a @ b).tocsr(), mats)
    out.eliminate_zeros()
    out.sort_indices()
    return out


@dataclass(frozen=True)
class SimilarityMatrix:
    aspect_label: str
    side: str
    matrix: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def dense(self, dtype=np.float64) -> np.ndarray:
        return self.matrix.toarray().astype(dtype, copy=False)


def pathsim(commuting: sp.spmatrix, aspect_label: str = "", side: str = "") -> SimilarityMatrix:
    """PathSim: ``2 M[a, b] / (M[a, a] + M[b, b])``, 0 where the denominator is 0."""
    m = sp.csr_matrix(commuting, dtype=np.float64)
    if m.shape[0] != m.shape[1]:
        raise MetaPathError(f"commuting matrix must be square, got {m.shape}")
    diag = m.diagonal()
    coo = m.tocoo()
    denom = diag[coo.row] + diag[coo.col]
    vals = np.zeros_like(coo.data)
    ok = denom > 0
    vals[ok] = 2.0 * coo.data[ok] / denom[ok]
    out = sp.csr_matrix((vals, (coo.row, coo.col)), shape=m.shape)
    out.eliminate_zeros()
    out.sort_indices()
    return SimilarityMatrix(aspect_label, side, out)


def similarity_row(sim: SimilarityMatrix, node: int) -> np.ndarray:
    if not 0 <= node < sim.n:
        raise IndexError(f"node {node} out of range for similarity matrix of size {sim.n}")
    return sim.matrix.getrow(node).toarray().ravel()


def metapath_similarity(graph: HinGraph, expr: str, aspect_label: str = "", side: str = "") -> SimilarityMatrix:
    path = parse_metapath(expr, graph.schema)
    return pathsim(commuting_matrix(graph, path), aspect_label or expr, side)


def save_similarity(sim: SimilarityMatrix, path: str | os.PathLike) -> None:
    """Write ``aspect side n`` then ``row col value`` lines in row-major order."""
    coo = sim.matrix.tocsr()
    coo.sort_indices()
    coo = coo.tocoo()
    with open(path, "w") as fh:
        fh.write(f"{sim.aspect_label} {sim.side} {sim.n}\n")
        fh.writelines(
            f"{r} {c} {v:.17g}\n" for r, c, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())
        )


def load_similarity(path: str | os.PathLike) -> SimilarityMatrix:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: malformed header {header!r}")
        label, side, n = header[0], header[1], int(header[2])
        body = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if body.size == 0:
        body = np.empty((0, 3))
    rows, cols = body[:, 0].astype(np.int64), body[:, 1].astype(np.int64)
    m = sp.csr_matrix((body[:, 2], (rows, cols)), shape=(n, n))
    m.sort_indices()
    return SimilarityMatrix(label, side, m)
