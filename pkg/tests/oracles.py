"""Independent reference computations used by the tests.

Nothing here touches sparse matrix products or the analytic backward passes
of the package; path counts come from explicit enumeration and gradients
from central differences.
"""

import itertools
from collections import defaultdict

import numpy as np


def enumerate_paths(edge_lists, steps, n_start, n_end):
    """Count path instances by walking adjacency lists one hop at a time."""
    adj = []
    for label, transposed in steps:
        nbrs = defaultdict(set)
        for a, b in edge_lists.get(label, ()):
            if transposed:
                a, b = b, a
            nbrs[a].add(b)
        adj.append(nbrs)

    counts = np.zeros((n_start, n_end), dtype=np.int64)

    def walk(node, depth, start):
        if depth == len(adj):
            counts[start, node] += 1
            return
        for nxt in adj[depth].get(node, ()):
            walk(nxt, depth + 1, start)

    for s in range(n_start):
        walk(s, 0, s)
    return counts


def pathsim_reference(m):
    """Entry-by-entry PathSim with explicit loops."""
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    out = np.zeros((n, n))
    for a, b in itertools.product(range(n), repeat=2):
        denom = m[a, a] + m[b, b]
        out[a, b] = 2.0 * m[a, b] / denom if denom > 0 else 0.0
    return out


def central_difference(f, x, h=1e-5):
    """Gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def rel_error(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def hr_ndcg_reference(ranked_lists, held_out, k):
    """Literal per-user loop over the ranked lists."""
    hits, gains = 0, 0.0
    for ranked, target in zip(ranked_lists, held_out):
        top = list(ranked)[:k]
        if target in top:
            hits += 1
            p = top.index(target) + 1
            gains += 1.0 / np.log2(p + 1)
    n = len(held_out)
    return hits / n, gains / n
