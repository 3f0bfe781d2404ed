"""Directed communication graph with leader pinning.

Edge convention: ``adjacency[i, j] > 0`` means converter ``i`` receives
information from converter ``j`` (edge j -> i).  The leader (reference)
reaches converter ``i`` when ``pinning[i] > 0``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

SIGMA_MIN_CUTOFF = 1e-12


class GraphError(ValueError):
    """Invalid topology or a topology that violates the leader-tree requirement."""


@dataclass(frozen=True)
class CommGraph:
    adjacency: np.ndarray
    pinning: np.ndarray

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        g = np.array(self.pinning, dtype=float).reshape(-1)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError(f"adjacency must be square, got shape {a.shape}")
        if a.shape[0] < 1:
            raise GraphError("graph needs at least one node")
        if g.shape != (a.shape[0],):
            raise GraphError(f"pinning has length {g.size}, expected {a.shape[0]}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(g))):
            raise GraphError("weights and pinning gains must be finite")
        if np.any(a < 0) or np.any(g < 0):
            raise GraphError("weights and pinning gains must be nonnegative")
        if np.any(np.diag(a) != 0):
            raise GraphError("self-loops are not allowed (nonzero diagonal)")
        a.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "pinning", g)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(cls, n, edges, pinning):
        """Build from ``(from, to, weight)`` triples with 1-based node labels."""
        a = np.zeros((n, n))
        for src, dst, w in edges:
            if not (1 <= src <= n and 1 <= dst <= n):
                raise GraphError(f"edge ({src}, {dst}) references a node outside 1..{n}")
            a[dst - 1, src - 1] = w
        return cls(a, pinning)

    def edges(self):
        """Edges as 1-based ``(from, to, weight)`` triples, row-major order."""
        dst, src = np.nonzero(self.adjacency)
        return [(int(j) + 1, int(i) + 1, float(self.adjacency[i, j])) for i, j in zip(dst, src)]

    def permuted(self, perm) -> "CommGraph":
        """Relabel nodes: new node k is old node ``perm[k]``."""
        p = np.asarray(perm)
        return CommGraph(self.adjacency[np.ix_(p, p)], self.pinning[p])


@dataclass(frozen=True)
class GraphMatrices:
    laplacian: np.ndarray
    pinned: np.ndarray
    in_degree: np.ndarray


def build_matrices(g: CommGraph) -> GraphMatrices:
    """Laplacian L = D - A, the pinned matrix L + G and the in-degrees."""
    d = g.adjacency.sum(axis=1)
    lap = np.diag(d) - g.adjacency
    return GraphMatrices(laplacian=lap, pinned=lap + np.diag(g.pinning), in_degree=d)


def leader_reachable(adjacency, pinning) -> np.ndarray:
    """Boolean mask of nodes reachable from the virtual leader (BFS)."""
    adjacency = np.asarray(adjacency)
    n = adjacency.shape[0]
    # successors of j are the nodes i that listen to j
    succ = [np.flatnonzero(adjacency[:, j] > 0) for j in range(n)]
    seen = np.asarray(pinning) > 0
    queue = deque(np.flatnonzero(seen))
    while queue:
        j = queue.popleft()
        for i in succ[j]:
            if not seen[i]:
                seen[i] = True
                queue.append(i)
    return seen


def has_leader_spanning_tree(g: CommGraph) -> bool:
    return bool(leader_reachable(g.adjacency, g.pinning).all())


def singular_values(g: CommGraph) -> np.ndarray:
    """Singular values of L + G, descending."""
    return np.linalg.svd(build_matrices(g).pinned, compute_uv=False)


def condition_ratio(g: CommGraph) -> float:
    """beta = sigma_max(L + G) / sigma_min(L + G)."""
    s = singular_values(g)
    if s[-1] < SIGMA_MIN_CUTOFF:
        raise GraphError(
            f"sigma_min(L+G) = {s[-1]:.3e} is numerically zero; "
            "the leader does not root a spanning tree"
        )
    return float(s[0] / s[-1])


def directed_ring(n: int, weight: float = 1.0, pinning=None) -> CommGraph:
    """Ring 1 -> 2 -> ... -> n -> 1.  Default pinning: node 1 only."""
    a = np.zeros((n, n))
    for k in range(n):
        if n > 1:
            a[(k + 1) % n, k] = weight
    if pinning is None:
        pinning = np.zeros(n)
        pinning[0] = 1.0
    return CommGraph(a, pinning)
