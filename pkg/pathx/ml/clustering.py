"""
Agglomerative hierarchical clustering through the Lance-Williams recurrence.

The dendrogram uses the four-column linkage layout: row i merges clusters
id_a < id_b at the given height into a new cluster with id n + i.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from sklearn.metrics import adjusted_rand_score

from pathx.models.models import ClusterAssignment

logger = logging.getLogger(__name__)

LINKAGES = ("ward", "single", "complete", "average")


@dataclass
class Dendrogram:
    linkage: np.ndarray          # (n - 1, 4): id_a, id_b, height, size
    case_ids: List[str]
    method: str = "ward"

    @property
    def n(self) -> int:
        return len(self.case_ids)

    @property
    def heights(self) -> np.ndarray:
        return self.linkage[:, 2]

    def labels(self, k: int) -> np.ndarray:
        """Flat labels for k clusters, numbered by first appearance in leaf order"""
        n = self.n
        if not 1 <= k <= n:
            raise ValueError(f"k must be between 1 and {n}, got {k}")

        parent = list(range(2 * n - 1))

        def find(node):
            while parent[node] != node:
                parent[node] = parent[parent[node]]
                node = parent[node]
            return node

        for step in range(n - k):
            id_a, id_b = int(self.linkage[step, 0]), int(self.linkage[step, 1])
            new_id = n + step
            parent[find(id_a)] = new_id
            parent[find(id_b)] = new_id

        labels = np.empty(n, dtype=int)
        seen = {}
        for leaf in range(n):
            root = find(leaf)
            if root not in seen:
                seen[root] = len(seen)
            labels[leaf] = seen[root]
        return labels


def _pairwise_sq_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _lance_williams(method: str, d_ki: np.ndarray, d_kj: np.ndarray, d_ij: float,
                    n_i: int, n_j: int, n_k: np.ndarray) -> np.ndarray:
    if method == "ward":
        # on squared distances
        total = n_i + n_j + n_k
        return ((n_i + n_k) * d_ki + (n_j + n_k) * d_kj - n_k * d_ij) / total
    if method == "single":
        return np.minimum(d_ki, d_kj)
    if method == "complete":
        return np.maximum(d_ki, d_kj)
    return (n_i * d_ki + n_j * d_kj) / (n_i + n_j)


def hier_cluster(vectors, method: str = "ward", case_ids: Optional[Sequence[str]] = None) -> Dendrogram:
    """
    Agglomerate until one cluster remains.

    Ward works on squared Euclidean distances and reports heights as their
    square roots; the other linkages use plain Euclidean distances. Among
    exactly tied minima the pair with the smallest (id_a, id_b) merges first.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("hierarchical clustering needs at least 2 vectors")
    if method not in LINKAGES:
        raise ValueError(f"unknown linkage '{method}'")
    n = x.shape[0]
    ids = list(case_ids) if case_ids is not None else [str(i) for i in range(n)]
    if len(ids) != n:
        raise ValueError("case_ids length does not match the number of vectors")

    squared = method == "ward"
    dist = _pairwise_sq_distances(x)
    if not squared:
        dist = np.sqrt(dist)
    np.fill_diagonal(dist, np.inf)

    slot_id = np.arange(n)                  # cluster id held in each slot
    slot_size = np.ones(n, dtype=int)
    active = np.ones(n, dtype=bool)
    linkage = np.zeros((n - 1, 4))

    for step in range(n - 1):
        masked = np.where(active[:, None] & active[None, :], dist, np.inf)
        best = masked.min()
        rows, cols = np.nonzero(np.triu(masked == best, k=1))
        pair_ids = np.stack([slot_id[rows], slot_id[cols]], axis=1)
        pair_ids.sort(axis=1)
        choice = np.lexsort((pair_ids[:, 1], pair_ids[:, 0]))[0]
        i, j = int(rows[choice]), int(cols[choice])

        n_i, n_j = int(slot_size[i]), int(slot_size[j])
        id_a, id_b = sorted((int(slot_id[i]), int(slot_id[j])))
        height = float(np.sqrt(best)) if squared else float(best)
        linkage[step] = (id_a, id_b, height, n_i + n_j)

        others = np.nonzero(active)[0]
        others = others[(others != i) & (others != j)]
        if others.size:
            updated = _lance_williams(
                method, dist[others, i], dist[others, j], best, n_i, n_j, slot_size[others]
            )
            dist[others, i] = updated
            dist[i, others] = updated

        active[j] = False
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        slot_id[i] = n + step
        slot_size[i] = n_i + n_j

    logger.debug(f"{method} linkage over {n} vectors, top height {linkage[-1, 2]:.4f}")
    return Dendrogram(linkage=linkage, case_ids=ids, method=method)


def cut_tree(dendrogram: Dendrogram, k: int) -> ClusterAssignment:
    """Undo the k-1 last merges; every case lands in exactly one of k clusters"""
    labels = dendrogram.labels(k)
    return ClusterAssignment(
        k=k,
        clusters={case: int(label) for case, label in zip(dendrogram.case_ids, labels)},
    )


def adjusted_rand_index(labels_true, labels_pred) -> float:
    labels_true = np.asarray(labels_true)
    labels_pred = np.asarray(labels_pred)
    if labels_true.shape != labels_pred.shape:
        raise ValueError("label arrays differ in length")
    return float(adjusted_rand_score(labels_true, labels_pred))
