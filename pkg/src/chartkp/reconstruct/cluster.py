"""Grouping candidate keypoints by embedding similarity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ..heatmaps import EmbeddingMap


@dataclass(frozen=True)
class ClusterParams:
    metric: str = "cosine"
    cosine_threshold: float = 0.85
    euclidean_threshold: float = 1e-5

    def __post_init__(self):
        if self.metric not in ("cosine", "euclidean"):
            raise ValueError("metric must be 'cosine' or 'euclidean'")
        if not 0.0 < self.cosine_threshold < 1.0:
            raise ValueError("cosine_threshold must lie in (0, 1)")
        if self.euclidean_threshold <= 0:
            raise ValueError("euclidean_threshold must be > 0")


def similarity_graph(vectors: np.ndarray, params: ClusterParams = ClusterParams()) -> np.ndarray:
    """K x K boolean adjacency of the thresholded similarity graph (no self loops).

    Zero vectors have no defined direction and never link under cosine.
    """
    x = np.asarray(vectors, dtype=float)
    if params.metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        u = x / safe[:, None]
        adj = (u @ u.T) >= params.cosine_threshold
        adj &= (norms > 0)[:, None] & (norms > 0)[None, :]
    else:
        sq = np.sum(x * x, axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
        adj = np.sqrt(d2) <= params.euclidean_threshold
    np.fill_diagonal(adj, False)
    return adj


def cluster_vectors(vectors: np.ndarray, params: ClusterParams = ClusterParams()) -> List[List[int]]:
    """Connected components of the similarity graph, each a sorted index
    list; clusters are ordered by their smallest member."""
    k = len(vectors)
    if k == 0:
        return []
    adj = similarity_graph(vectors, params)
    _, labels = connected_components(csr_matrix(adj), directed=False)
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def cluster_keypoints(emb: EmbeddingMap, cands: Sequence, params: ClusterParams = ClusterParams()) -> List[List[int]]:
    """Cluster candidates by the embeddings at their cells."""
    if not cands:
        return []
    vecs = np.stack([emb.at(*c.cell) for c in cands])
    return cluster_vectors(vecs, params)
