"""Directed k-nearest-neighbor graphs with self-loops.

Layer-1 graphs are built from 3D coordinates (kd-tree accelerated); deeper
layers rebuild the graph from that layer's embeddings (exact brute force).
Both paths order candidates by (squared distance, index), so accelerated
results are identical to brute force in all cases, ties included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GraphError

_LEAF_SIZE = 24


@dataclass
class KnnGraph:
    """Per node: self-loop first, then the k nearest others by (distance, index)."""

    num_nodes: int
    k: int
    neighbors: np.ndarray  # (num_nodes, k+1) target indices

    def edges(self):
        """Flattened (source, target) arrays covering all k+1 out-edges."""
        src = np.repeat(np.arange(self.num_nodes), self.k + 1)
        return src, self.neighbors.reshape(-1)

    def dump(self) -> str:
        lines = [f"{i}: " + " ".join(str(t) for t in row)
                 for i, row in enumerate(self.neighbors)]
        return "\n".join(lines) + "\n"


def brute_force_knn(points: np.ndarray, k: int) -> np.ndarray:
    """(M, k) nearest-other-node indices by (squared distance, index)."""
    pts = np.asarray(points, dtype=np.float64)
    m = len(pts)
    sq = np.sum(pts * pts, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
    np.fill_diagonal(d2, np.inf)
    if m <= 2 * k + 2:
        # stable sort keeps the lower index first on exact distance ties
        return np.argsort(d2, axis=1, kind="stable")[:, :k]
    # selection instead of a full sort; rows with a tie straddling the k-th
    # distance fall back to the stable full sort so tie-breaks stay exact
    cand = np.argpartition(d2, k - 1, axis=1)[:, :k]
    cand_d = np.take_along_axis(d2, cand, axis=1)
    kth = cand_d.max(axis=1)
    # order the k selected by (distance, index): two stable sorts compose
    order = np.argsort(cand, axis=1, kind="stable")
    cand = np.take_along_axis(cand, order, axis=1)
    cand_d = np.take_along_axis(cand_d, order, axis=1)
    order = np.argsort(cand_d, axis=1, kind="stable")
    cand = np.take_along_axis(cand, order, axis=1)
    boundary_tie = np.count_nonzero(d2 <= kth[:, None], axis=1) > k
    for i in np.nonzero(boundary_tie)[0]:
        cand[i] = np.argsort(d2[i], kind="stable")[:k]
    return cand


class KdTree:
    """Static kd-tree over (M, 3) points with bucket leaves.

    Query results use the same (squared distance, index) ordering as
    brute_force_knn, so both return identical neighbor lists.
    """

    def __init__(self, points: np.ndarray, leaf_size: int = _LEAF_SIZE):
        self.points = np.asarray(points, dtype=np.float64)
        self.leaf_size = leaf_size
        self._nodes: list[tuple] = []  # (axis, threshold, left, right) or (-1, indices, None, None)
        self._build(np.arange(len(self.points), dtype=np.intp))

    def _build(self, idx: np.ndarray) -> int:
        node_id = len(self._nodes)
        self._nodes.append(None)
        if len(idx) <= self.leaf_size:
            self._nodes[node_id] = (-1, idx, None, None)
            return node_id
        sub = self.points[idx]
        axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        order = np.lexsort((idx, sub[:, axis]))
        half = len(idx) // 2
        left_idx, right_idx = idx[order[:half]], idx[order[half:]]
        threshold = float(self.points[left_idx[-1], axis])
        left = self._build(left_idx)
        right = self._build(right_idx)
        self._nodes[node_id] = (axis, threshold, left, right)
        return node_id

    def query_knn(self, qi: int, k: int) -> np.ndarray:
        """Indices of the k nearest points other than qi itself."""
        q = self.points[qi]
        best: list[tuple[float, int]] = []  # ascending (d2, idx), length <= k

        def visit(node_id: int):
            axis, a, b, c = self._nodes[node_id]
            if axis == -1:
                idx = a
                d2 = np.sum((self.points[idx] - q) ** 2, axis=1)
                if len(best) == k:
                    keep = d2 <= best[-1][0]
                    idx, d2 = idx[keep], d2[keep]
                for dist, j in zip(d2, idx):
                    if j == qi:
                        continue
                    cand = (float(dist), int(j))
                    if len(best) == k and cand >= best[-1]:
                        continue
                    lo, hi = 0, len(best)
                    while lo < hi:
                        mid = (lo + hi) // 2
                        if best[mid] < cand:
                            lo = mid + 1
                        else:
                            hi = mid
                    best.insert(lo, cand)
                    if len(best) > k:
                        best.pop()
                return
            threshold, left, right = a, b, c
            diff = q[axis] - threshold
            near, far = (left, right) if diff <= 0 else (right, left)
            visit(near)
            # equality must still visit the far side: an equidistant point
            # there may win the index tie-break
            if len(best) < k or diff * diff <= best[-1][0]:
                visit(far)

        visit(0)
        return np.array([j for _, j in best], dtype=np.intp)


def knn_graph(points: np.ndarray, k: int) -> KnnGraph:
    """Build the directed kNN graph (self-loop first) over feature vectors.

    Uses the kd-tree for 3-dimensional inputs and exact brute force
    otherwise; both give identical results.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise GraphError("bad-input", f"points must be 2-dimensional, got shape {pts.shape}")
    m, d = pts.shape
    if m <= k:
        raise GraphError("too-few-nodes", f"need at least k+1={k + 1} nodes, got {m}")
    if not np.isfinite(pts).all():
        raise GraphError("bad-input", "points contain non-finite values")
    if d == 3:
        tree = KdTree(pts)
        nearest = np.empty((m, k), dtype=np.intp)
        for i in range(m):
            nearest[i] = tree.query_knn(i, k)
    else:
        nearest = brute_force_knn(pts, k)
    neighbors = np.concatenate([np.arange(m, dtype=np.intp)[:, None], nearest], axis=1)
    return KnnGraph(num_nodes=m, k=k, neighbors=neighbors)


def rebuild_for_layer(embeddings: np.ndarray, k: int) -> KnnGraph:
    """Graph for the next layer, from the geometry stream's node embeddings.

    The returned graph is shared by both streams at that layer.
    """
    return knn_graph(embeddings, k)
