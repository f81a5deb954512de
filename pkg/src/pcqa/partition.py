"""Cloud pre-processing: vertical slicing, centroid sampling, patch extraction.

A cloud is normalized, sorted along its widest axis and cut into
equal-count slices (partitions). Inside each partition, farthest-point
sampling places centroids and a fixed-size nearest-neighbor patch is
extracted around each. All steps are deterministic given (inputs, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PartitionError
from .pcio import PointCloud


@dataclass(frozen=True)
class PreprocessConfig:
    num_partitions: int = 12
    patch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.num_partitions < 1:
            raise PartitionError("bad-config", "num_partitions must be >= 1")
        # patch_size must also exceed the graph's k; that is checked where k
        # is known (model forward, CLI), since k is a model setting
        if self.patch_size < 1:
            raise PartitionError("bad-config", "patch_size must be >= 1")


@dataclass
class Partition:
    slice_index: int
    point_indices: np.ndarray  # indices into the parent cloud, slice-axis order

    def __len__(self) -> int:
        return len(self.point_indices)


@dataclass
class Patch:
    """Exactly P cloud points around a centroid, positions re-centered on it."""

    centroid_index: int
    point_indices: np.ndarray  # (P,) cloud indices, centroid first
    positions: np.ndarray      # (P, 3), centroid subtracted
    colors: np.ndarray         # (P, 3) in [0, 1]


def normalize_cloud(pc: PointCloud) -> PointCloud:
    """Center the bounding box on the origin and scale its largest extent to 1.

    Colors are divided by 255 into [0, 1]. A degenerate cloud (all points
    identical) is translated to the origin with scale 1.
    """
    lo = pc.positions.min(axis=0)
    hi = pc.positions.max(axis=0)
    center = (lo + hi) / 2.0
    extent = float((hi - lo).max())
    scale = 1.0 / extent if extent > 0 else 1.0
    return PointCloud((pc.positions - center) * scale, pc.colors / 255.0,
                      name=pc.name, mos=pc.mos)


def slice_vertical(pc: PointCloud, cfg: PreprocessConfig) -> list[Partition]:
    """Split the cloud into num_partitions contiguous equal-count slices
    along the axis of largest extent (ties in coordinate broken by index)."""
    n = len(pc)
    if cfg.num_partitions > n:
        raise PartitionError("too-many-slices",
                             f"{cfg.num_partitions} slices requested for {n} points")
    extents = pc.positions.max(axis=0) - pc.positions.min(axis=0)
    axis = int(np.argmax(extents))
    order = np.argsort(pc.positions[:, axis], kind="stable")
    base, rem = divmod(n, cfg.num_partitions)
    partitions = []
    start = 0
    for i in range(cfg.num_partitions):
        size = base + (1 if i < rem else 0)
        partitions.append(Partition(i, order[start:start + size]))
        start += size
    return partitions


def sample_centroids(part: Partition, pc: PointCloud, cfg: PreprocessConfig) -> np.ndarray:
    """Pick m = max(1, |part| // P) centroids by farthest-point sampling.

    The first centroid is a seeded-uniform draw from the partition; each next
    one maximizes the minimum distance to the already-chosen set (ties by
    lower position within the partition).
    """
    if len(part) == 0:
        raise PartitionError("empty-partition", "cannot sample centroids from an empty partition")
    m = max(1, len(part) // cfg.patch_size)
    rng = np.random.default_rng([cfg.seed, part.slice_index])
    pts = pc.positions[part.point_indices]
    first = int(rng.integers(len(part)))
    chosen = [first]
    min_d2 = np.sum((pts - pts[first]) ** 2, axis=1)
    for _ in range(1, m):
        min_d2[chosen] = -1.0  # never re-pick
        nxt = int(np.argmax(min_d2))
        chosen.append(nxt)
        min_d2 = np.minimum(min_d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return part.point_indices[np.array(chosen, dtype=np.intp)]


def extract_patches(part: Partition, centroids: np.ndarray, pc: PointCloud,
                    cfg: PreprocessConfig) -> list[Patch]:
    """For each centroid, take its P-1 nearest partition points (ties by lower
    index) plus the centroid itself; positions re-centered on the centroid."""
    p = cfg.patch_size
    if len(part) < p:
        raise PartitionError("partition-too-small",
                             f"partition {part.slice_index} has {len(part)} < {p} points")
    pts = pc.positions[part.point_indices]
    patches = []
    for c in np.asarray(centroids):
        local_c = int(np.nonzero(part.point_indices == c)[0][0])
        d2 = np.sum((pts - pts[local_c]) ** 2, axis=1)
        d2[local_c] = -np.inf  # centroid always first
        # sort by distance, ties by lower cloud index
        nearest = np.lexsort((part.point_indices, d2))[:p]
        idx = part.point_indices[nearest]
        patches.append(Patch(
            centroid_index=int(c),
            point_indices=idx,
            positions=pc.positions[idx] - pc.positions[c],
            colors=pc.colors[idx].copy(),
        ))
    return patches


def partition_cloud(pc: PointCloud, cfg: PreprocessConfig) -> list[list[Patch]]:
    """Normalize-independent orchestrator: slice, merge undersized slices into
    their neighbor, then sample centroids and extract patches per partition.

    Returns one patch list per surviving partition.
    """
    partitions = slice_vertical(pc, cfg)
    merged: list[Partition] = []
    for part in partitions:
        if merged and len(merged[-1]) < cfg.patch_size:
            merged[-1] = Partition(merged[-1].slice_index,
                                   np.concatenate([merged[-1].point_indices, part.point_indices]))
        else:
            merged.append(part)
    if len(merged) > 1 and len(merged[-1]) < cfg.patch_size:
        tail = merged.pop()
        merged[-1] = Partition(merged[-1].slice_index,
                               np.concatenate([merged[-1].point_indices, tail.point_indices]))
    if len(merged[0]) < cfg.patch_size:
        raise PartitionError("partition-too-small",
                             f"cloud has too few points for one {cfg.patch_size}-point patch")
    result = []
    for part in merged:
        centroids = sample_centroids(part, pc, cfg)
        result.append(extract_patches(part, centroids, pc, cfg))
    return result
