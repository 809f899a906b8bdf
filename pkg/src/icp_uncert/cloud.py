"""Point clouds, exact nearest-neighbour search and PCA normals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .se3 import Pose

LEAF_SIZE = 16
DEFAULT_NORMAL_K = 20


class EmptyCloudError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    """``N`` points in meters, optionally with unit normals.

    Rows of ``normals`` that could not be estimated hold NaN; they are
    reported by :attr:`normal_valid` and skipped during matching.
    """

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if len(pts) == 0:
            raise EmptyCloudError("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.array(self.normals, dtype=float)
            if nrm.shape != pts.shape:
                raise ValueError(f"normals shape {nrm.shape} does not match points {pts.shape}")
            ok = np.all(np.isfinite(nrm), axis=1)
            if np.any(np.abs(np.linalg.norm(nrm[ok], axis=1) - 1.0) > 1e-6):
                raise ValueError("normals must have unit norm")
            nrm.flags.writeable = False
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    @property
    def normal_valid(self) -> np.ndarray:
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return np.all(np.isfinite(self.normals), axis=1)

    def select(self, mask_or_index) -> PointCloud:
        normals = None if self.normals is None else self.normals[mask_or_index]
        return PointCloud(self.points[mask_or_index], normals)


class KDTree:
    """Exact kd-tree (median split, leaf size 16) over a cloud's points."""

    def __init__(self, cloud: PointCloud):
        self.cloud = cloud
        self._tree = cKDTree(cloud.points, leafsize=LEAF_SIZE, balanced_tree=True)

    def __len__(self) -> int:
        return len(self.cloud)

    def query(self, points: np.ndarray, k: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(distances, indices)`` of the ``k`` nearest points."""
        return self._tree.query(np.asarray(points, dtype=float), k=k, eps=0.0)


def nearest_neighbor(tree: KDTree, query) -> tuple[int, float]:
    dist, idx = tree.query(np.asarray(query, dtype=float).reshape(3))
    return int(idx), float(dist)


def transform_cloud(cloud: PointCloud, T: Pose) -> PointCloud:
    points = T.apply(cloud.points)
    normals = None if cloud.normals is None else cloud.normals @ T.rotation.T
    return PointCloud(points, normals)


def random_subsample(cloud: PointCloud, keep_probability: float, seed) -> PointCloud:
    """Keep each point independently with probability ``keep_probability``."""
    if not 0.0 < keep_probability <= 1.0:
        raise ValueError(f"keep_probability must lie in (0, 1], got {keep_probability}")
    if keep_probability == 1.0:
        return cloud
    rng = np.random.default_rng(seed)
    keep = rng.random(len(cloud)) < keep_probability
    if not keep.any():
        raise EmptyCloudError("random subsampling removed every point")
    return cloud.select(keep)


def estimate_normals(cloud: PointCloud, k: int = DEFAULT_NORMAL_K, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """PCA normals from the ``k`` nearest neighbours of every point.

    Each normal is the eigenvector of the smallest eigenvalue of the
    neighbourhood covariance, flipped to face ``viewpoint``.  Neighbourhoods
    of rank < 2 (collinear or coincident points) get a NaN normal.
    """
    n = len(cloud)
    if k < 3:
        raise ValueError("normal estimation needs k >= 3")
    if n <= k:
        raise ValueError(f"normal estimation needs more than k={k} points, got {n}")
    pts = cloud.points
    _, idx = cKDTree(pts, leafsize=LEAF_SIZE).query(pts, k=k)
    nbrs = pts[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    to_view = np.asarray(viewpoint, dtype=float) - pts
    flip = np.einsum("ij,ij->i", normals, to_view) < 0
    normals[flip] *= -1.0
    degenerate = evals[:, 1] <= 1e-12 * np.maximum(evals[:, 2], np.finfo(float).tiny)
    normals[degenerate] = np.nan
    return PointCloud(pts, normals)
