"""Incremental voxel-deduplicated local map with k-NN queries.

The contract is a bounded spatial index: inserts dedupe at voxel
resolution, points far from the current pose are dropped, and k-NN
queries are exact over the stored points. Internally a hash grid holds
the points and a scipy KD-tree is rebuilt lazily when queried after a
modification.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


class LocalSubmap:
    def __init__(self, voxel_resolution: float = 0.05, extent: float = 150.0):
        if voxel_resolution <= 0:
            raise ValueError("voxel_resolution must be positive")
        self.voxel_resolution = float(voxel_resolution)
        self.extent = float(extent)  # side length of the sliding box
        self._voxels: dict = {}
        self._tree = None
        self._points = None
        self._normals_cache: dict = {}

    def __len__(self) -> int:
        return len(self._voxels)

    def _keys(self, points) -> np.ndarray:
        return np.floor(np.asarray(points) / self.voxel_resolution).astype(np.int64)

    def insert(self, points) -> int:
        """Insert points, one per voxel (first wins). Returns inserted count."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        added = 0
        voxels = self._voxels
        for key, p in zip(map(tuple, self._keys(points)), points):
            if key not in voxels:
                voxels[key] = p
                added += 1
        if added:
            self._dirty()
        return added

    def crop_to_box(self, center) -> int:
        """Remove points outside the sliding box centered at `center`."""
        center = np.asarray(center, dtype=float)
        half = self.extent / 2.0
        doomed = [
            k for k, p in self._voxels.items() if np.max(np.abs(p - center)) > half
        ]
        for k in doomed:
            del self._voxels[k]
        if doomed:
            self._dirty()
        return len(doomed)

    def _dirty(self):
        self._tree = None
        self._points = None
        self._normals_cache.clear()

    def points(self) -> np.ndarray:
        if self._points is None:
            self._points = (
                np.stack(list(self._voxels.values()))
                if self._voxels
                else np.empty((0, 3))
            )
        return self._points

    def _ensure_tree(self):
        if self._tree is None:
            pts = self.points()
            self._tree = cKDTree(pts) if len(pts) else None
        return self._tree

    def knn(self, queries, k: int = 1):
        """Exact k nearest stored points. Returns (distances, indices)."""
        tree = self._ensure_tree()
        if tree is None:
            raise ValueError("submap is empty")
        queries = np.atleast_2d(queries)
        d, idx = tree.query(queries, k=k)
        return d.reshape(len(queries), -1), idx.reshape(len(queries), -1)

    def normals(self, indices, k: int = 5) -> np.ndarray:
        """Plane normals at the given stored-point indices, fit to the k
        nearest stored neighbors (smallest covariance eigenvector)."""
        return self.plane_normals(indices, k)[0]

    def plane_normals(self, indices, k: int = 5):
        """(normals, valid) at the given stored-point indices.

        A fit is valid only when the neighborhood is genuinely planar:
        thin along the normal and spread in both in-plane directions
        (nearly collinear neighborhoods give arbitrary normals)."""
        pts = self.points()
        tree = self._ensure_tree()
        out = np.empty((len(indices), 3))
        ok = np.empty(len(indices), dtype=bool)
        todo = [i for i, idx in enumerate(indices) if idx not in self._normals_cache]
        if todo:
            uniq = sorted({int(indices[i]) for i in todo})
            kk = min(k, len(pts))
            _, nbr = tree.query(pts[uniq], k=kk)
            nbr = np.atleast_2d(nbr)
            for u, row in zip(uniq, nbr):
                local = pts[row] - pts[row].mean(axis=0)
                cov = local.T @ local
                vals, vecs = np.linalg.eigh(cov)
                valid = bool(
                    vals[2] > 0.0
                    and vals[0] <= 1e-3 * vals[2]
                    and vals[1] >= 1e-2 * vals[2]
                )
                self._normals_cache[u] = (vecs[:, 0], valid)
        for i, idx in enumerate(indices):
            out[i], ok[i] = self._normals_cache[int(idx)]
        return out, ok
