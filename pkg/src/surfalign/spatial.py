"""Closest-point queries on triangle meshes.

``nearest_surface_points`` walks a median-split AABB tree;
``brute_force_nearest`` scans every face and is kept as the reference the tree
is tested against.  Both break distance ties towards the lowest face index.
"""
from dataclasses import dataclass

import numpy as np

from . import _accel, kernels, kernels_np

LEAF_SIZE = 4


class DegenerateTriangleError(ValueError):
    pass


@dataclass(frozen=True)
class SurfacePoint:
    face: int
    bary: tuple
    position: np.ndarray

    def reconstruct(self, mesh):
        return np.asarray(self.bary) @ mesh.vertices[mesh.faces[self.face]]


@dataclass
class NearestPoints:
    """Batch result of a nearest-point query; row ``i`` answers query ``i``."""

    face: np.ndarray
    bary: np.ndarray
    position: np.ndarray
    dist_sq: np.ndarray
    visits: np.ndarray = None

    def __len__(self):
        return len(self.face)

    def __getitem__(self, i):
        return SurfacePoint(int(self.face[i]), tuple(float(b) for b in self.bary[i]),
                            self.position[i].copy())

    @property
    def distance(self):
        return np.sqrt(self.dist_sq)


@dataclass(frozen=True)
class Bvh:
    """Flat binary AABB tree.

    Node 0 is the root.  Inner nodes have ``left``/``right`` >= 0; leaves have
    ``left == -1`` and own ``order[start:start + count]``.
    """

    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray

    @property
    def n_nodes(self):
        return len(self.left)

    def leaves(self):
        return np.nonzero(self.left < 0)[0]

    def leaf_faces(self, node):
        return self.order[self.start[node]:self.start[node] + self.count[node]]

    def arrays(self):
        return self.lo, self.hi, self.left, self.right, self.start, self.count, self.order


def closest_point_on_triangle(x, tri, area_eps=1e-12):
    """Closest point of the closed triangle ``tri`` to ``x``.

    Returns ``(point, bary, dist_sq)``.  Raises
    :class:`DegenerateTriangleError` when the triangle has (near) zero area.
    """
    x = np.asarray(x, dtype=np.float64)
    a, b, c = (np.asarray(t, dtype=np.float64) for t in tri)
    if 0.5 * np.linalg.norm(np.cross(b - a, c - a)) < area_eps:
        raise DegenerateTriangleError("triangle has zero area")
    r = kernels.closest_point_triangle(x, a, b, c)
    return np.array(r[:3]), (r[3], r[4], r[5]), r[6]


def build_bvh(mesh, leaf_size=LEAF_SIZE):
    """Median-of-centroids split on the longest centroid axis."""
    tris = mesh.triangles()
    if len(tris) == 0:
        raise ValueError("cannot build a BVH over an empty mesh")
    tmin = tris.min(axis=1)
    tmax = tris.max(axis=1)
    cent = tris.mean(axis=1)
    lo, hi, left, right, start, count = [], [], [], [], [], []
    order = []

    def new_node(idx):
        lo.append(tmin[idx].min(axis=0))
        hi.append(tmax[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(left) - 1

    root = new_node(np.arange(len(tris)))
    stack = [(root, np.arange(len(tris)))]
    while stack:
        node, idx = stack.pop()
        if len(idx) <= leaf_size:
            start[node] = len(order)
            count[node] = len(idx)
            order.extend(idx.tolist())
            continue
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        srt = idx[np.lexsort((idx, c[:, axis]))]
        mid = len(srt) // 2
        li, ri = srt[:mid], srt[mid:]
        ln = new_node(li)
        rn = new_node(ri)
        left[node] = ln
        right[node] = rn
        # right pushed first so leaves come out left-to-right
        stack.append((rn, ri))
        stack.append((ln, li))
    return Bvh(np.array(lo), np.array(hi), np.array(left, np.int64), np.array(right, np.int64),
               np.array(start, np.int64), np.array(count, np.int64), np.array(order, np.int64))


def _points(x):
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(-1, 3))


def nearest_surface_points(bvh, mesh, points):
    pts = _points(points)
    impl = kernels if _accel.backend() == "numba" else kernels_np
    face, bary, pos, dsq, visits = impl.bvh_nearest(pts, mesh.vertices, mesh.faces, *bvh.arrays())
    return NearestPoints(face, bary, pos, dsq, visits)


def nearest_surface_point(bvh, mesh, x):
    return nearest_surface_points(bvh, mesh, x)[0]


def brute_force_nearest_points(mesh, points):
    pts = _points(points)
    impl = kernels if _accel.backend() == "numba" else kernels_np
    face, bary, pos, dsq = impl.brute_nearest(pts, mesh.vertices, mesh.faces)
    return NearestPoints(face, bary, pos, dsq)


def brute_force_nearest(mesh, x):
    return brute_force_nearest_points(mesh, x)[0]
