"""Dispersed projection of points onto a mesh and its inverse.

A point ``x`` above triangle ``T`` is expressed in barycentric coordinates of
the *parallel triangle* ``T'`` cut from the (aligned) vertex-normal lines by the
plane through ``x`` parallel to ``T``; the same coordinates on ``T`` give the
surface point ``s``.  Because ``x - s`` is then a fixed multiple of the
interpolated normal at ``s``, ``(face, bary, h)`` can be mapped back to ``x``
exactly by :func:`unproject`.
"""
import weakref
from dataclasses import dataclass

import numpy as np

from . import _accel, kernels, kernels_np
from .kernels import CULLED, FALLBACK, OK, SLACK
from .mesh import classify_sides
from .spatial import NearestPoints, SurfacePoint, build_bvh, nearest_surface_points

BARY_EPS = 1e-9
SLACK_EPS = BARY_EPS * 1e3


class AlignmentError(ArithmeticError):
    pass


class AmbiguousProjectionError(ValueError):
    """The surface point sits on an edge or vertex, where the inverse is not unique."""


@dataclass(frozen=True)
class AlignedTriangle:
    verts: np.ndarray
    aligned_normals: np.ndarray
    face_normal: np.ndarray
    face: int = -1

    @property
    def inv_dots(self):
        return 1.0 / (self.aligned_normals @ self.face_normal)


@dataclass(frozen=True)
class ProjectionResult:
    surface: SurfacePoint
    height: float
    normal_dir: np.ndarray
    fallback: bool = False
    status: int = OK


def _align(verts, normals, fn):
    """Vectorised alignment: verts, normals (..., 3, 3); fn (..., 3)."""
    out = np.empty_like(normals)
    for i in range(3):
        v = verts[..., i, :]
        e1 = verts[..., (i + 1) % 3, :] - v
        e2 = verts[..., (i + 2) % 3, :] - v
        n = normals[..., i, :]
        q = n - np.sum(n * fn, axis=-1, keepdims=True) * fn  # p - v in the plane
        g11 = np.sum(e1 * e1, axis=-1)
        g12 = np.sum(e1 * e2, axis=-1)
        g22 = np.sum(e2 * e2, axis=-1)
        r1 = np.sum(q * e1, axis=-1)
        r2 = np.sum(q * e2, axis=-1)
        det = g11 * g22 - g12 * g12
        c1 = (g22 * r1 - g12 * r2) / det
        c2 = (g11 * r2 - g12 * r1) / det
        m = n - np.maximum(c1, 0.0)[..., None] * e1 - np.maximum(c2, 0.0)[..., None] * e2
        length = np.linalg.norm(m, axis=-1, keepdims=True)
        if np.any(length == 0.0):
            raise AlignmentError("aligned normal vanished; vertex normal is in the face plane")
        out[..., i, :] = m / length
    return out


def edge_coefficients(verts, normal, slot, face_normal):
    """In-plane offset of ``normal`` at corner ``slot`` in the two-edge basis (c1, c2)."""
    verts = np.asarray(verts, dtype=np.float64)
    v = verts[slot]
    e1 = verts[(slot + 1) % 3] - v
    e2 = verts[(slot + 2) % 3] - v
    q = normal - (normal @ face_normal) * face_normal
    g = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
    return np.linalg.solve(g, [q @ e1, q @ e2])


def align_vertex_normals(verts, normals, face_normal, face=-1):
    """Remove the inward in-plane part of each corner normal of one triangle."""
    verts = np.asarray(verts, dtype=np.float64).reshape(3, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(3, 3)
    fn = np.asarray(face_normal, dtype=np.float64).reshape(3)
    if 0.5 * np.linalg.norm(np.cross(verts[1] - verts[0], verts[2] - verts[0])) < 1e-12:
        raise ValueError("degenerate triangle")
    if np.any(normals @ fn <= 0.0):
        raise ValueError("vertex normal does not form an acute angle with the face normal")
    return AlignedTriangle(verts, _align(verts, normals, fn), fn, face)


def aligned_triangle(mesh, face, inverted=False):
    sgn = -1.0 if inverted else 1.0
    f = mesh.faces[face]
    return align_vertex_normals(mesh.vertices[f], sgn * mesh.vertex_normals[f],
                                sgn * mesh.face_normals[face], face)


def alignment_table(mesh, inverted=False):
    """Aligned normals (F, 3, 3), face normals (F, 3), 1/<n', n_T> (F, 3)."""
    sgn = -1.0 if inverted else 1.0
    fn = sgn * mesh.face_normals
    an = _align(mesh.triangles(), sgn * mesh.vertex_normals[mesh.faces], fn)
    inv = 1.0 / np.einsum("fkj,fj->fk", an, fn)
    return an, fn, inv


def parallel_triangle(x, tri):
    """Corners of the parallel triangle through ``x`` and the plane offset ``l``."""
    x = np.asarray(x, dtype=np.float64)
    l = float((x - tri.verts[0]) @ tri.face_normal)
    return tri.verts + (l * tri.inv_dots)[:, None] * tri.aligned_normals, l


def parallel_triangle_barycentric(x, tri, bary_eps=BARY_EPS, with_code=False):
    """Barycentrics of ``x`` in its parallel triangle, or None if ``x`` is not inside.

    With ``with_code`` the return is ``(code, bary, l)``: code 0 means inside,
    1 below the base plane, 2 degenerate parallel triangle (``bary`` is then
    None, as it is for code 1), 3 outside.
    """
    x = np.asarray(x, dtype=np.float64)
    n = tri.aligned_normals
    inv = tri.inv_dots
    v = tri.verts
    orient = 1.0 if np.cross(v[1] - v[0], v[2] - v[0]) @ tri.face_normal > 0 else -1.0
    code, a0, a1, a2, l = kernels.parallel_bary(x, v[0], v[1], v[2], n[0], n[1], n[2],
                                                tri.face_normal, inv[0], inv[1], inv[2], orient)
    bary = np.array([a0, a1, a2]) if code in (0, 3) else None
    if code == 0 and bary.min() < -bary_eps:
        code = 3
    if with_code:
        return code, bary, l
    return (bary, l) if code == 0 else None


def interpolated_normal(tri, bary):
    m = (np.asarray(bary, dtype=np.float64) * tri.inv_dots) @ tri.aligned_normals
    return m / np.linalg.norm(m)


@dataclass
class ProjectionBatch:
    """Row-wise projection results.

    ``status`` is 0 when a parallel triangle contained the point, 1 when it
    did only with the widened tolerance, 2 for the nearest-point fallback and
    3 for points culled by distance (height is then +-inf).
    """

    face: np.ndarray
    bary: np.ndarray
    position: np.ndarray
    height: np.ndarray
    normal_dir: np.ndarray
    status: np.ndarray
    inside: np.ndarray
    degenerate: np.ndarray = None

    def __len__(self):
        return len(self.face)

    @property
    def fallback(self):
        return (self.status == SLACK) | (self.status == FALLBACK)

    @property
    def culled(self):
        return self.status == CULLED

    def __getitem__(self, i):
        sp = SurfacePoint(int(self.face[i]), tuple(float(b) for b in self.bary[i]), self.position[i].copy())
        return ProjectionResult(sp, float(self.height[i]), self.normal_dir[i].copy(),
                                bool(self.fallback[i]), int(self.status[i]))


class Projector:
    """Per-mesh projection state: BVH, topology and aligned-normal tables.

    Built once and read-only afterwards; batch calls on one projector may run
    from several threads.
    """

    def __init__(self, mesh, bvh=None):
        self.mesh = mesh
        self.bvh = bvh if bvh is not None else build_bvh(mesh)
        out = alignment_table(mesh)
        ins = alignment_table(mesh, inverted=True)
        self.anorm = np.ascontiguousarray(np.stack([out[0], ins[0]]))
        self.fnorm = np.ascontiguousarray(np.stack([out[1], ins[1]]))
        self.inv = np.ascontiguousarray(np.stack([out[2], ins[2]]))

    def aligned(self, face, inverted=False):
        k = 1 if inverted else 0
        return AlignedTriangle(self.mesh.vertices[self.mesh.faces[face]], self.anorm[k, face],
                               self.fnorm[k, face], int(face))

    def nearest(self, points):
        return nearest_surface_points(self.bvh, self.mesh, points)

    def project(self, points, cull=None, nearest=None):
        """Dispersed projection of each row of ``points``.

        Points farther than ``cull`` from the surface are skipped (status 3);
        their dispersed height could not be smaller than that distance.
        """
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        if nearest is None:
            nearest = self.nearest(pts)
        cull_dsq = np.inf if cull is None else float(cull) ** 2
        inside = np.zeros(len(pts), bool)
        live = np.nonzero(nearest.dist_sq <= cull_dsq)[0]
        if live.size:
            sub = NearestPoints(nearest.face[live], nearest.bary[live], nearest.position[live],
                                nearest.dist_sq[live])
            inside[live] = classify_sides(self.mesh, pts[live], nearest=sub)
        impl = kernels if _accel.backend() == "numba" else kernels_np
        ptr, idx = self.mesh.vertex_faces
        res = impl.dispersed_batch(pts, self.mesh.vertices, self.mesh.faces, self.mesh.face_adjacency,
                                   ptr, idx, self.anorm, self.fnorm, self.inv,
                                   nearest.face, np.ascontiguousarray(nearest.bary), nearest.dist_sq,
                                   inside, cull_dsq, BARY_EPS, SLACK_EPS)
        face, bary, pos, h, ndir, status, deg = res
        return ProjectionBatch(face, bary, pos, h, ndir, status, inside, deg)

    def project_nearest(self, points):
        """Nearest-point projection with the same signed-height convention."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        near = self.nearest(pts)
        inside = classify_sides(self.mesh, pts, nearest=near)
        sgn = np.where(inside, -1.0, 1.0)
        diff = pts - near.position
        dist = np.sqrt(near.dist_sq)
        ndir = np.zeros_like(diff)
        nz = dist > 0
        ndir[nz] = sgn[nz, None] * diff[nz] / dist[nz, None]
        ndir[~nz] = self.mesh.face_normals[near.face[~nz]]
        return ProjectionBatch(near.face, near.bary, near.position, sgn * dist, ndir,
                               np.zeros(len(pts), np.int64), inside)

    def interpolated_normals(self, faces, barys, inverted):
        """Row-wise interpolated normal for (face, bary); ``inverted`` selects the pass."""
        k = np.asarray(inverted, dtype=np.int64)
        faces = np.asarray(faces, dtype=np.int64)
        w = np.asarray(barys, dtype=np.float64) * self.inv[k, faces]
        m = np.einsum("ik,ikj->ij", w, self.anorm[k, faces])
        return m / np.linalg.norm(m, axis=1, keepdims=True)

    def unproject(self, faces, barys, heights, check=True):
        """Inverse of :meth:`project` for strictly interior barycentrics.

        Raises :class:`AmbiguousProjectionError` when a nonzero height meets a
        barycentric coordinate within ``BARY_EPS`` of zero (unless ``check``
        is off).
        """
        faces = np.atleast_1d(np.asarray(faces, dtype=np.int64))
        barys = np.asarray(barys, dtype=np.float64).reshape(-1, 3)
        h = np.atleast_1d(np.asarray(heights, dtype=np.float64))
        if check:
            bad = (h != 0.0) & (barys.min(axis=1) <= BARY_EPS)
            if bad.any():
                i = int(np.nonzero(bad)[0][0])
                raise AmbiguousProjectionError(
                    f"row {i}: face {faces[i]} bary {barys[i].tolist()} lies on an edge or vertex")
        tri = self.mesh.faces[faces]
        v = self.mesh.vertices
        s = barys[:, 0:1] * v[tri[:, 0]] + barys[:, 1:2] * v[tri[:, 1]] + barys[:, 2:3] * v[tri[:, 2]]
        inverted = h < 0
        m = self.interpolated_normals(faces, barys, inverted)
        # the inverted pass normals point inward, so the offset is |h| along them
        return s + np.abs(h)[:, None] * m


_PROJECTORS = weakref.WeakKeyDictionary()


def projector_for(mesh, bvh=None):
    """Cached :class:`Projector` for ``mesh`` (keyed weakly on the mesh object)."""
    p = _PROJECTORS.get(mesh)
    if p is None or (bvh is not None and p.bvh is not bvh):
        p = Projector(mesh, bvh)
        _PROJECTORS[mesh] = p
    return p


def dispersed_project(bvh, mesh, x):
    return projector_for(mesh, bvh).project(np.asarray(x, dtype=np.float64)[None])[0]


def nearest_project(bvh, mesh, x):
    return projector_for(mesh, bvh).project_nearest(np.asarray(x, dtype=np.float64)[None])[0]


def unproject(mesh, face, bary, h):
    return projector_for(mesh).unproject([face], [bary], [h])[0]
