"""Surface-aligned coordinates over a posed/canonical mesh pair.

A point ``x`` near the posed mesh is projected to ``(face, bary, h)``; the same
``(face, bary)`` evaluated on the canonical mesh gives ``s_c``.  The pair
``(s_c, h)`` is the pose-independent coordinate that fields are written in.
"""
from dataclasses import dataclass

import numpy as np

from .projection import projector_for
from .spatial import DegenerateTriangleError, SurfacePoint


class TopologyMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class MeshPair:
    """A posed mesh and the canonical mesh it shares faces with."""

    posed: object
    canonical: object

    def __post_init__(self):
        p, c = self.posed, self.canonical
        if p.n_faces != c.n_faces or p.n_vertices != c.n_vertices:
            raise TopologyMismatchError(
                f"posed mesh has {p.n_vertices} vertices / {p.n_faces} faces, "
                f"canonical has {c.n_vertices} / {c.n_faces}")
        if not np.array_equal(p.faces, c.faces):
            bad = int(np.nonzero((p.faces != c.faces).any(axis=1))[0][0])
            raise TopologyMismatchError(f"face {bad} differs between posed and canonical mesh")

    @classmethod
    def identity(cls, mesh):
        return cls(mesh, mesh)


@dataclass(frozen=True)
class SurfCoord:
    s_c: np.ndarray
    h: float

    def as_vector(self):
        return np.array([*self.s_c, self.h])


@dataclass(frozen=True)
class LocalFrame:
    normal: np.ndarray
    tangent: np.ndarray
    bitangent: np.ndarray

    def matrix(self):
        """Rows are (tangent, bitangent, normal); maps world vectors to local."""
        return np.stack([self.tangent, self.bitangent, self.normal])


@dataclass
class SurfaceAligned:
    """Batch of surface-aligned coordinates plus the posed projection they came from."""

    s_c: np.ndarray
    h: np.ndarray
    projection: object

    def __len__(self):
        return len(self.h)

    @property
    def coords(self):
        return np.concatenate([self.s_c, self.h[:, None]], axis=1)


def canonical_points(pair, faces, barys):
    faces = np.asarray(faces, dtype=np.int64)
    barys = np.asarray(barys, dtype=np.float64).reshape(-1, 3)
    tri = pair.canonical.vertices[pair.canonical.faces[faces]]
    return np.einsum("ik,ikj->ij", barys, tri)


def canonical_point(pair, face, bary):
    return canonical_points(pair, [face], [bary])[0]


def surface_aligned(pair, points, bvh=None, cull=None, nearest=None):
    """Vectorised :func:`to_surface_aligned`; culled rows get ``s_c = nan``."""
    proj = projector_for(pair.posed, bvh).project(points, cull=cull, nearest=nearest)
    s_c = canonical_points(pair, proj.face, proj.bary)
    s_c[proj.culled] = np.nan
    return SurfaceAligned(s_c, proj.height, proj)


def to_surface_aligned(pair, bvh, x):
    """``(SurfCoord, SurfacePoint)`` of a single point; the fallback flag is on
    ``surface_aligned(...).projection`` for batch callers."""
    res = surface_aligned(pair, np.asarray(x, dtype=np.float64)[None], bvh)
    r = res.projection[0]
    return SurfCoord(res.s_c[0], float(res.h[0])), r.surface


def face_frames(mesh, faces=None):
    """(n, 3, 3) arrays of (tangent, bitangent, normal) rows per face."""
    faces = np.arange(mesh.n_faces) if faces is None else np.asarray(faces, dtype=np.int64)
    tri = mesh.faces[faces]
    v = mesh.vertices
    e = v[tri[:, 1]] - v[tri[:, 0]]
    el = np.linalg.norm(e, axis=1)
    if np.any(el == 0.0) or np.any(mesh.face_areas[faces] <= 0.0):
        bad = faces[(el == 0.0) | (mesh.face_areas[faces] <= 0.0)][0]
        raise DegenerateTriangleError(f"face {bad} is degenerate")
    n = mesh.face_normals[faces]
    t = e / el[:, None]
    # tangent lies in the face plane, so n x t is already unit
    b = np.cross(n, t)
    return np.stack([t, b, n], axis=1)


def local_frame(mesh, sp):
    face = sp.face if isinstance(sp, SurfacePoint) else int(sp)
    t, b, n = face_frames(mesh, [face])[0]
    return LocalFrame(n, t, b)


def view_features(d, frames):
    """Row-wise ``(d, d_local)``; ``frames`` as returned by :func:`face_frames`."""
    d = np.asarray(d, dtype=np.float64).reshape(-1, 3)
    local = np.einsum("ikj,ij->ik", frames, d)
    return np.concatenate([d, local], axis=1)


def view_feature(d, frame):
    return view_features(d, frame.matrix()[None])[0]


def positional_encoding(v, L):
    """``sin/cos(2^k pi u)`` for k < L per component, components in order.

    Works on the last axis, so ``(..., k)`` maps to ``(..., 2 L k)``.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    v = np.asarray(v, dtype=np.float64)
    ang = v[..., :, None] * (np.pi * 2.0 ** np.arange(L))
    out = np.stack([np.sin(ang), np.cos(ang)], axis=-1)
    return out.reshape(*v.shape[:-1], 2 * L * v.shape[-1])
