"""Triangle meshes: loading, normals, assumption checks and side classification."""
from __future__ import annotations

import enum
import io
import json
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _accel, kernels, kernels_np

log = logging.getLogger(__name__)

DEFAULT_AREA_EPS = 1e-12


class ObjParseError(ValueError):
    """Malformed OBJ record."""

    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class MeshStructureError(ValueError):
    """Face indices that do not describe a valid triangle mesh."""


def _unit_rows(a):
    n = np.linalg.norm(a, axis=1, keepdims=True)
    out = np.zeros_like(a)
    np.divide(a, n, out=out, where=n > 0)
    return out


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class TriMesh:
    """Indexed triangle mesh with face and vertex normals.

    Arrays are copied on construction and marked read-only, so a mesh can be
    shared between worker threads without coordination.  If
    ``vertex_normals`` is omitted the angle-weighted average of incident face
    normals is used.
    """

    def __init__(self, vertices, faces, vertex_normals=None):
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            bad = int(np.nonzero((f < 0).any(1) | (f >= len(v)).any(1))[0][0])
            raise MeshStructureError(
                f"face {bad} references vertex outside 0..{len(v) - 1}: {f[bad].tolist()}")
        rep = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if rep.any():
            raise MeshStructureError(f"face {int(np.nonzero(rep)[0][0])} repeats a vertex")
        self.vertices = _frozen(v, np.float64)
        self.faces = _frozen(f, np.int64)
        self.face_normals = _frozen(_unit_rows(self._face_cross()), np.float64)
        if vertex_normals is None:
            vn = compute_vertex_normals(self)
        else:
            vn = _unit_rows(np.asarray(vertex_normals, dtype=np.float64).reshape(-1, 3))
            if len(vn) != len(v):
                raise MeshStructureError(f"{len(vn)} vertex normals for {len(v)} vertices")
        self.vertex_normals = _frozen(vn, np.float64)

    def __repr__(self):
        return f"TriMesh(n_vertices={len(self.vertices)}, n_faces={len(self.faces)})"

    def _face_cross(self):
        v, f = self.vertices, self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def triangles(self):
        """(F, 3, 3) corner positions."""
        return self.vertices[self.faces]

    @cached_property
    def face_areas(self):
        return 0.5 * np.linalg.norm(self._face_cross(), axis=1)

    @cached_property
    def corner_angles(self):
        t = self.triangles()
        ang = np.empty((self.n_faces, 3))
        for k in range(3):
            a = t[:, (k + 1) % 3] - t[:, k]
            b = t[:, (k + 2) % 3] - t[:, k]
            ang[:, k] = np.arctan2(np.linalg.norm(np.cross(a, b), axis=1), np.einsum("ij,ij->i", a, b))
        return ang

    @cached_property
    def pseudo_normals(self):
        """Angle-weighted vertex pseudonormals from geometry, ignoring supplied normals."""
        return _angle_weighted(self)

    @cached_property
    def face_adjacency(self):
        """(F, 3) index of the face across the edge opposite each corner, -1 if none.

        An edge shared by more than two faces maps to the lowest other index.
        """
        f = self.faces
        nf = len(f)
        adj = np.full((nf, 3), -1, np.int64)
        a = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
        b = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
        owner = np.tile(np.arange(nf), 3)
        slot = np.repeat(np.arange(3), nf)
        key = np.minimum(a, b) * len(self.vertices) + np.maximum(a, b)
        order = np.lexsort((owner, key))
        key, owner, slot = key[order], owner[order], slot[order]
        starts = np.nonzero(np.r_[True, key[1:] != key[:-1]])[0]
        ends = np.r_[starts[1:], len(key)]
        for s, e in zip(starts, ends):
            if e - s < 2:
                continue
            for j in range(s, e):
                other = owner[s] if owner[j] != owner[s] else owner[s + 1]
                adj[owner[j], slot[j]] = other
        adj.setflags(write=False)
        return adj

    @cached_property
    def vertex_faces(self):
        """CSR ``(ptr, idx)`` of incident faces per vertex, ascending face index."""
        f = self.faces
        vid = f.ravel()
        fid = np.repeat(np.arange(len(f)), 3)
        order = np.lexsort((fid, vid))
        counts = np.bincount(vid, minlength=len(self.vertices))
        ptr = np.zeros(len(self.vertices) + 1, np.int64)
        np.cumsum(counts, out=ptr[1:])
        idx = fid[order].astype(np.int64)
        return ptr, idx

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def with_vertices(self, vertices, vertex_normals=None):
        """Same topology, new positions (e.g. a new pose)."""
        return TriMesh(vertices, self.faces, vertex_normals)

    def with_normals(self, vertex_normals):
        return TriMesh(self.vertices, self.faces, vertex_normals)


def _angle_weighted(mesh):
    acc = np.zeros((mesh.n_vertices, 3))
    ang = mesh.corner_angles
    fn = mesh.face_normals
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], ang[:, k, None] * fn)
    return _unit_rows(acc)


def compute_vertex_normals(mesh, return_isolated=False):
    """Angle-weighted average of incident face normals, normalised.

    Vertices without incident faces get a zero normal; they are logged and,
    with ``return_isolated``, returned as a second value.
    """
    normals = _angle_weighted(mesh)
    used = np.zeros(mesh.n_vertices, bool)
    used[mesh.faces.ravel()] = True
    isolated = np.nonzero(~used)[0]
    if isolated.size:
        log.warning("%d isolated vertices get zero normals: %s", isolated.size, isolated[:10].tolist())
    if return_isolated:
        return normals, isolated
    return normals


# --------------------------------------------------------------------------- OBJ


def _parse_index(tok, n, lineno):
    try:
        i = int(tok)
    except ValueError:
        raise ObjParseError(lineno, f"bad index {tok!r}") from None
    if i == 0:
        raise ObjParseError(lineno, "OBJ indices are 1-based")
    return i - 1 if i > 0 else n + i


def load_mesh(source):
    """Read the ``v``/``vn``/``f`` subset of Wavefront OBJ.

    ``source`` is a path, a binary/text stream, or bytes.  Polygons are fan
    triangulated in order.  If normals are referenced (``f i//n``) or given one
    per vertex, they are used after normalisation; otherwise vertex normals are
    angle-weighted averages.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ObjParseError(0, f"not UTF-8 text ({exc})") from None
    else:
        text = data

    verts, normals, tris, tri_normals = [], [], [], []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag, args = parts[0], parts[1:]
        if tag in ("v", "vn"):
            if len(args) < 3:
                raise ObjParseError(lineno, f"{tag} needs 3 coordinates")
            try:
                xyz = [float(a) for a in args[:3]]
            except ValueError:
                raise ObjParseError(lineno, f"non-numeric {tag} record") from None
            if not np.all(np.isfinite(xyz)):
                raise ObjParseError(lineno, f"non-finite {tag} record")
            (verts if tag == "v" else normals).append(xyz)
        elif tag == "f":
            if len(args) < 3:
                raise ObjParseError(lineno, "face needs at least 3 vertices")
            vi, ni = [], []
            for a in args:
                fields_ = a.split("/")
                vi.append(_parse_index(fields_[0], len(verts), lineno))
                if len(fields_) >= 3 and fields_[2]:
                    ni.append(_parse_index(fields_[2], len(normals), lineno))
            if ni and len(ni) != len(vi):
                raise ObjParseError(lineno, "normal references on only some corners")
            for k in range(1, len(vi) - 1):
                tris.append((vi[0], vi[k], vi[k + 1]))
                if ni:
                    tri_normals.append((ni[0], ni[k], ni[k + 1]))
        elif tag in ("vt", "vp", "o", "g", "s", "usemtl", "mtllib", "l", "p"):
            continue
        else:
            raise ObjParseError(lineno, f"unknown record {tag!r}")
    if not verts:
        raise ObjParseError(0, "no vertex records")

    v = np.array(verts, dtype=np.float64)
    f = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise MeshStructureError(f"face references vertex outside 1..{len(v)}")
    vn = None
    if normals:
        nrm = np.array(normals, dtype=np.float64)
        if tri_normals:
            tn = np.array(tri_normals, dtype=np.int64)
            if tn.min() < 0 or tn.max() >= len(nrm):
                raise MeshStructureError("face references a missing vn record")
            mesh = TriMesh(v, f)
            vn = mesh.vertex_normals.copy()
            assigned = np.zeros(len(v), bool)
            # first reference wins for each vertex
            for fi in range(len(f)):
                for k in range(3):
                    vid = f[fi, k]
                    if not assigned[vid]:
                        vn[vid] = nrm[tn[fi, k]]
                        assigned[vid] = True
        elif len(nrm) == len(v):
            vn = nrm
        else:
            log.warning("ignoring %d unreferenced vn records for %d vertices", len(nrm), len(v))
    return TriMesh(v, f, vn)


def save_obj(mesh, path, normals=True):
    with open(path, "w") as fh:
        fh.write(dump_obj(mesh, normals))


def dump_obj(mesh, normals=True):
    out = io.StringIO()
    for p in mesh.vertices.tolist():
        out.write(f"v {p[0]!r} {p[1]!r} {p[2]!r}\n")
    if normals:
        for n in mesh.vertex_normals.tolist():
            out.write(f"vn {n[0]!r} {n[1]!r} {n[2]!r}\n")
    for a, b, c in (mesh.faces + 1).tolist():
        if normals:
            out.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
        else:
            out.write(f"f {a} {b} {c}\n")
    return out.getvalue()


# --------------------------------------------------------------------- validity


@dataclass
class ValidationReport:
    watertight: bool
    zero_area_faces: list = field(default_factory=list)
    acute_violations: list = field(default_factory=list)
    edge_defects: list = field(default_factory=list)

    @property
    def ok(self):
        return self.watertight and not self.zero_area_faces and not self.acute_violations

    def to_dict(self):
        return {
            "watertight": self.watertight,
            "zero_area_faces": [int(i) for i in self.zero_area_faces],
            "acute_violations": [[int(f), int(s)] for f, s in self.acute_violations],
            "edge_defects": [[int(a), int(b)] for a, b in self.edge_defects],
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def validate(mesh, area_eps=DEFAULT_AREA_EPS):
    """Check watertightness, face areas and the vertex/face normal acute-angle condition."""
    f = mesh.faces
    zero = np.nonzero(mesh.face_areas < area_eps)[0].tolist()

    dots = np.einsum("fkj,fj->fk", mesh.vertex_normals[f], mesh.face_normals)
    bad = np.argwhere(dots <= 0.0)
    acute = [(int(a), int(b)) for a, b in bad]

    # every undirected edge needs exactly one half-edge in each direction
    a = f[:, [0, 1, 2]].ravel()
    b = f[:, [1, 2, 0]].ravel()
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    forward = a < b
    key = lo * mesh.n_vertices + hi
    uniq, inv = np.unique(key, return_inverse=True)
    n_fwd = np.bincount(inv, weights=forward, minlength=len(uniq))
    n_all = np.bincount(inv, minlength=len(uniq))
    defect = (n_all != 2) | (n_fwd != 1)
    edges = [(int(k // mesh.n_vertices), int(k % mesh.n_vertices)) for k in uniq[defect]]
    return ValidationReport(watertight=not edges, zero_area_faces=zero,
                            acute_violations=acute, edge_defects=edges)


# ------------------------------------------------------------------ side tests


class SideClass(enum.Enum):
    Outside = "outside"
    Inside = "inside"


ON_SURFACE_TOL = 1e-9


def winding_numbers(mesh, points):
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    impl = kernels if _accel.backend() == "numba" else kernels_np
    return impl.winding_numbers(pts, mesh.vertices, mesh.faces)


def _pseudo_normal_at(mesh, face, bary, eps=1e-9):
    zero = bary <= eps
    nz = int(zero.sum())
    if nz == 0:
        return mesh.face_normals[face]
    if nz == 1:
        slot = int(np.argmax(zero))
        other = mesh.face_adjacency[face, slot]
        n = mesh.face_normals[face] + (mesh.face_normals[other] if other >= 0 else 0.0)
        return n / np.linalg.norm(n)
    return mesh.pseudo_normals[mesh.faces[face, int(np.argmax(~zero))]]


def classify_sides(mesh, points, bvh=None, nearest=None):
    """Boolean ``inside`` per point by generalised winding number.

    Points within ``ON_SURFACE_TOL`` of the surface are decided by the sign of
    the offset against the angle-weighted pseudonormal at the nearest point;
    exactly-on-surface points count as outside.
    """
    from . import spatial

    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inside = winding_numbers(mesh, pts) >= 0.5
    if nearest is None:
        if bvh is None:
            bvh = spatial.build_bvh(mesh)
        nearest = spatial.nearest_surface_points(bvh, mesh, pts)
    close = np.nonzero(nearest.dist_sq <= ON_SURFACE_TOL ** 2)[0]
    for i in close:
        off = pts[i] - nearest.position[i]
        pn = _pseudo_normal_at(mesh, nearest.face[i], nearest.bary[i])
        inside[i] = float(off @ pn) < 0.0
    return inside


def classify_side(mesh, x, bvh=None):
    inside = classify_sides(mesh, np.asarray(x, dtype=np.float64)[None], bvh)[0]
    return SideClass.Inside if inside else SideClass.Outside
