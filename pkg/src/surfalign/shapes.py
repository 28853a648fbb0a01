"""Procedural test meshes and surface sampling."""
import numpy as np

from .mesh import TriMesh


def cube(lo=0.0, hi=1.0):
    """Axis-aligned cube with 8 vertices and 12 outward-wound triangles."""
    v = np.array([[x, y, z] for z in (lo, hi) for y in (lo, hi) for x in (lo, hi)], dtype=float)
    # vertex index = x + 2y + 4z
    f = np.array([
        [0, 2, 3], [0, 3, 1],  # z = lo
        [4, 5, 7], [4, 7, 6],  # z = hi
        [0, 1, 5], [0, 5, 4],  # y = lo
        [2, 6, 7], [2, 7, 3],  # y = hi
        [0, 4, 6], [0, 6, 2],  # x = lo
        [1, 3, 7], [1, 7, 5],  # x = hi
    ])
    return TriMesh(v, f)


def subdivided_cube(n=4, lo=0.0, hi=1.0):
    """Cube whose six faces are each an ``n`` x ``n`` grid of quads split into triangles."""
    t = np.linspace(lo, hi, n + 1)
    index = {}
    verts, faces = [], []

    def vid(p):
        key = tuple(np.round(np.asarray(p) * 1e9).astype(np.int64))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    for axis in range(3):
        for side in (lo, hi):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            for i in range(n):
                for j in range(n):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = [0.0, 0.0, 0.0]
                        p[axis] = side
                        p[u_ax] = t[i + di]
                        p[v_ax] = t[j + dj]
                        quad.append(vid(p))
                    a, b, c, d = quad
                    faces += [[a, b, c], [a, c, d]]
    verts = np.array(verts, dtype=float)
    faces = np.array(faces)
    # the box is convex, so outward winding is decided against the centre
    tri = verts[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", n, tri.mean(axis=1) - 0.5 * (lo + hi)) < 0
    faces[flip] = faces[flip][:, ::-1]
    return TriMesh(verts, faces)


def icosphere(level=1, radius=1.0, radial_normals=True):
    """Subdivided icosahedron; ``level`` 1 gives 80 faces, each level x4.

    With ``radial_normals`` the vertex normals are the normalised positions
    (the analytic sphere normals) instead of angle-weighted averages.
    """
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = nf
    verts = np.array(verts) * radius
    normals = verts / np.linalg.norm(verts, axis=1, keepdims=True) if radial_normals else None
    return TriMesh(verts, np.array(f), normals)


def uv_sphere(n_lat=16, n_lon=32, radius=1.0, radial_normals=True):
    """Latitude/longitude sphere; an even ``n_lat`` puts an edge loop on the equator."""
    verts = [[0.0, 0.0, radius]]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append([radius * np.sin(th) * np.cos(ph), radius * np.sin(th) * np.sin(ph),
                          radius * np.cos(th)])
    verts.append([0.0, 0.0, -radius])
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    f = []
    for j in range(n_lon):
        f.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            f += [[a, c, d], [a, d, b]]
    for j in range(n_lon):
        f.append([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    verts = np.array(verts)
    normals = verts / np.linalg.norm(verts, axis=1, keepdims=True) if radial_normals else None
    return TriMesh(verts, np.array(f), normals)


def torus(major=1.0, minor=0.4, n_major=32, n_minor=16, analytic_normals=False):
    """Ring torus around the z axis, grid-triangulated."""
    u = 2 * np.pi * np.arange(n_major) / n_major
    w = 2 * np.pi * np.arange(n_minor) / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    r = major + minor * np.cos(ww)
    verts = np.stack([r * np.cos(uu), r * np.sin(uu), minor * np.sin(ww)], axis=-1).reshape(-1, 3)
    nrm = np.stack([np.cos(ww) * np.cos(uu), np.cos(ww) * np.sin(uu), np.sin(ww)], axis=-1).reshape(-1, 3)

    def idx(i, j):
        return (i % n_major) * n_minor + (j % n_minor)

    f = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b = idx(i, j), idx(i + 1, j)
            c, d = idx(i + 1, j + 1), idx(i, j + 1)
            f += [[a, b, c], [a, c, d]]
    return TriMesh(verts, np.array(f), nrm if analytic_normals else None)


def stretched(mesh, scale):
    """Same topology with vertices scaled per axis; normals recomputed from geometry."""
    return mesh.with_vertices(mesh.vertices * np.asarray(scale, dtype=float))


def sample_surface(mesh, n, rng, margin=0.0):
    """Area-weighted uniform surface samples as ``(faces, barys)``.

    ``margin`` rejects barycentrics with any coordinate below it.
    """
    p = mesh.face_areas / mesh.face_areas.sum()
    faces = rng.choice(mesh.n_faces, size=n, p=p)
    barys = np.empty((n, 3))
    pending = np.arange(n)
    while pending.size:
        r1 = np.sqrt(rng.random(pending.size))
        r2 = rng.random(pending.size)
        b = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
        barys[pending] = b
        pending = pending[b.min(axis=1) < margin] if margin > 0 else pending[:0]
    return faces.astype(np.int64), barys
