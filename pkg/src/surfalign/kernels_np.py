"""Vectorised numpy versions of the kernels in :mod:`surfalign.kernels`.

Same signatures and return conventions.  These are the path taken when numba
is disabled; they trade memory (point x face blocks) for interpreter overhead.
"""
import numpy as np

from .kernels import CULLED, FALLBACK, OK, SLACK

_BLOCK = 1 << 20  # point-face pairs per block


def closest_points_triangles(p, a, b, c):
    """Row-wise closest point of ``p[i]`` on triangle ``(a[i], b[i], c[i])``."""
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4
    n = p.shape[0]
    w = np.zeros((n, 3))
    pending = np.ones(n, bool)

    def take(mask):
        nonlocal pending
        m = pending & mask
        pending = pending & ~m
        return m

    m = take((d1 <= 0) & (d2 <= 0))
    w[m] = (1.0, 0.0, 0.0)
    m = take((d3 >= 0) & (d4 <= d3))
    w[m] = (0.0, 1.0, 0.0)
    m = take((vc <= 0) & (d1 >= 0) & (d3 <= 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        v = d1[m] / (d1[m] - d3[m])
    w[m, 0] = 1.0 - v
    w[m, 1] = v
    m = take((d6 >= 0) & (d5 <= d6))
    w[m] = (0.0, 0.0, 1.0)
    m = take((vb <= 0) & (d2 >= 0) & (d6 <= 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = d2[m] / (d2[m] - d6[m])
    w[m, 0] = 1.0 - t
    w[m, 2] = t
    m = take((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (d4[m] - d3[m]) / ((d4[m] - d3[m]) + (d5[m] - d6[m]))
    w[m, 1] = 1.0 - t
    w[m, 2] = t
    m = pending
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va[m] + vb[m] + vc[m])
    v = vb[m] * denom
    t = vc[m] * denom
    w[m, 0] = 1.0 - v - t
    w[m, 1] = v
    w[m, 2] = t
    q = w[:, 0:1] * a + w[:, 1:2] * b + w[:, 2:3] * c
    dq = p - q
    return q, w, np.einsum("ij,ij->i", dq, dq)


def brute_nearest(points, verts, faces):
    n = points.shape[0]
    nf = faces.shape[0]
    face = np.empty(n, np.int64)
    bary = np.empty((n, 3))
    pos = np.empty((n, 3))
    dsq = np.empty(n)
    step = max(1, _BLOCK // max(nf, 1))
    A, B, C = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    for s in range(0, n, step):
        P = points[s:s + step]
        m = P.shape[0]
        pp = np.repeat(P, nf, axis=0)
        q, w, d = closest_points_triangles(pp, np.tile(A, (m, 1)), np.tile(B, (m, 1)), np.tile(C, (m, 1)))
        d = d.reshape(m, nf)
        j = np.argmin(d, axis=1)  # first minimum = lowest face index
        rows = np.arange(m) * nf + j
        face[s:s + m] = j
        dsq[s:s + m] = d[np.arange(m), j]
        pos[s:s + m] = q[rows]
        bary[s:s + m] = w[rows]
    return face, bary, pos, dsq


def _box_dist_sq(p, lo, hi):
    d = np.maximum(lo - p, 0.0) + np.maximum(p - hi, 0.0)
    return np.einsum("ij,ij->i", d, d)


def bvh_nearest(points, verts, faces, lo, hi, left, right, start, count, order):
    """Breadth-first batched traversal with a greedy-descent initial bound."""
    n = points.shape[0]
    best = np.full(n, np.inf)
    bface = np.full(n, -1, np.int64)
    bbary = np.zeros((n, 3))
    bpos = np.zeros((n, 3))
    visits = np.zeros(n, np.int64)

    def test_leaves(q, nodes):
        if q.size == 0:
            return
        cnt = count[nodes]
        qq = np.repeat(q, cnt)
        offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        ff = order[np.repeat(start[nodes], cnt) + offs]
        np.add.at(visits, qq, 1)
        tri = faces[ff]
        pt, w, d = closest_points_triangles(points[qq], verts[tri[:, 0]], verts[tri[:, 1]], verts[tri[:, 2]])
        # per query: lexicographic minimum over (distance, face)
        o = np.lexsort((ff, d, qq))
        qs = qq[o]
        first = np.ones(len(o), bool)
        first[1:] = qs[1:] != qs[:-1]
        o = o[first]
        qq, d, ff = qq[o], d[o], ff[o]
        better = (d < best[qq]) | ((d == best[qq]) & (ff < bface[qq]))
        o, qq = o[better], qq[better]
        best[qq] = d[better]
        bface[qq] = ff[better]
        bpos[qq] = pt[o]
        bbary[qq] = w[o]

    # greedy descent to a leaf for an initial upper bound
    node = np.zeros(n, np.int64)
    inner = left[node] >= 0
    while inner.any():
        idx = np.nonzero(inner)[0]
        l, r = left[node[idx]], right[node[idx]]
        dl = _box_dist_sq(points[idx], lo[l], hi[l])
        dr = _box_dist_sq(points[idx], lo[r], hi[r])
        node[idx] = np.where(dl <= dr, l, r)
        inner = left[node] >= 0
    test_leaves(np.arange(n), node)
    first_leaf = node

    q = np.arange(n)
    nodes = np.zeros(n, np.int64)
    while q.size:
        lb = _box_dist_sq(points[q], lo[nodes], hi[nodes])
        keep = lb <= best[q] * (1.0 + 1e-12)
        q, nodes = q[keep], nodes[keep]
        leaf = left[nodes] < 0
        lq, ln = q[leaf], nodes[leaf]
        fresh = ln != first_leaf[lq]
        if fresh.any():
            test_leaves(lq[fresh], ln[fresh])
        q, nodes = q[~leaf], nodes[~leaf]
        q = np.concatenate([q, q])
        nodes = np.concatenate([left[nodes], right[nodes]])
    return bface, bbary, bpos, best, visits


def winding_numbers(points, verts, faces):
    n = points.shape[0]
    nf = faces.shape[0]
    out = np.empty(n)
    step = max(1, _BLOCK // max(nf, 1))
    A, B, C = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    for s in range(0, n, step):
        P = points[s:s + step, None, :]
        a = A[None] - P
        b = B[None] - P
        c = C[None] - P
        la = np.linalg.norm(a, axis=2)
        lb = np.linalg.norm(b, axis=2)
        lc = np.linalg.norm(c, axis=2)
        det = np.einsum("ijk,ijk->ij", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("ijk,ijk->ij", a, b) * lc
               + np.einsum("ijk,ijk->ij", a, c) * lb + np.einsum("ijk,ijk->ij", b, c) * la)
        out[s:s + step] = (2.0 * np.arctan2(det, den)).sum(axis=1) / (4.0 * np.pi)
    return out


def parallel_bary(x, v0, v1, v2, n0, n1, n2, fn, inv, orient):
    """Row-wise parallel-triangle barycentrics; see the compiled version.

    ``inv`` is (m, 3), ``orient`` (m,).  Returns ``(code, bary, l)``.
    """
    l = np.einsum("ij,ij->i", x - v0, fn)
    p0 = v0 + (l * inv[:, 0])[:, None] * n0 - x
    p1 = v1 + (l * inv[:, 1])[:, None] * n1 - x
    p2 = v2 + (l * inv[:, 2])[:, None] * n2 - x
    w0 = np.einsum("ij,ij->i", np.cross(p1, p2), fn)
    w1 = np.einsum("ij,ij->i", np.cross(p2, p0), fn)
    w2 = np.einsum("ij,ij->i", np.cross(p0, p1), fn)
    w0, w1, w2 = w0 * orient, w1 * orient, w2 * orient
    total = w0 + w1 + w2
    code = np.zeros(x.shape[0], np.int64)
    code[0.5 * total < 1e-12] = 2
    code[l < 0.0] = 1
    with np.errstate(divide="ignore", invalid="ignore"):
        bary = np.stack([w0, w1, w2], axis=1) / total[:, None]
    bary[code != 0] = 0.0
    return code, bary, l


def _candidates(faces, face_adj, vf_ptr, vf_idx, near_face, near_bary, bary_eps):
    """(point index, face) pairs for the faces containing each nearest point."""
    zero = near_bary <= bary_eps
    nz = zero.sum(axis=1)
    n = near_face.shape[0]
    pts = [np.nonzero(nz == 0)[0]]
    fcs = [near_face[pts[0]]]
    e = np.nonzero(nz == 1)[0]
    if e.size:
        zslot = np.argmax(zero[e], axis=1)
        g = face_adj[near_face[e], zslot]
        pts += [e, e[g >= 0]]
        fcs += [near_face[e], g[g >= 0]]
    v = np.nonzero(nz >= 2)[0]
    if v.size:
        oslot = np.argmax(~zero[v], axis=1)
        vtx = faces[near_face[v], oslot]
        cnt = vf_ptr[vtx + 1] - vf_ptr[vtx]
        offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        pts.append(np.repeat(v, cnt))
        fcs.append(vf_idx[np.repeat(vf_ptr[vtx], cnt) + offs])
    return np.concatenate(pts).astype(np.int64), np.concatenate(fcs).astype(np.int64), n


def _select(points, verts, faces, anorm, fnorm, inv, side, qi, fi, eps):
    """Best surviving parallel-triangle candidate per point; -1 when none."""
    n = points.shape[0]
    bf = np.full(n, -1, np.int64)
    bb = np.zeros((n, 3))
    deg = np.zeros(n, bool)
    if qi.size == 0:
        return bf, bb, deg
    s = side[qi]
    tri = faces[fi]
    v0, v1, v2 = verts[tri[:, 0]], verts[tri[:, 1]], verts[tri[:, 2]]
    an = anorm[s, fi]
    code, bary, _ = parallel_bary(points[qi], v0, v1, v2, an[:, 0], an[:, 1], an[:, 2],
                                  fnorm[s, fi], inv[s, fi], 1.0 - 2.0 * s)
    np.logical_or.at(deg, qi, code == 2)
    ok = (code == 0) & (bary >= -eps).all(axis=1)
    qi, fi, bary = qi[ok], fi[ok], bary[ok]
    v0, v1, v2 = v0[ok], v1[ok], v2[ok]
    sx = bary[:, 0:1] * v0 + bary[:, 1:2] * v1 + bary[:, 2:3] * v2
    d = np.sum((points[qi] - sx) ** 2, axis=1)
    o = np.lexsort((fi, d, qi))
    qs = qi[o]
    first = np.ones(len(o), bool)
    first[1:] = qs[1:] != qs[:-1]
    o = o[first]
    bf[qi[o]] = fi[o]
    bb[qi[o]] = bary[o]
    return bf, bb, deg


def dispersed_batch(points, verts, faces, face_adj, vf_ptr, vf_idx, anorm, fnorm, inv,
                    near_face, near_bary, near_dsq, inside, cull_dsq, bary_eps, slack_eps):
    n = points.shape[0]
    side = inside.astype(np.int64)
    sgn = np.where(inside, -1.0, 1.0)
    status = np.full(n, OK, np.int64)
    culled = near_dsq > cull_dsq
    status[culled] = CULLED
    xn = np.linalg.norm(points, axis=1)
    on_surface = ~culled & (np.sqrt(near_dsq) <= 1e-12 * (1.0 + xn))
    work = np.nonzero(~culled & ~on_surface)[0]

    out_face = near_face.astype(np.int64).copy()
    out_bary = near_bary.copy()
    degenerate = np.zeros(n, bool)

    qi, fi, _ = _candidates(faces, face_adj, vf_ptr, vf_idx, near_face[work], near_bary[work], bary_eps)
    qi = work[qi]
    # candidate order per point ascending by face, for identical tie-breaks
    bf, bb, deg = _select(points, verts, faces, anorm, fnorm, inv, side, qi, fi, bary_eps)
    degenerate |= deg
    miss = np.zeros(n, bool)
    miss[work] = bf[work] < 0
    if miss.any():
        keep = miss[qi]
        bf2, bb2, deg2 = _select(points, verts, faces, anorm, fnorm, inv, side, qi[keep], fi[keep], slack_eps)
        degenerate |= deg2
        got = miss & (bf2 >= 0)
        bf[got] = bf2[got]
        bb[got] = bb2[got]
        status[got] = SLACK
        status[miss & (bf2 < 0)] = FALLBACK
    hit = np.zeros(n, bool)
    hit[work] = bf[work] >= 0
    out_face[hit] = bf[hit]
    out_bary[hit] = bb[hit]

    live = ~culled
    b = np.maximum(out_bary, 0.0)
    b /= b.sum(axis=1, keepdims=True)
    out_bary[live] = b[live]
    tri = faces[out_face]
    pos = (out_bary[:, 0:1] * verts[tri[:, 0]] + out_bary[:, 1:2] * verts[tri[:, 1]]
           + out_bary[:, 2:3] * verts[tri[:, 2]])
    diff = points - pos
    dist = np.linalg.norm(diff, axis=1)
    ndir = np.zeros((n, 3))
    pos_d = live & (dist > 0)
    ndir[pos_d] = sgn[pos_d, None] * diff[pos_d] / dist[pos_d, None]
    flat = np.nonzero(live & (dist == 0))[0]
    if flat.size:
        s, f = side[flat], out_face[flat]
        m = np.einsum("ik,ikj->ij", out_bary[flat] * inv[s, f], anorm[s, f])
        ndir[flat] = sgn[flat, None] * m / np.linalg.norm(m, axis=1, keepdims=True)
    h = sgn * dist
    h[culled] = np.where(inside[culled], -np.inf, np.inf)
    pos[culled] = 0.0
    ndir[culled] = 0.0
    return out_face, out_bary, pos, h, ndir, status, degenerate


def composite(sigma, rgb, delta, background):
    tau = sigma * delta
    alpha = -np.expm1(-tau)
    acc = np.cumsum(tau, axis=1)
    before = np.zeros_like(tau)
    before[:, 1:] = acc[:, :-1]
    w = np.exp(-before) * alpha
    t_final = np.exp(-acc[:, -1]) if tau.shape[1] else np.ones(tau.shape[0])
    color = np.einsum("rs,rsk->rk", w, rgb) + t_final[:, None] * np.asarray(background)[None, :]
    return color, w.sum(axis=1), t_final
