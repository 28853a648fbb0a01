"""Compiled inner loops.

Every function here is written against plain float64/int64 arrays so it can be
handed to ``numba.njit``.  The vectorised numpy counterparts live in
:mod:`surfalign.kernels_np`; both must produce the same answers, and
``tests/test_kernels.py`` holds them to that.
"""
import math

import numpy as np

from ._accel import njit

# statuses returned by the projection kernel
OK = 0
SLACK = 1
FALLBACK = 2
CULLED = 3


@njit
def _dot(a0, a1, a2, b0, b1, b2):
    return a0 * b0 + a1 * b1 + a2 * b2


@njit
def closest_point_triangle(p, a, b, c):
    """Closest point on triangle ``abc`` to ``p``.

    Returns ``(qx, qy, qz, wa, wb, wc, dist_sq)``.  Voronoi-region walk; the
    barycentric weights are exactly zero on the clamped coordinates.
    """
    abx = b[0] - a[0]
    aby = b[1] - a[1]
    abz = b[2] - a[2]
    acx = c[0] - a[0]
    acy = c[1] - a[1]
    acz = c[2] - a[2]
    apx = p[0] - a[0]
    apy = p[1] - a[1]
    apz = p[2] - a[2]
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    wa, wb, wc = 1.0, 0.0, 0.0
    if d1 <= 0.0 and d2 <= 0.0:
        wa, wb, wc = 1.0, 0.0, 0.0
    else:
        bpx = p[0] - b[0]
        bpy = p[1] - b[1]
        bpz = p[2] - b[2]
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        vc = d1 * d4 - d3 * d2
        if d3 >= 0.0 and d4 <= d3:
            wa, wb, wc = 0.0, 1.0, 0.0
        elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
            v = d1 / (d1 - d3)
            wa, wb, wc = 1.0 - v, v, 0.0
        else:
            cpx = p[0] - c[0]
            cpy = p[1] - c[1]
            cpz = p[2] - c[2]
            d5 = abx * cpx + aby * cpy + abz * cpz
            d6 = acx * cpx + acy * cpy + acz * cpz
            vb = d5 * d2 - d1 * d6
            va = d3 * d6 - d5 * d4
            if d6 >= 0.0 and d5 <= d6:
                wa, wb, wc = 0.0, 0.0, 1.0
            elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                w = d2 / (d2 - d6)
                wa, wb, wc = 1.0 - w, 0.0, w
            elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                wa, wb, wc = 0.0, 1.0 - w, w
            else:
                denom = 1.0 / (va + vb + vc)
                v = vb * denom
                w = vc * denom
                wa, wb, wc = 1.0 - v - w, v, w
    qx = wa * a[0] + wb * b[0] + wc * c[0]
    qy = wa * a[1] + wb * b[1] + wc * c[1]
    qz = wa * a[2] + wb * b[2] + wc * c[2]
    dx = p[0] - qx
    dy = p[1] - qy
    dz = p[2] - qz
    return qx, qy, qz, wa, wb, wc, dx * dx + dy * dy + dz * dz


@njit
def brute_nearest(points, verts, faces):
    n = points.shape[0]
    face = np.empty(n, np.int64)
    bary = np.empty((n, 3))
    pos = np.empty((n, 3))
    dsq = np.empty(n)
    for i in range(n):
        p = points[i]
        best = np.inf
        bf = -1
        for f in range(faces.shape[0]):
            r = closest_point_triangle(p, verts[faces[f, 0]], verts[faces[f, 1]], verts[faces[f, 2]])
            if r[6] < best:
                best = r[6]
                bf = f
                pos[i, 0] = r[0]
                pos[i, 1] = r[1]
                pos[i, 2] = r[2]
                bary[i, 0] = r[3]
                bary[i, 1] = r[4]
                bary[i, 2] = r[5]
        face[i] = bf
        dsq[i] = best
    return face, bary, pos, dsq


@njit
def _box_dist_sq(p, lo, hi):
    d = 0.0
    for k in range(3):
        if p[k] < lo[k]:
            t = lo[k] - p[k]
            d += t * t
        elif p[k] > hi[k]:
            t = p[k] - hi[k]
            d += t * t
    return d


@njit
def bvh_nearest(points, verts, faces, lo, hi, left, right, start, count, order):
    n = points.shape[0]
    face = np.empty(n, np.int64)
    bary = np.empty((n, 3))
    pos = np.empty((n, 3))
    dsq = np.empty(n)
    visits = np.zeros(n, np.int64)
    stack = np.empty(256, np.int64)
    stack_lb = np.empty(256)
    for i in range(n):
        p = points[i]
        best = np.inf
        bf = -1
        sp = 0
        stack[0] = 0
        stack_lb[0] = _box_dist_sq(p, lo[0], hi[0])
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if stack_lb[sp] > best * (1.0 + 1e-12):
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    f = order[k]
                    visits[i] += 1
                    r = closest_point_triangle(p, verts[faces[f, 0]], verts[faces[f, 1]], verts[faces[f, 2]])
                    if r[6] < best or (r[6] == best and f < bf):
                        best = r[6]
                        bf = f
                        pos[i, 0] = r[0]
                        pos[i, 1] = r[1]
                        pos[i, 2] = r[2]
                        bary[i, 0] = r[3]
                        bary[i, 1] = r[4]
                        bary[i, 2] = r[5]
            else:
                l = left[node]
                r_ = right[node]
                dl = _box_dist_sq(p, lo[l], hi[l])
                dr = _box_dist_sq(p, lo[r_], hi[r_])
                # push the farther child first so the nearer one is popped next
                if dl <= dr:
                    stack[sp] = r_
                    stack_lb[sp] = dr
                    stack[sp + 1] = l
                    stack_lb[sp + 1] = dl
                else:
                    stack[sp] = l
                    stack_lb[sp] = dl
                    stack[sp + 1] = r_
                    stack_lb[sp + 1] = dr
                sp += 2
        face[i] = bf
        dsq[i] = best
    return face, bary, pos, dsq, visits


@njit
def winding_numbers(points, verts, faces):
    n = points.shape[0]
    out = np.empty(n)
    for i in range(n):
        px = points[i, 0]
        py = points[i, 1]
        pz = points[i, 2]
        total = 0.0
        for f in range(faces.shape[0]):
            a = verts[faces[f, 0]]
            b = verts[faces[f, 1]]
            c = verts[faces[f, 2]]
            ax = a[0] - px
            ay = a[1] - py
            az = a[2] - pz
            bx = b[0] - px
            by = b[1] - py
            bz = b[2] - pz
            cx = c[0] - px
            cy = c[1] - py
            cz = c[2] - pz
            la = math.sqrt(ax * ax + ay * ay + az * az)
            lb = math.sqrt(bx * bx + by * by + bz * bz)
            lc = math.sqrt(cx * cx + cy * cy + cz * cz)
            det = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
            den = la * lb * lc + (ax * bx + ay * by + az * bz) * lc \
                + (ax * cx + ay * cy + az * cz) * lb + (bx * cx + by * cy + bz * cz) * la
            total += 2.0 * math.atan2(det, den)
        out[i] = total / (4.0 * math.pi)
    return out


@njit
def parallel_bary(x, v0, v1, v2, n0, n1, n2, fn, inv0, inv1, inv2, orient):
    """Barycentrics of ``x`` in the parallel triangle through ``x``.

    ``orient`` is +1 when ``v0, v1, v2`` wind counterclockwise about ``fn``
    and -1 for the inverted pass.  Returns ``(code, a0, a1, a2, l)`` where
    code is 0 on success, 1 when ``x`` is below the base plane, 2 when the
    parallel triangle is degenerate or folded over.
    """
    l = (x[0] - v0[0]) * fn[0] + (x[1] - v0[1]) * fn[1] + (x[2] - v0[2]) * fn[2]
    if l < 0.0:
        return 1, 0.0, 0.0, 0.0, l
    s0 = l * inv0
    s1 = l * inv1
    s2 = l * inv2
    p0x = v0[0] + s0 * n0[0] - x[0]
    p0y = v0[1] + s0 * n0[1] - x[1]
    p0z = v0[2] + s0 * n0[2] - x[2]
    p1x = v1[0] + s1 * n1[0] - x[0]
    p1y = v1[1] + s1 * n1[1] - x[1]
    p1z = v1[2] + s1 * n1[2] - x[2]
    p2x = v2[0] + s2 * n2[0] - x[0]
    p2y = v2[1] + s2 * n2[1] - x[1]
    p2z = v2[2] + s2 * n2[2] - x[2]
    # signed double areas of the sub-triangles, measured along fn
    w0 = _dot(p1y * p2z - p1z * p2y, p1z * p2x - p1x * p2z, p1x * p2y - p1y * p2x, fn[0], fn[1], fn[2])
    w1 = _dot(p2y * p0z - p2z * p0y, p2z * p0x - p2x * p0z, p2x * p0y - p2y * p0x, fn[0], fn[1], fn[2])
    w2 = _dot(p0y * p1z - p0z * p1y, p0z * p1x - p0x * p1z, p0x * p1y - p0y * p1x, fn[0], fn[1], fn[2])
    w0 *= orient
    w1 *= orient
    w2 *= orient
    total = w0 + w1 + w2
    if 0.5 * total < 1e-12:
        return 2, 0.0, 0.0, 0.0, l
    return 0, w0 / total, w1 / total, w2 / total, l


@njit
def _try_faces(x, cand, ncand, verts, faces, anorm, fnorm, inv, side, eps):
    best = np.inf
    bf = -1
    b0 = 0.0
    b1 = 0.0
    b2 = 0.0
    degenerate = False
    for j in range(ncand):
        f = cand[j]
        v0 = verts[faces[f, 0]]
        v1 = verts[faces[f, 1]]
        v2 = verts[faces[f, 2]]
        code, a0, a1, a2, l = parallel_bary(
            x, v0, v1, v2, anorm[side, f, 0], anorm[side, f, 1], anorm[side, f, 2],
            fnorm[side, f], inv[side, f, 0], inv[side, f, 1], inv[side, f, 2], 1.0 - 2.0 * side)
        if code == 2:
            degenerate = True
            continue
        if code != 0 or a0 < -eps or a1 < -eps or a2 < -eps:
            continue
        dx = x[0] - (a0 * v0[0] + a1 * v1[0] + a2 * v2[0])
        dy = x[1] - (a0 * v0[1] + a1 * v1[1] + a2 * v2[1])
        dz = x[2] - (a0 * v0[2] + a1 * v1[2] + a2 * v2[2])
        d = dx * dx + dy * dy + dz * dz
        if d < best or (d == best and f < bf):
            best = d
            bf = f
            b0 = a0
            b1 = a1
            b2 = a2
    return bf, b0, b1, b2, degenerate


@njit
def _sort_small(a, n):
    for i in range(1, n):
        key = a[i]
        j = i - 1
        while j >= 0 and a[j] > key:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = key


@njit
def dispersed_batch(points, verts, faces, face_adj, vf_ptr, vf_idx, anorm, fnorm, inv,
                    near_face, near_bary, near_dsq, inside, cull_dsq, bary_eps, slack_eps):
    """Dispersed projection for a batch of points whose nearest points are known.

    ``anorm[side]``/``fnorm[side]``/``inv[side]`` hold the aligned vertex
    normals, face normals and reciprocal normal/face-normal dot products for
    the outward (side 0) and inverted (side 1) passes.  Points with
    ``near_dsq > cull_dsq`` are skipped and reported as ``CULLED``.
    """
    n = points.shape[0]
    out_face = np.empty(n, np.int64)
    out_bary = np.empty((n, 3))
    out_pos = np.empty((n, 3))
    out_h = np.empty(n)
    out_dir = np.empty((n, 3))
    status = np.zeros(n, np.int64)
    degenerate = np.zeros(n, np.bool_)
    maxring = 1
    for v in range(vf_ptr.shape[0] - 1):
        maxring = max(maxring, vf_ptr[v + 1] - vf_ptr[v])
    cand = np.empty(max(maxring, 2), np.int64)
    for i in range(n):
        x = points[i]
        f0 = near_face[i]
        if near_dsq[i] > cull_dsq:
            status[i] = CULLED
            out_face[i] = f0
            for k in range(3):
                out_bary[i, k] = near_bary[i, k]
                out_pos[i, k] = 0.0
                out_dir[i, k] = 0.0
            out_h[i] = np.inf if not inside[i] else -np.inf
            continue
        side = 1 if inside[i] else 0
        sgn = -1.0 if inside[i] else 1.0
        xn = math.sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
        if math.sqrt(near_dsq[i]) <= 1e-12 * (1.0 + xn):
            # on the surface: the nearest point is the projection, h = 0
            bf = f0
            b0 = near_bary[i, 0]
            b1 = near_bary[i, 1]
            b2 = near_bary[i, 2]
            st = OK
        else:
            # collect the faces containing the nearest point, from topology
            nzero = 0
            zslot = -1
            oslot = -1
            for k in range(3):
                if near_bary[i, k] <= bary_eps:
                    nzero += 1
                    zslot = k
                else:
                    oslot = k
            if nzero == 0:
                cand[0] = f0
                ncand = 1
            elif nzero == 1:
                cand[0] = f0
                ncand = 1
                g = face_adj[f0, zslot]
                if g >= 0:
                    cand[1] = g
                    ncand = 2
            else:
                vtx = faces[f0, oslot]
                ncand = vf_ptr[vtx + 1] - vf_ptr[vtx]
                for j in range(ncand):
                    cand[j] = vf_idx[vf_ptr[vtx] + j]
            _sort_small(cand, ncand)
            bf, b0, b1, b2, deg = _try_faces(x, cand, ncand, verts, faces, anorm, fnorm, inv, side, bary_eps)
            st = OK
            if bf < 0:
                bf, b0, b1, b2, deg2 = _try_faces(x, cand, ncand, verts, faces, anorm, fnorm, inv, side, slack_eps)
                deg = deg or deg2
                st = SLACK
            degenerate[i] = deg
            if bf < 0:
                st = FALLBACK
                bf = f0
                b0 = near_bary[i, 0]
                b1 = near_bary[i, 1]
                b2 = near_bary[i, 2]
        # clamp tiny negative weights onto the closed triangle
        b0 = max(b0, 0.0)
        b1 = max(b1, 0.0)
        b2 = max(b2, 0.0)
        tot = b0 + b1 + b2
        b0 /= tot
        b1 /= tot
        b2 /= tot
        va = verts[faces[bf, 0]]
        vb = verts[faces[bf, 1]]
        vc = verts[faces[bf, 2]]
        sx = b0 * va[0] + b1 * vb[0] + b2 * vc[0]
        sy = b0 * va[1] + b1 * vb[1] + b2 * vc[1]
        sz = b0 * va[2] + b1 * vb[2] + b2 * vc[2]
        dx = x[0] - sx
        dy = x[1] - sy
        dz = x[2] - sz
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        if dist > 0.0:
            out_dir[i, 0] = sgn * dx / dist
            out_dir[i, 1] = sgn * dy / dist
            out_dir[i, 2] = sgn * dz / dist
        else:
            mx = 0.0
            my = 0.0
            mz = 0.0
            bs = (b0, b1, b2)
            for k in range(3):
                w = bs[k] * inv[side, bf, k]
                mx += w * anorm[side, bf, k, 0]
                my += w * anorm[side, bf, k, 1]
                mz += w * anorm[side, bf, k, 2]
            mn = math.sqrt(mx * mx + my * my + mz * mz)
            out_dir[i, 0] = sgn * mx / mn
            out_dir[i, 1] = sgn * my / mn
            out_dir[i, 2] = sgn * mz / mn
        out_face[i] = bf
        out_bary[i, 0] = b0
        out_bary[i, 1] = b1
        out_bary[i, 2] = b2
        out_pos[i, 0] = sx
        out_pos[i, 1] = sy
        out_pos[i, 2] = sz
        out_h[i] = sgn * dist
        status[i] = st
    return out_face, out_bary, out_pos, out_h, out_dir, status, degenerate


@njit
def composite(sigma, rgb, delta, background):
    """Emission-absorption quadrature along each row of ``sigma``.

    Returns ``(color, opacity, transmittance)`` with opacity the summed weights
    and transmittance the light left after the last sample.
    """
    nr, ns = sigma.shape
    color = np.empty((nr, 3))
    opacity = np.empty(nr)
    trans = np.empty(nr)
    for r in range(nr):
        t = 1.0
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        wsum = 0.0
        for s in range(ns):
            tau = sigma[r, s] * delta[r, s]
            if tau == 0.0:
                continue
            w = -t * math.expm1(-tau)
            acc0 += w * rgb[r, s, 0]
            acc1 += w * rgb[r, s, 1]
            acc2 += w * rgb[r, s, 2]
            wsum += w
            t = t * math.exp(-tau)
        color[r, 0] = acc0 + t * background[0]
        color[r, 1] = acc1 + t * background[1]
        color[r, 2] = acc2 + t * background[2]
        opacity[r] = wsum
        trans[r] = t
    return color, opacity, trans
