"""Compiled kernels for octree polygon clipping and edge rasterization.

The polygon path refines pieces one octree level at a time. For each piece
and axis, the child mid-plane either leaves the piece on one side (routing
is decided by its extent alone, with geometry exactly in the plane going
to the higher cell per the half-open ownership rule) or splits it by
convex polygon / half-space clipping. Every surviving piece therefore
lands in exactly one child, which keeps the per-level area partition exact
by construction. Edge segments are clipped parametrically against the
leaf grid planes.
"""

import math

import numpy as np
from numba import njit

# A clipped piece is the intersection of a triangle with an axis-aligned box
# and therefore has at most 9 true vertices; 16 leaves headroom for the
# transient vertices of the in-flight plane clips.
MAX_VERTS = 16

# Pieces degenerating below 3 distinct vertices or this area are discarded.
MIN_PIECE_AREA = 1e-18

_LO = 0
_HI = 1
_SPLIT = 2


@njit(cache=True, inline="always")
def _emit(dst, m, x, y, z):
    """Append a vertex unless it duplicates the previous one."""
    if m > 0 and dst[m - 1, 0] == x and dst[m - 1, 1] == y and dst[m - 1, 2] == z:
        return m
    dst[m, 0] = x
    dst[m, 1] = y
    dst[m, 2] = z
    return m + 1


@njit(cache=True)
def _clip_axis_both(src, ns, axis, bound, dst_lo, dst_hi):
    """Single-pass Sutherland-Hodgman clip into both closed half-spaces.

    Intersection points land exactly on ``bound``. Returns the two vertex
    counts; exact consecutive duplicates are collapsed.
    """
    nlo = 0
    nhi = 0
    for i in range(ns):
        j = i + 1
        if j == ns:
            j = 0
        di = src[i, axis] - bound
        dj = src[j, axis] - bound
        crosses = (di > 0.0 and dj < 0.0) or (di < 0.0 and dj > 0.0)
        xx = 0.0
        xy = 0.0
        xz = 0.0
        if crosses:
            t = di / (di - dj)
            xx = src[i, 0] + t * (src[j, 0] - src[i, 0])
            xy = src[i, 1] + t * (src[j, 1] - src[i, 1])
            xz = src[i, 2] + t * (src[j, 2] - src[i, 2])
            if axis == 0:
                xx = bound
            elif axis == 1:
                xy = bound
            else:
                xz = bound
        if dj <= 0.0:
            if di > 0.0:
                if crosses:
                    nlo = _emit(dst_lo, nlo, xx, xy, xz)
                else:  # di > 0, dj == 0: the target vertex is the crossing
                    pass
            nlo = _emit(dst_lo, nlo, src[j, 0], src[j, 1], src[j, 2])
        elif di <= 0.0 and crosses:
            nlo = _emit(dst_lo, nlo, xx, xy, xz)
        if dj >= 0.0:
            if di < 0.0 and crosses:
                nhi = _emit(dst_hi, nhi, xx, xy, xz)
            nhi = _emit(dst_hi, nhi, src[j, 0], src[j, 1], src[j, 2])
        elif di >= 0.0 and crosses:
            nhi = _emit(dst_hi, nhi, xx, xy, xz)
    if nlo >= 2 and dst_lo[nlo - 1, 0] == dst_lo[0, 0] and dst_lo[nlo - 1, 1] == dst_lo[0, 1] and dst_lo[nlo - 1, 2] == dst_lo[0, 2]:
        nlo -= 1
    if nhi >= 2 and dst_hi[nhi - 1, 0] == dst_hi[0, 0] and dst_hi[nhi - 1, 1] == dst_hi[0, 1] and dst_hi[nhi - 1, 2] == dst_hi[0, 2]:
        nhi -= 1
    return nlo, nhi


@njit(cache=True)
def _area_ok(buf, n):
    if n < 3:
        return False
    sx = 0.0
    sy = 0.0
    sz = 0.0
    for i in range(n):
        j = i + 1
        if j == n:
            j = 0
        sx += buf[i, 1] * buf[j, 2] - buf[i, 2] * buf[j, 1]
        sy += buf[i, 2] * buf[j, 0] - buf[i, 0] * buf[j, 2]
        sz += buf[i, 0] * buf[j, 1] - buf[i, 1] * buf[j, 0]
    return 0.5 * math.sqrt(sx * sx + sy * sy + sz * sz) >= MIN_PIECE_AREA


@njit(cache=True)
def _split_level(pv, pn, pf, pc, child_level, ov, on, of, oc):
    """Refine pieces by one octree level.

    Returns the output piece count or -1 if capacity was exceeded (caller
    retries with a bigger buffer).
    """
    cap = ov.shape[0]
    nc = 1 << child_level
    h = 1.0 / nc
    n_out = 0
    # Candidate workspaces for the general (clipping) path.
    cur = np.empty((8, MAX_VERTS, 3), np.float64)
    cur_n = np.empty(8, np.int64)
    cur_bit = np.empty((8, 3), np.int64)
    nxt = np.empty((8, MAX_VERTS, 3), np.float64)
    nxt_n = np.empty(8, np.int64)
    nxt_bit = np.empty((8, 3), np.int64)
    for p in range(pv.shape[0]):
        n0 = pn[p]
        base_i = pc[p, 0] * 2
        base_j = pc[p, 1] * 2
        base_k = pc[p, 2] * 2
        # Axis extents in one scan.
        minx = pv[p, 0, 0]
        maxx = minx
        miny = pv[p, 0, 1]
        maxy = miny
        minz = pv[p, 0, 2]
        maxz = minz
        for i in range(1, n0):
            v = pv[p, i, 0]
            if v < minx:
                minx = v
            elif v > maxx:
                maxx = v
            v = pv[p, i, 1]
            if v < miny:
                miny = v
            elif v > maxy:
                maxy = v
            v = pv[p, i, 2]
            if v < minz:
                minz = v
            elif v > maxz:
                maxz = v
        xm = (base_i + 1) * h
        ym = (base_j + 1) * h
        zm = (base_k + 1) * h
        # Route per axis: in-plane geometry belongs to the higher cell
        # (half-open ownership), touching-from-one-side to that side.
        if minx < xm and maxx > xm:
            sx = _SPLIT
        elif maxx < xm or (maxx == xm and minx < xm):
            sx = _LO
        else:
            sx = _HI
        if miny < ym and maxy > ym:
            sy = _SPLIT
        elif maxy < ym or (maxy == ym and miny < ym):
            sy = _LO
        else:
            sy = _HI
        if minz < zm and maxz > zm:
            sz = _SPLIT
        elif maxz < zm or (maxz == zm and minz < zm):
            sz = _LO
        else:
            sz = _HI

        if sx != _SPLIT and sy != _SPLIT and sz != _SPLIT:
            if n_out >= cap:
                return -1
            for i in range(n0):
                ov[n_out, i, 0] = pv[p, i, 0]
                ov[n_out, i, 1] = pv[p, i, 1]
                ov[n_out, i, 2] = pv[p, i, 2]
            on[n_out] = n0
            of[n_out] = pf[p]
            oc[n_out, 0] = base_i + sx
            oc[n_out, 1] = base_j + sy
            oc[n_out, 2] = base_k + sz
            n_out += 1
            continue

        # General path: clip the straddled axes, pass the decided ones.
        for i in range(n0):
            cur[0, i, 0] = pv[p, i, 0]
            cur[0, i, 1] = pv[p, i, 1]
            cur[0, i, 2] = pv[p, i, 2]
        cur_n[0] = n0
        cur_bit[0, 0] = sx
        cur_bit[0, 1] = sy
        cur_bit[0, 2] = sz
        n_cur = 1
        for axis in range(3):
            if axis == 0:
                state = sx
                mid = xm
            elif axis == 1:
                state = sy
                mid = ym
            else:
                state = sz
                mid = zm
            if state != _SPLIT:
                continue
            n_nxt = 0
            for t in range(n_cur):
                nlo, nhi = _clip_axis_both(
                    cur[t], cur_n[t], axis, mid, nxt[n_nxt], nxt[n_nxt + 1]
                )
                lo_slot = n_nxt
                if nlo >= 3:
                    nxt_n[lo_slot] = nlo
                    for d in range(3):
                        nxt_bit[lo_slot, d] = cur_bit[t, d]
                    nxt_bit[lo_slot, axis] = _LO
                    n_nxt += 1
                if nhi >= 3:
                    hi_slot = n_nxt
                    if hi_slot != lo_slot + 1:
                        # the low side was dropped; move the high buffer up
                        for i in range(nhi):
                            nxt[hi_slot, i, 0] = nxt[lo_slot + 1, i, 0]
                            nxt[hi_slot, i, 1] = nxt[lo_slot + 1, i, 1]
                            nxt[hi_slot, i, 2] = nxt[lo_slot + 1, i, 2]
                    nxt_n[hi_slot] = nhi
                    for d in range(3):
                        nxt_bit[hi_slot, d] = cur_bit[t, d]
                    nxt_bit[hi_slot, axis] = _HI
                    n_nxt += 1
            tmp = cur
            cur = nxt
            nxt = tmp
            tmp_n = cur_n
            cur_n = nxt_n
            nxt_n = tmp_n
            tmp_b = cur_bit
            cur_bit = nxt_bit
            nxt_bit = tmp_b
            n_cur = n_nxt
        for t in range(n_cur):
            if not _area_ok(cur[t], cur_n[t]):
                continue
            if n_out >= cap:
                return -1
            nn = cur_n[t]
            for i in range(nn):
                ov[n_out, i, 0] = cur[t, i, 0]
                ov[n_out, i, 1] = cur[t, i, 1]
                ov[n_out, i, 2] = cur[t, i, 2]
            on[n_out] = nn
            of[n_out] = pf[p]
            oc[n_out, 0] = base_i + cur_bit[t, 0]
            oc[n_out, 1] = base_j + cur_bit[t, 1]
            oc[n_out, 2] = base_k + cur_bit[t, 2]
            n_out += 1
    return n_out


@njit(cache=True)
def _piece_cross_sums(pv, pn):
    """Half edge-cross sums per piece: dot with the face normal gives area."""
    out = np.empty((pv.shape[0], 3), np.float64)
    for p in range(pv.shape[0]):
        n = pn[p]
        sx = 0.0
        sy = 0.0
        sz = 0.0
        for i in range(n):
            j = i + 1
            if j == n:
                j = 0
            sx += pv[p, i, 1] * pv[p, j, 2] - pv[p, i, 2] * pv[p, j, 1]
            sy += pv[p, i, 2] * pv[p, j, 0] - pv[p, i, 0] * pv[p, j, 2]
            sz += pv[p, i, 0] * pv[p, j, 1] - pv[p, i, 1] * pv[p, j, 0]
        out[p, 0] = 0.5 * sx
        out[p, 1] = 0.5 * sy
        out[p, 2] = 0.5 * sz
    return out


@njit(cache=True)
def _count_edge_segments(verts, edges, level):
    n = 1 << level
    h = 1.0 / n
    total = 0
    for e in range(edges.shape[0]):
        a = edges[e, 0]
        b = edges[e, 1]
        cnt = 1
        for d in range(3):
            x0 = verts[a, d]
            x1 = verts[b, d]
            if x1 < x0:
                x0, x1 = x1, x0
            mlo = int(math.floor(x0 / h)) + 1
            mhi = int(math.ceil(x1 / h)) - 1
            if mhi >= mlo:
                cnt += mhi - mlo + 1
        total += cnt
    return total


@njit(cache=True)
def _edge_segments(verts, edges, level, out_cells, out_edge, out_len):
    """Clip every edge parametrically against the leaf grid.

    Each subsegment is assigned to the half-open owner voxel of its
    midpoint, so per-edge lengths form an exact partition.
    """
    n = 1 << level
    h = 1.0 / n
    tbuf = np.empty(3 * n + 2, np.float64)
    m = 0
    for e in range(edges.shape[0]):
        ia = edges[e, 0]
        ib = edges[e, 1]
        ax = verts[ia, 0]
        ay = verts[ia, 1]
        az = verts[ia, 2]
        dx = verts[ib, 0] - ax
        dy = verts[ib, 1] - ay
        dz = verts[ib, 2] - az
        elen = math.sqrt(dx * dx + dy * dy + dz * dz)
        if elen == 0.0:
            continue
        nt = 0
        tbuf[nt] = 0.0
        nt += 1
        tbuf[nt] = 1.0
        nt += 1
        for d in range(3):
            x0 = verts[ia, d]
            x1 = verts[ib, d]
            delta = x1 - x0
            if delta == 0.0:
                continue
            lo = x0 if x0 < x1 else x1
            hi = x1 if x0 < x1 else x0
            mlo = int(math.floor(lo / h)) + 1
            mhi = int(math.ceil(hi / h)) - 1
            for mm in range(mlo, mhi + 1):
                t = (mm * h - x0) / delta
                if 0.0 < t < 1.0:
                    tbuf[nt] = t
                    nt += 1
        ts = tbuf[:nt]
        ts.sort()
        for s in range(nt - 1):
            t0 = ts[s]
            t1 = ts[s + 1]
            if t1 <= t0:
                continue
            tm = 0.5 * (t0 + t1)
            px = ax + tm * dx
            py = ay + tm * dy
            pz = az + tm * dz
            oi = int(px * n)
            oj = int(py * n)
            ok = int(pz * n)
            if oi >= n:
                oi = n - 1
            if oj >= n:
                oj = n - 1
            if ok >= n:
                ok = n - 1
            if oi < 0:
                oi = 0
            if oj < 0:
                oj = 0
            if ok < 0:
                ok = 0
            out_cells[m, 0] = oi
            out_cells[m, 1] = oj
            out_cells[m, 2] = ok
            out_edge[m] = e
            out_len[m] = (t1 - t0) * elen
            m += 1
    return m
