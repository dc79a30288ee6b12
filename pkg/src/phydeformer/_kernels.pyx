# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled closest-point queries against a triangle BVH.

Region codes: 0 face interior, 1/2/3 vertex a/b/c, 4 edge ab, 5 edge bc, 6 edge ca.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    MAX_STACK = 128


cdef inline double _dot(double ax, double ay, double az, double bx, double by, double bz) noexcept nogil:
    return ax * bx + ay * by + az * bz


cdef inline int _closest_on_triangle(
    const double* p, const double* a, const double* b, const double* c, double* out
) noexcept nogil:
    cdef double abx = b[0] - a[0], aby = b[1] - a[1], abz = b[2] - a[2]
    cdef double acx = c[0] - a[0], acy = c[1] - a[1], acz = c[2] - a[2]
    cdef double apx = p[0] - a[0], apy = p[1] - a[1], apz = p[2] - a[2]
    cdef double d1 = _dot(abx, aby, abz, apx, apy, apz)
    cdef double d2 = _dot(acx, acy, acz, apx, apy, apz)
    cdef double bpx, bpy, bpz, cpx, cpy, cpz, d3, d4, d5, d6, va, vb, vc, v, w, denom
    if d1 <= 0.0 and d2 <= 0.0:
        out[0] = a[0]; out[1] = a[1]; out[2] = a[2]
        return 1
    bpx = p[0] - b[0]; bpy = p[1] - b[1]; bpz = p[2] - b[2]
    d3 = _dot(abx, aby, abz, bpx, bpy, bpz)
    d4 = _dot(acx, acy, acz, bpx, bpy, bpz)
    if d3 >= 0.0 and d4 <= d3:
        out[0] = b[0]; out[1] = b[1]; out[2] = b[2]
        return 2
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        out[0] = a[0] + v * abx; out[1] = a[1] + v * aby; out[2] = a[2] + v * abz
        return 4
    cpx = p[0] - c[0]; cpy = p[1] - c[1]; cpz = p[2] - c[2]
    d5 = _dot(abx, aby, abz, cpx, cpy, cpz)
    d6 = _dot(acx, acy, acz, cpx, cpy, cpz)
    if d6 >= 0.0 and d5 <= d6:
        out[0] = c[0]; out[1] = c[1]; out[2] = c[2]
        return 3
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        out[0] = a[0] + w * acx; out[1] = a[1] + w * acy; out[2] = a[2] + w * acz
        return 6
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out[0] = b[0] + w * (c[0] - b[0]); out[1] = b[1] + w * (c[1] - b[1]); out[2] = b[2] + w * (c[2] - b[2])
        return 5
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    out[0] = a[0] + abx * v + acx * w
    out[1] = a[1] + aby * v + acy * w
    out[2] = a[2] + abz * v + acz * w
    return 0


cdef inline double _box_sqdist(const double* p, const double* lo, const double* hi) noexcept nogil:
    cdef double d = 0.0, t
    cdef int k
    for k in range(3):
        if p[k] < lo[k]:
            t = lo[k] - p[k]
            d += t * t
        elif p[k] > hi[k]:
            t = p[k] - hi[k]
            d += t * t
    return d


def closest_points(
    double[:, ::1] queries,
    double[:, :, ::1] tri,
    cnp.int64_t[::1] face_ids,
    double[:, ::1] node_lo,
    double[:, ::1] node_hi,
    cnp.int64_t[::1] node_left,
    cnp.int64_t[::1] node_right,
    cnp.int64_t[::1] node_start,
    cnp.int64_t[::1] node_count,
):
    """Exact closest point on the mesh for every query.

    ``tri`` holds triangle corners in BVH leaf order and ``face_ids`` maps that
    order back to mesh face indices. Exact distance ties resolve to the lowest
    face index. Returns (squared distance, face index, closest point, region).
    """
    cdef Py_ssize_t nq = queries.shape[0]
    sq_np = np.empty(nq, dtype=np.float64)
    face_np = np.empty(nq, dtype=np.int64)
    cp_np = np.empty((nq, 3), dtype=np.float64)
    reg_np = np.empty(nq, dtype=np.int64)
    cdef double[::1] sq = sq_np
    cdef cnp.int64_t[::1] face = face_np
    cdef double[:, ::1] cp = cp_np
    cdef cnp.int64_t[::1] reg = reg_np
    cdef cnp.int64_t stack[MAX_STACK]
    cdef Py_ssize_t q, top, node, t, end, left, right
    cdef double best, d, dl, dr, dx, dy, dz
    cdef cnp.int64_t best_face, fid
    cdef int best_reg, r
    cdef double tmp[3]
    cdef double best_pt[3]
    if tri.shape[0] == 0:
        raise ValueError("empty triangle set")
    with nogil:
        for q in range(nq):
            best = 1e308
            best_face = -1
            best_reg = 0
            top = 0
            stack[top] = 0
            top = 1
            while top > 0:
                top -= 1
                node = stack[top]
                if _box_sqdist(&queries[q, 0], &node_lo[node, 0], &node_hi[node, 0]) > best:
                    continue
                if node_left[node] < 0:
                    end = node_start[node] + node_count[node]
                    for t in range(node_start[node], end):
                        r = _closest_on_triangle(&queries[q, 0], &tri[t, 0, 0], &tri[t, 1, 0], &tri[t, 2, 0], tmp)
                        dx = queries[q, 0] - tmp[0]
                        dy = queries[q, 1] - tmp[1]
                        dz = queries[q, 2] - tmp[2]
                        d = dx * dx + dy * dy + dz * dz
                        fid = face_ids[t]
                        if d < best or (d == best and fid < best_face):
                            best = d
                            best_face = fid
                            best_reg = r
                            best_pt[0] = tmp[0]; best_pt[1] = tmp[1]; best_pt[2] = tmp[2]
                else:
                    left = node_left[node]
                    right = node_right[node]
                    dl = _box_sqdist(&queries[q, 0], &node_lo[left, 0], &node_hi[left, 0])
                    dr = _box_sqdist(&queries[q, 0], &node_lo[right, 0], &node_hi[right, 0])
                    # push the farther child first so the nearer one is visited first
                    if dl <= dr:
                        stack[top] = right
                        stack[top + 1] = left
                    else:
                        stack[top] = left
                        stack[top + 1] = right
                    top += 2
            sq[q] = best
            face[q] = best_face
            reg[q] = best_reg
            cp[q, 0] = best_pt[0]; cp[q, 1] = best_pt[1]; cp[q, 2] = best_pt[2]
    return sq_np, face_np, cp_np, reg_np
