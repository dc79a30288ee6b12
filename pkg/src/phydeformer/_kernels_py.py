"""Pure-Python closest-point queries; same interface as the compiled kernel.

The BVH arrays are accepted for signature compatibility but the search runs
on a KD-tree over triangle centroids with a bounding-sphere candidate filter,
which keeps the per-candidate work vectorized in numpy.
"""
import numpy as np
from scipy.spatial import cKDTree


def closest_on_triangles(p, a, b, c):
    """Vectorized closest point on triangles (a, b, c) to points p, all (N, 3).

    Returns (closest points, region codes) with the same region encoding and
    branch order as the compiled kernel.
    """
    ab = b - a
    ac = c - a
    ap = p - a

    def dot(u, v):
        return u[:, 0] * v[:, 0] + u[:, 1] * v[:, 1] + u[:, 2] * v[:, 2]

    d1 = dot(ab, ap)
    d2 = dot(ac, ap)
    bp = p - b
    d3 = dot(ab, bp)
    d4 = dot(ac, bp)
    cp = p - c
    d5 = dot(ab, cp)
    d6 = dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    n = len(p)
    out = np.empty((n, 3))
    region = np.full(n, -1, dtype=np.int64)
    todo = np.ones(n, dtype=bool)

    def take(mask, code, pts):
        m = todo & mask
        out[m] = pts[m] if pts.ndim == 2 else pts
        region[m] = code
        todo[m] = False

    with np.errstate(divide="ignore", invalid="ignore"):
        take((d1 <= 0) & (d2 <= 0), 1, a)
        take((d3 >= 0) & (d4 <= d3), 2, b)
        v = d1 / (d1 - d3)
        take((vc <= 0) & (d1 >= 0) & (d3 <= 0), 4, a + v[:, None] * ab)
        take((d6 >= 0) & (d5 <= d6), 3, c)
        w = d2 / (d2 - d6)
        take((vb <= 0) & (d2 >= 0) & (d6 <= 0), 6, a + w[:, None] * ac)
        w2 = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        take((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), 5, b + w2[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        vv = (vb * denom)[:, None]
        ww = (vc * denom)[:, None]
        take(np.ones(n, dtype=bool), 0, a + ab * vv + ac * ww)
    return out, region


def closest_points(queries, tri, face_ids, node_lo=None, node_hi=None, node_left=None,
                   node_right=None, node_start=None, node_count=None):
    queries = np.asarray(queries, dtype=np.float64)
    tri = np.asarray(tri, dtype=np.float64)
    face_ids = np.asarray(face_ids, dtype=np.int64)
    if len(tri) == 0:
        raise ValueError("empty triangle set")
    nq = len(queries)
    centroids = tri.mean(axis=1)
    radius = np.linalg.norm(tri - centroids[:, None, :], axis=2).max(axis=1)
    tree = cKDTree(centroids)

    # upper bound from the triangle with the nearest centroid
    _, near = tree.query(queries)
    pts, _ = closest_on_triangles(queries, tri[near, 0], tri[near, 1], tri[near, 2])
    bound = np.sqrt(((queries - pts) ** 2).sum(axis=1))
    cand = tree.query_ball_point(queries, bound + radius.max() + 1e-12)

    counts = np.fromiter((len(c) for c in cand), dtype=np.int64, count=nq)
    q_idx = np.repeat(np.arange(nq), counts)
    t_idx = np.fromiter((t for c in cand for t in c), dtype=np.int64, count=int(counts.sum()))
    cpts, creg = closest_on_triangles(queries[q_idx], tri[t_idx, 0], tri[t_idx, 1], tri[t_idx, 2])
    diff = queries[q_idx] - cpts
    d = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
    fid = face_ids[t_idx]
    # per query: minimal distance, then lowest face id
    order = np.lexsort((fid, d, q_idx))
    first = np.ones(len(order), dtype=bool)
    first[1:] = q_idx[order][1:] != q_idx[order][:-1]
    pick = order[first]
    return d[pick], fid[pick], cpts[pick], creg[pick]
