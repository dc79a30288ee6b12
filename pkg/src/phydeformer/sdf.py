"""Signed distance to a body mesh via a BVH and angle-weighted pseudonormals."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .mesh import TriMesh, edge_topology, face_cross

LEAF_SIZE = 4
SURFACE_TOL = 1e-9


@dataclass
class Bvh:
    order: np.ndarray  # leaf order -> face index
    node_lo: np.ndarray
    node_hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray


def build_bvh(tri: np.ndarray, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Median-split BVH over triangle centroids, flattened into arrays (root = node 0)."""
    n = len(tri)
    centroids = tri.mean(axis=1)
    tri_lo = tri.min(axis=1)
    tri_hi = tri.max(axis=1)
    order = np.arange(n)
    lo, hi, left, right, start, count = [], [], [], [], [], []

    def new_node(s, e):
        idx = order[s:e]
        lo.append(tri_lo[idx].min(axis=0))
        hi.append(tri_hi[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        return len(lo) - 1

    root = new_node(0, n)
    work = [(root, 0, n)]
    while work:
        node, s, e = work.pop()
        if e - s <= leaf_size:
            continue
        idx = order[s:e]
        c = centroids[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        # stable sort keeps the build deterministic for coincident centroids
        order[s:e] = idx[np.argsort(c[:, axis], kind="stable")]
        mid = (s + e) // 2
        lnode = new_node(s, mid)
        rnode = new_node(mid, e)
        left[node] = lnode
        right[node] = rnode
        count[node] = 0
        work.append((lnode, s, mid))
        work.append((rnode, mid, e))
    return Bvh(
        order=order.astype(np.int64),
        node_lo=np.ascontiguousarray(lo, dtype=np.float64),
        node_hi=np.ascontiguousarray(hi, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        start=np.asarray(start, dtype=np.int64),
        count=np.asarray(count, dtype=np.int64),
    )


def _angle_weighted_vertex_normals(mesh: TriMesh, fn: np.ndarray) -> np.ndarray:
    x = mesh.positions
    F = mesh.faces
    out = np.zeros_like(x)
    for k in range(3):
        a = x[F[:, k]]
        b = x[F[:, (k + 1) % 3]]
        c = x[F[:, (k + 2) % 3]]
        u = b - a
        v = c - a
        cos = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        ang = np.arccos(np.clip(cos, -1.0, 1.0))
        np.add.at(out, F[:, k], ang[:, None] * fn)
    return out / np.linalg.norm(out, axis=1, keepdims=True).clip(1e-300)


class SdfBody:
    """Body mesh prepared for exact closest-point and signed-distance queries.

    Open bodies (with boundary edges) give unsigned distance: the sign is
    forced positive and a warning is emitted once at construction.
    """

    def __init__(self, mesh: TriMesh, backend: str | None = None):
        self.mesh = mesh
        self._closest = kernels.get_backend(backend)
        tri = mesh.positions[mesh.faces]
        self.bvh = build_bvh(tri)
        self._tri = np.ascontiguousarray(tri[self.bvh.order])
        c = face_cross(mesh.positions, mesh.faces)
        self.face_normals = c / np.linalg.norm(c, axis=1, keepdims=True)
        self.vertex_normals = _angle_weighted_vertex_normals(mesh, self.face_normals)

        topo = edge_topology(mesh)
        self.closed = len(topo.boundary) == 0 and len(topo.nonmanifold_edges) == 0
        if not self.closed:
            warnings.warn("body mesh is not closed; collision uses unsigned distance", stacklevel=2)
        # per face, pseudonormal of edges (ab, bc, ca)
        edge_n = np.repeat(self.face_normals[:, None, :], 3, axis=1).copy()
        F = mesh.faces
        local = {(int(F[f, k]), int(F[f, (k + 1) % 3])): (f, k) for f in range(len(F)) for k in range(3)}
        for i, j, f0, f1, _, _ in topo.interior:
            s = self.face_normals[f0] + self.face_normals[f1]
            s = s / max(np.linalg.norm(s), 1e-300)
            fa, ka = local[(int(i), int(j))]
            fb, kb = local[(int(j), int(i))]
            edge_n[fa, ka] = s
            edge_n[fb, kb] = s
        self.edge_normals = edge_n

    def closest(self, points: np.ndarray):
        """Raw query: (squared distance, face index, closest point, region code)."""
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        b = self.bvh
        return self._closest(pts, self._tri, b.order, b.node_lo, b.node_hi, b.left, b.right, b.start, b.count)

    def pseudonormals(self, face: np.ndarray, region: np.ndarray) -> np.ndarray:
        F = self.mesh.faces
        out = self.face_normals[face].copy()
        for code, k in ((1, 0), (2, 1), (3, 2)):
            m = region == code
            out[m] = self.vertex_normals[F[face[m], k]]
        for code, k in ((4, 0), (5, 1), (6, 2)):
            m = region == code
            out[m] = self.edge_normals[face[m], k]
        return out

    def query(self, points: np.ndarray):
        """Signed distances, closest points and distance gradients for (N, 3) points."""
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        sq, face, cp, region = self.closest(pts)
        dist = np.sqrt(sq)
        psi = self.pseudonormals(face, region)
        diff = pts - cp
        if self.closed:
            sign = np.where(np.einsum("ij,ij->i", diff, psi) < 0, -1.0, 1.0)
        else:
            sign = np.ones(len(pts))
        grad = np.empty_like(pts)
        near = dist < SURFACE_TOL
        far = ~near
        grad[far] = diff[far] / dist[far, None] * sign[far, None]
        grad[near] = psi[near]
        return sign * dist, cp, grad


def signed_distance(body: SdfBody, p):
    """Signed distance, closest point and unit gradient for a single point or a batch."""
    p = np.asarray(p, dtype=np.float64)
    d, cp, g = body.query(p.reshape(-1, 3))
    if p.ndim == 1:
        return float(d[0]), cp[0], g[0]
    return d, cp, g
