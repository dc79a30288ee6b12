"""Triangle mesh container, OBJ I/O and differential-geometry primitives.

All geometry is in meters. Faces are counter-clockwise vertex-index triples.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    """Raised for malformed or unusable mesh input."""


class ObjParseError(MeshError):
    pass


class DegenerateFaceError(MeshError):
    pass


class NonManifoldWarning(UserWarning):
    pass


@dataclass
class TriMesh:
    positions: np.ndarray
    faces: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.positions)):
            raise MeshError(f"face index out of range for {len(self.positions)} vertices")

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_positions(self, positions: np.ndarray, name: str | None = None) -> "TriMesh":
        """Same topology, new vertex positions (the face array is shared)."""
        return TriMesh(positions, self.faces, self.name if name is None else name)

    def copy(self) -> "TriMesh":
        return TriMesh(self.positions.copy(), self.faces.copy(), self.name)

    def validate(self, area_threshold: float = DEGENERATE_AREA) -> None:
        """Reject degenerate faces and warn on non-manifold or inconsistently oriented edges."""
        areas = face_areas(self)
        bad = np.flatnonzero(areas <= area_threshold)
        if bad.size:
            raise DegenerateFaceError(
                f"{bad.size} degenerate face(s) with area <= {area_threshold:g}, first: face {bad[0]}"
            )
        topo = edge_topology(self)
        if topo.nonmanifold_edges.size:
            e = topo.nonmanifold_edges[0]
            warnings.warn(
                f"{len(topo.nonmanifold_edges)} non-manifold edge(s), first: ({e[0]}, {e[1]})",
                NonManifoldWarning,
                stacklevel=2,
            )
        if topo.misoriented_edges.size:
            e = topo.misoriented_edges[0]
            warnings.warn(
                f"{len(topo.misoriented_edges)} edge(s) with inconsistent face orientation, "
                f"first: ({e[0]}, {e[1]})",
                NonManifoldWarning,
                stacklevel=2,
            )


# --------------------------------------------------------------------------- I/O


def load_obj(path, validate: bool = True) -> TriMesh:
    """Read an ASCII OBJ file holding a triangle mesh.

    Texture and normal records are ignored; ``f`` records may use the
    ``v/vt/vn`` forms but must have exactly three corners. Negative (relative)
    indices are resolved against the vertices read so far.
    """
    path = Path(path)
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            tag = tokens[0]
            if tag == "v":
                if len(tokens) < 4:
                    raise ObjParseError(f"{path}:{lineno}: vertex needs 3 coordinates: {raw.strip()!r}")
                try:
                    verts.append([float(t) for t in tokens[1:4]])
                except ValueError:
                    raise ObjParseError(f"{path}:{lineno}: bad vertex coordinate: {raw.strip()!r}") from None
            elif tag == "f":
                corners = tokens[1:]
                if len(corners) != 3:
                    raise ObjParseError(
                        f"{path}:{lineno}: only triangle faces are supported, got {len(corners)} corners: "
                        f"{raw.strip()!r}"
                    )
                idx = []
                for c in corners:
                    try:
                        i = int(c.split("/")[0])
                    except ValueError:
                        raise ObjParseError(f"{path}:{lineno}: bad face index: {raw.strip()!r}") from None
                    if i == 0:
                        raise ObjParseError(f"{path}:{lineno}: OBJ indices are 1-based: {raw.strip()!r}")
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if min(idx) < 0 or max(idx) >= len(verts):
                    raise ObjParseError(f"{path}:{lineno}: face references missing vertex: {raw.strip()!r}")
                faces.append(idx)
            # vt, vn, g, o, s, usemtl, mtllib ... are ignored
    mesh = TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3), name=path.stem)
    if validate:
        mesh.validate()
    return mesh


def format_obj(mesh: TriMesh) -> str:
    lines = [f"# {mesh.name}" if mesh.name else "# mesh"]
    lines += ["v %.9g %.9g %.9g" % tuple(p) for p in mesh.positions]
    lines += ["f %d %d %d" % tuple(f + 1) for f in mesh.faces]
    return "\n".join(lines) + "\n"


def save_obj(mesh: TriMesh, path) -> None:
    """Write positions and faces only, 9 significant digits."""
    Path(path).write_text(format_obj(mesh))


# ---------------------------------------------------------------- per-face quantities


def face_cross(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """(v1 - v0) x (v2 - v0) per face; length is twice the face area."""
    p0, p1, p2 = (positions[faces[:, k]] for k in range(3))
    return np.cross(p1 - p0, p2 - p0)


def face_areas(mesh: TriMesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_cross(mesh.positions, mesh.faces), axis=1)


def face_normals(mesh: TriMesh) -> np.ndarray:
    c = face_cross(mesh.positions, mesh.faces)
    n = np.linalg.norm(c, axis=1, keepdims=True)
    return c / np.where(n > 0, n, 1.0)


def _scatter_faces(values: np.ndarray, faces: np.ndarray, n_vertices: int) -> np.ndarray:
    """Sum a per-face 3-vector onto each of the face's vertices."""
    out = np.zeros((n_vertices, values.shape[1]))
    idx = faces.ravel()
    rep = np.repeat(values, 3, axis=0)
    for c in range(values.shape[1]):
        out[:, c] = np.bincount(idx, weights=rep[:, c], minlength=n_vertices)
    return out


def scatter_add(index: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """Sum rows of ``values`` (N, d) into ``n`` buckets given by ``index``."""
    values = np.asarray(values)
    out = np.empty((n, values.shape[1]))
    for c in range(values.shape[1]):
        out[:, c] = np.bincount(index, weights=values[:, c], minlength=n)
    return out


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted vertex normals.

    Where incident faces cancel exactly the unweighted average of unit face
    normals is used instead; if that is zero as well a MeshError is raised.
    """
    c = face_cross(mesh.positions, mesh.faces)
    m = _scatter_faces(c, mesh.faces, mesh.n_vertices)
    norm = np.linalg.norm(m, axis=1)
    bad = norm <= 1e-300
    if bad.any():
        fn = c / np.linalg.norm(c, axis=1, keepdims=True).clip(1e-300)
        u = _scatter_faces(fn, mesh.faces, mesh.n_vertices)
        m[bad] = u[bad]
        norm = np.linalg.norm(m, axis=1)
        still = norm <= 1e-300
        if still.any():
            raise MeshError(f"vertex normal undefined at vertex {int(np.flatnonzero(still)[0])}")
    return m / norm[:, None]


# ---------------------------------------------------------------- edge topology


@dataclass
class EdgeTopology:
    """Edge incidence derived from the face list.

    ``interior`` rows are (i, j, f0, f1, k0, k1): face f0 contains the directed
    edge i->j with opposite vertex k0, face f1 contains j->i with opposite k1.
    ``boundary`` rows are (i, j, f) following the orientation of face f.
    """

    interior: np.ndarray
    boundary: np.ndarray
    nonmanifold_edges: np.ndarray = field(default_factory=lambda: np.empty((0, 2), np.int64))
    misoriented_edges: np.ndarray = field(default_factory=lambda: np.empty((0, 2), np.int64))


def edge_topology(mesh: TriMesh) -> EdgeTopology:
    F = mesh.faces
    nf = len(F)
    src = F.ravel()
    dst = F[:, [1, 2, 0]].ravel()
    opp = F[:, [2, 0, 1]].ravel()
    fid = np.repeat(np.arange(nf), 3)
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    order = np.lexsort((fid, hi, lo))
    lo, hi, src, dst, opp, fid = lo[order], hi[order], src[order], dst[order], opp[order], fid[order]
    key_change = np.ones(len(lo), dtype=bool)
    key_change[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    starts = np.flatnonzero(key_change)
    counts = np.diff(np.append(starts, len(lo)))

    b = starts[counts == 1]
    boundary = np.stack([src[b], dst[b], fid[b]], axis=1) if b.size else np.empty((0, 3), np.int64)

    s2 = starts[counts == 2]
    same_dir = src[s2] == src[s2 + 1]
    good = s2[~same_dir]
    # first entry of each pair is the face holding i->j with i = src
    interior = np.stack(
        [src[good], dst[good], fid[good], fid[good + 1], opp[good], opp[good + 1]], axis=1
    ) if good.size else np.empty((0, 6), np.int64)
    mis = s2[same_dir]
    misoriented = np.stack([lo[mis], hi[mis]], axis=1) if mis.size else np.empty((0, 2), np.int64)
    nm = starts[counts > 2]
    nonmanifold = np.stack([lo[nm], hi[nm]], axis=1) if nm.size else np.empty((0, 2), np.int64)
    return EdgeTopology(interior.astype(np.int64), boundary.astype(np.int64),
                        nonmanifold.astype(np.int64), misoriented.astype(np.int64))


@dataclass
class BoundaryLoop:
    vertex_ids: np.ndarray
    owner: TriMesh = field(repr=False)

    def __len__(self):
        return len(self.vertex_ids)

    def length(self, positions: np.ndarray | None = None) -> float:
        p = (self.owner.positions if positions is None else positions)[self.vertex_ids]
        return float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum())


def extract_boundary_loops(mesh: TriMesh) -> list[BoundaryLoop]:
    """Chain boundary edges into closed loops, longest loop first.

    Traversal follows the orientation of the incident faces.
    """
    topo = edge_topology(mesh)
    nxt: dict[int, int] = {}
    for i, j, _ in topo.boundary:
        i, j = int(i), int(j)
        if i in nxt:
            raise MeshError(f"non-manifold boundary at vertex {i}: several outgoing boundary edges")
        nxt[i] = j
    loops = []
    visited: set[int] = set()
    for start in sorted(nxt):
        if start in visited:
            continue
        cycle = [start]
        visited.add(start)
        v = nxt[start]
        while v != start:
            if v not in nxt:
                raise MeshError(f"open boundary chain does not close at vertex {v}")
            if v in visited:
                raise MeshError(f"boundary chain revisits vertex {v}")
            cycle.append(v)
            visited.add(v)
            v = nxt[v]
        loops.append(BoundaryLoop(np.array(cycle, dtype=np.int64), mesh))
    loops.sort(key=lambda lp: (-lp.length(), -len(lp), int(lp.vertex_ids.min())))
    return loops


# ---------------------------------------------------------------- dihedrals


def dihedral_angles(mesh: TriMesh, topo: EdgeTopology | None = None) -> np.ndarray:
    """Signed angle between the normals of the two faces at each interior edge.

    The sign is positive when the rotation from the first face normal to the
    second is counter-clockwise about the shared edge direction i->j.
    """
    topo = edge_topology(mesh) if topo is None else topo
    return _dihedral_from_positions(mesh.positions, topo.interior)


def _dihedral_from_positions(x: np.ndarray, interior: np.ndarray) -> np.ndarray:
    i, j, k0, k1 = interior[:, 0], interior[:, 1], interior[:, 4], interior[:, 5]
    e = x[j] - x[i]
    n0 = np.cross(e, x[k0] - x[i])
    n1 = np.cross(x[i] - x[j], x[k1] - x[j])
    ehat = e / np.linalg.norm(e, axis=1, keepdims=True)
    sin = np.einsum("ij,ij->i", np.cross(n0, n1), ehat)
    cos = np.einsum("ij,ij->i", n0, n1)
    return np.arctan2(sin, cos)


# ---------------------------------------------------------------- face gradient


def build_face_gradient(mesh: TriMesh) -> sparse.csr_matrix:
    """Sparse operator mapping per-vertex scalars to per-face gradient vectors.

    Output layout is 3 rows per face (x, y, z components of face ``f`` at rows
    ``3f, 3f+1, 3f+2``) and one column per vertex.
    """
    x = mesh.positions
    F = mesh.faces
    c = face_cross(x, F)
    twoA = np.linalg.norm(c, axis=1)
    n = c / twoA[:, None]
    p0, p1, p2 = x[F[:, 0]], x[F[:, 1]], x[F[:, 2]]
    edges = (p2 - p1, p0 - p2, p1 - p0)  # edge opposite each corner, CCW
    nf = len(F)
    rows = np.empty((nf, 3, 3), dtype=np.int64)
    cols = np.empty((nf, 3, 3), dtype=np.int64)
    vals = np.empty((nf, 3, 3))
    base = 3 * np.arange(nf)
    for k in range(3):
        g = np.cross(n, edges[k]) / twoA[:, None]
        for comp in range(3):
            rows[:, k, comp] = base + comp
            cols[:, k, comp] = F[:, k]
            vals[:, k, comp] = g[:, comp]
    G = sparse.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * nf, mesh.n_vertices))
    return G.tocsr()


# ---------------------------------------------------------------- noise


def perturb_gaussian(mesh: TriMesh, sigma: float, seed: int) -> TriMesh:
    """Independent Gaussian noise on every coordinate; topology unchanged."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return mesh.with_positions(mesh.positions.copy())
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=mesh.positions.shape)
    return mesh.with_positions(mesh.positions + noise)


def connected_components(mesh: TriMesh) -> tuple[int, np.ndarray]:
    """Vertex-level connected components through face edges."""
    from scipy.sparse.csgraph import connected_components as cc

    F = mesh.faces
    i = np.concatenate([F[:, 0], F[:, 1], F[:, 2]])
    j = np.concatenate([F[:, 1], F[:, 2], F[:, 0]])
    adj = sparse.coo_matrix((np.ones(len(i)), (i, j)), shape=(mesh.n_vertices,) * 2)
    return cc(adj, directed=False)


def bbox_diagonal(positions: np.ndarray) -> float:
    return float(np.linalg.norm(positions.max(axis=0) - positions.min(axis=0)))
