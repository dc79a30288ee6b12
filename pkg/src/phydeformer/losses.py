"""Registration objective: Chamfer reconstruction, normal consistency, StVK strain,
dihedral bending and body collision, each with its exact position gradient.

Every term takes deformed vertex positions ``x`` of shape (|V|, 3) (a TriMesh is
accepted too) and returns ``(value, grad)`` with ``grad`` shaped like ``x``.
Nearest-neighbour correspondences are treated as constants inside a gradient.
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.spatial import cKDTree

from .mesh import BoundaryLoop, TriMesh, edge_topology, extract_boundary_loops, face_cross, scatter_add, vertex_normals
from .sdf import SdfBody

BENDING_MODES = ("rest_relative", "absolute")
TERMS = ("rec", "contour", "normal", "strain", "bending", "collision")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("PHYDEFORMER_THREADS", "1")))
    except ValueError:
        return 1


def _pos(x) -> np.ndarray:
    return x.positions if isinstance(x, TriMesh) else np.asarray(x, dtype=np.float64)


@dataclass
class LossConfig:
    lambda_n: float = 0.01
    lambda_s: float = 1.0
    lambda_b: float = 0.1
    lambda_c: float = 0.01
    lame_lambda: float = 16.3
    lame_mu: float = 13.5
    kappa: float = 4e-5
    epsilon_collision: float = 0.002
    strain_start_iter: int = 500
    bending_mode: str = "rest_relative"
    surface_samples: float = 4.0  # average samples per face
    use_contour: bool = True

    def __post_init__(self):
        for name in ("lambda_n", "lambda_s", "lambda_b", "lambda_c", "kappa", "epsilon_collision"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.lame_mu <= 0:
            raise ValueError("lame_mu must be > 0")
        if self.bending_mode not in BENDING_MODES:
            raise ValueError(f"bending_mode must be one of {BENDING_MODES}")
        if self.surface_samples <= 0:
            raise ValueError("surface_samples must be > 0")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ------------------------------------------------------------------ sampling


@dataclass
class SurfaceSamples:
    """Fixed barycentric samples on a mesh's faces, area-proportional at creation."""

    face_ids: np.ndarray
    bary: np.ndarray  # (n, 3)

    @classmethod
    def draw(cls, mesh: TriMesh, per_face: float, seed: int) -> "SurfaceSamples":
        rng = np.random.default_rng(seed)
        areas = 0.5 * np.linalg.norm(face_cross(mesh.positions, mesh.faces), axis=1)
        n = max(1, int(round(per_face * mesh.n_faces)))
        fid = np.sort(rng.choice(mesh.n_faces, size=n, p=areas / areas.sum()))
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
        return cls(fid, bary)

    def points(self, faces: np.ndarray, x: np.ndarray) -> np.ndarray:
        tri = faces[self.face_ids]
        return np.einsum("nk,nkc->nc", self.bary, x[tri])

    def scatter(self, faces: np.ndarray, grad_points: np.ndarray, n_vertices: int) -> np.ndarray:
        """Distribute per-sample gradients to vertices by barycentric weight."""
        tri = faces[self.face_ids]
        w = self.bary[:, :, None] * grad_points[:, None, :]
        return scatter_add(tri.ravel(), w.reshape(-1, 3), n_vertices)


# ------------------------------------------------------------------ state


@dataclass
class RestState:
    """Undeformed geometry of the (graded) source mesh; built once, never mutated."""

    faces: np.ndarray
    inverse_material: np.ndarray  # (F, 2, 2)
    rest_areas: np.ndarray
    interior: np.ndarray  # rows (i, j, f0, f1, k0, k1)
    rest_dihedrals: np.ndarray
    source_boundary: list[BoundaryLoop]
    samples: SurfaceSamples
    boundary_vertices: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    @property
    def n_vertices(self) -> int:
        return int(self.faces.max()) + 1 if self.faces.size else 0

    @classmethod
    def build(cls, source: TriMesh, cfg: LossConfig | None = None, seed: int = 0) -> "RestState":
        cfg = cfg or LossConfig()
        x = source.positions
        F = source.faces
        e1 = x[F[:, 1]] - x[F[:, 0]]
        e2 = x[F[:, 2]] - x[F[:, 0]]
        c = np.cross(e1, e2)
        area = 0.5 * np.linalg.norm(c, axis=1)
        n = c / (2 * area)[:, None]
        u = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
        w = np.cross(n, u)
        Dm = np.empty((len(F), 2, 2))
        Dm[:, 0, 0] = np.einsum("ij,ij->i", e1, u)
        Dm[:, 0, 1] = np.einsum("ij,ij->i", e2, u)
        Dm[:, 1, 0] = np.einsum("ij,ij->i", e1, w)
        Dm[:, 1, 1] = np.einsum("ij,ij->i", e2, w)
        topo = edge_topology(source)
        from .mesh import _dihedral_from_positions

        rest_dihedral = _dihedral_from_positions(x, topo.interior) if len(topo.interior) else np.empty(0)
        loops = extract_boundary_loops(source)
        bverts = np.concatenate([lp.vertex_ids for lp in loops]) if loops else np.empty(0, np.int64)
        return cls(
            faces=F.copy(),
            inverse_material=np.linalg.inv(Dm),
            rest_areas=area,
            interior=topo.interior,
            rest_dihedrals=rest_dihedral,
            source_boundary=loops,
            samples=SurfaceSamples.draw(source, cfg.surface_samples, seed),
            boundary_vertices=bverts,
        )


class TargetData:
    """Target-side geometry and search structures, built once per run."""

    def __init__(self, target: TriMesh, cfg: LossConfig | None = None, seed: int = 0):
        cfg = cfg or LossConfig()
        self.mesh = target
        self.samples = SurfaceSamples.draw(target, cfg.surface_samples, seed)
        self.sample_points = self.samples.points(target.faces, target.positions)
        self.sample_tree = cKDTree(self.sample_points)
        self.vertex_tree = cKDTree(target.positions)
        self.normals = vertex_normals(target)
        loops = extract_boundary_loops(target)
        self.boundary_vertices = np.concatenate([lp.vertex_ids for lp in loops]) if loops else np.empty(0, np.int64)
        self.boundary_points = target.positions[self.boundary_vertices]
        self.boundary_tree = cKDTree(self.boundary_points) if len(self.boundary_points) else None


@dataclass
class Correspondences:
    """Nearest-neighbour indices, refreshed once per iteration and frozen within it.

    Each pair is (x_to_t, t_to_x) for surface samples, contour vertices and
    mesh vertices (the latter drives the normal term).
    """

    surface: tuple[np.ndarray, np.ndarray]
    contour: tuple[np.ndarray, np.ndarray] | None
    vertex: tuple[np.ndarray, np.ndarray]
    refreshed_at: int = 0

    @property
    def x_to_t(self):
        return self.surface[0]

    @property
    def t_to_x(self):
        return self.surface[1]


def nearest_pairs(A: np.ndarray, B: np.ndarray, tree_A=None, tree_B=None):
    """(index in B nearest to each A point, index in A nearest to each B point)."""
    w = _workers()
    tree_B = cKDTree(B) if tree_B is None else tree_B
    tree_A = cKDTree(A) if tree_A is None else tree_A
    _, a2b = tree_B.query(A, workers=w)
    _, b2a = tree_A.query(B, workers=w)
    return a2b.astype(np.int64), b2a.astype(np.int64)


def find_correspondences(x, rest: RestState, target: TargetData, iteration: int = 0) -> Correspondences:
    x = _pos(x)
    sp = rest.samples.points(rest.faces, x)
    surface = nearest_pairs(sp, target.sample_points, tree_B=target.sample_tree)
    contour = None
    if len(rest.boundary_vertices) and target.boundary_tree is not None:
        contour = nearest_pairs(x[rest.boundary_vertices], target.boundary_points, tree_B=target.boundary_tree)
    vertex = nearest_pairs(x, target.mesh.positions, tree_B=target.vertex_tree)
    return Correspondences(surface, contour, vertex, iteration)


# ------------------------------------------------------------------ Chamfer


def chamfer(A, B, pairs=None) -> tuple[float, np.ndarray]:
    """Symmetric mean squared nearest-neighbour distance and its gradient w.r.t. ``A``.

    ``pairs`` optionally fixes the correspondences as (a_to_b, b_to_a).
    """
    A = np.asarray(A, dtype=np.float64).reshape(-1, 3)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 3)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("chamfer needs two non-empty point sets")
    a2b, b2a = nearest_pairs(A, B) if pairs is None else pairs
    da = A - B[a2b]
    db = B - A[b2a]
    value = float((da * da).sum() / len(A) + (db * db).sum() / len(B))
    grad = 2.0 * da / len(A)
    grad -= scatter_add(b2a, 2.0 * db / len(B), len(A))
    return value, grad


def surface_chamfer(x, target: TargetData, rest: RestState, corr: Correspondences | None = None):
    x = _pos(x)
    sp = rest.samples.points(rest.faces, x)
    pairs = None if corr is None else corr.surface
    if pairs is None:
        pairs = nearest_pairs(sp, target.sample_points, tree_B=target.sample_tree)
    value, g = chamfer(sp, target.sample_points, pairs)
    return value, rest.samples.scatter(rest.faces, g, len(x))


def contour_chamfer(x, target: TargetData, rest: RestState, corr: Correspondences | None = None, warn=True):
    x = _pos(x)
    grad = np.zeros_like(x)
    if not len(rest.boundary_vertices) or target.boundary_tree is None:
        if warn:
            warnings.warn("source or target has no open contours; contour term is 0", stacklevel=2)
        return 0.0, grad
    bv = rest.boundary_vertices
    pairs = None if corr is None else corr.contour
    if pairs is None:
        pairs = nearest_pairs(x[bv], target.boundary_points, tree_B=target.boundary_tree)
    value, g = chamfer(x[bv], target.boundary_points, pairs)
    np.add.at(grad, bv, g)
    return value, grad


def reconstruction_loss(x, target: TargetData, rest: RestState, corr: Correspondences | None = None,
                        use_contour: bool = True):
    """Surface Chamfer on samples plus Chamfer between open-contour vertices."""
    v1, g1 = surface_chamfer(x, target, rest, corr)
    if not use_contour:
        return v1, g1
    v2, g2 = contour_chamfer(x, target, rest, corr)
    return v1 + v2, g1 + g2


# ------------------------------------------------------------------ normals


def normal_loss(x, target: TargetData, rest: RestState, corr: Correspondences | None = None):
    """Mean cosine distance between corresponding vertex normals, both directions.

    Target normals are constants; the gradient flows through the area-weighted
    vertex normals of ``x``.
    """
    x = _pos(x)
    F = rest.faces
    nv = len(x)
    c = face_cross(x, F)
    m = scatter_add(F.ravel(), np.repeat(c, 3, axis=0), nv)
    mlen = np.linalg.norm(m, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = m / mlen[:, None]
    nt = target.normals
    x2t, t2x = (nearest_pairs(x, target.mesh.positions, tree_B=target.vertex_tree)
                if corr is None else corr.vertex)
    nT = len(nt)
    value = float((1.0 - (n * nt[x2t]).sum(axis=1)).mean() + (1.0 - (nt * n[t2x]).sum(axis=1)).mean())
    g_n = -nt[x2t] / nv
    g_n -= scatter_add(t2x, nt / nT, nv)
    # through normalization: dn = (I - n n^T) dm / |m|
    with np.errstate(invalid="ignore", divide="ignore"):
        g_m = (g_n - n * (g_n * n).sum(axis=1, keepdims=True)) / mlen[:, None]
    h = g_m[F[:, 0]] + g_m[F[:, 1]] + g_m[F[:, 2]]  # dL/dc per face
    e1 = x[F[:, 1]] - x[F[:, 0]]
    e2 = x[F[:, 2]] - x[F[:, 0]]
    d1 = np.cross(e2, h)
    d2 = np.cross(h, e1)
    grad = scatter_add(F[:, 1], d1, nv) + scatter_add(F[:, 2], d2, nv) - scatter_add(F[:, 0], d1 + d2, nv)
    return value, grad


# ------------------------------------------------------------------ strain


def strain_stvk(x, rest: RestState, lame_lambda: float = 16.3, lame_mu: float = 13.5):
    """StVK membrane energy of the Green strain, weighted by rest area."""
    x = _pos(x)
    F = rest.faces
    Ds = np.stack([x[F[:, 1]] - x[F[:, 0]], x[F[:, 2]] - x[F[:, 0]]], axis=2)  # (F, 3, 2)
    Fd = Ds @ rest.inverse_material
    G = 0.5 * (np.transpose(Fd, (0, 2, 1)) @ Fd - np.eye(2))
    trG = G[:, 0, 0] + G[:, 1, 1]
    trG2 = (G * G).sum(axis=(1, 2))
    A = rest.rest_areas
    value = float(((0.5 * lame_lambda * trG ** 2 + lame_mu * trG2) * A).sum())
    S = lame_lambda * trG[:, None, None] * np.eye(2) + 2.0 * lame_mu * G
    H = A[:, None, None] * (Fd @ S @ np.transpose(rest.inverse_material, (0, 2, 1)))  # (F, 3, 2)
    nv = len(x)
    grad = scatter_add(F[:, 1], H[:, :, 0], nv) + scatter_add(F[:, 2], H[:, :, 1], nv)
    grad -= scatter_add(F[:, 0], H[:, :, 0] + H[:, :, 1], nv)
    return value, grad


# ------------------------------------------------------------------ bending


def dihedral_and_gradient(x: np.ndarray, interior: np.ndarray):
    """Signed dihedral angle per interior edge and its gradient w.r.t. the four hinge vertices.

    Returns (angles, grads, valid) with grads shaped (E, 4, 3) for vertices
    (i, j, k0, k1); hinges with a collapsed triangle are flagged invalid.
    """
    i, j, k0, k1 = interior[:, 0], interior[:, 1], interior[:, 4], interior[:, 5]
    xi, xj, x0, x1 = x[i], x[j], x[k0], x[k1]
    e = xj - xi
    N0 = np.cross(e, x0 - xi)
    N1 = np.cross(xi - xj, x1 - xj)
    elen = np.linalg.norm(e, axis=1)
    n0sq = (N0 * N0).sum(axis=1)
    n1sq = (N1 * N1).sum(axis=1)
    valid = (elen > 1e-12) & (n0sq > 1e-24) & (n1sq > 1e-24)
    elen_s = np.where(valid, elen, 1.0)
    n0s = np.where(valid, n0sq, 1.0)[:, None]
    n1s = np.where(valid, n1sq, 1.0)[:, None]
    ehat = e / elen_s[:, None]
    sin = np.einsum("ij,ij->i", np.cross(N0, N1), ehat)
    cos = np.einsum("ij,ij->i", N0, N1)
    theta = np.arctan2(sin, cos)
    u0 = N0 / n0s
    u1 = N1 / n1s
    g_k0 = -elen_s[:, None] * u0
    g_k1 = -elen_s[:, None] * u1
    t0i = np.einsum("ij,ij->i", x0 - xj, ehat)[:, None]
    t1i = np.einsum("ij,ij->i", x1 - xj, ehat)[:, None]
    t0j = np.einsum("ij,ij->i", x0 - xi, ehat)[:, None]
    t1j = np.einsum("ij,ij->i", x1 - xi, ehat)[:, None]
    g_i = -(t0i * u0 + t1i * u1)
    g_j = t0j * u0 + t1j * u1
    grads = np.stack([g_i, g_j, g_k0, g_k1], axis=1)
    grads[~valid] = 0.0
    return theta, grads, valid


def bending(x, rest: RestState, kappa: float = 4e-5, mode: str = "rest_relative"):
    """Quadratic dihedral-angle energy (kappa / 2) * angle^2 summed over interior edges.

    ``rest_relative`` measures each angle against the rest dihedral;
    ``absolute`` penalizes the raw angle.
    """
    x = _pos(x)
    if mode not in BENDING_MODES:
        raise ValueError(f"unknown bending mode {mode!r}")
    if len(rest.interior) == 0:
        return 0.0, np.zeros_like(x)
    theta, grads, valid = dihedral_and_gradient(x, rest.interior)
    if not valid.all():
        warnings.warn(f"{int((~valid).sum())} degenerate hinge(s) skipped in bending", stacklevel=2)
    dev = theta - rest.rest_dihedrals if mode == "rest_relative" else theta
    dev = np.where(valid, dev, 0.0)
    value = float(0.5 * kappa * (dev ** 2).sum())
    coef = (kappa * dev)[:, None, None] * grads
    idx = rest.interior[:, [0, 1, 4, 5]].ravel()
    grad = scatter_add(idx, coef.reshape(-1, 3), len(x))
    return value, grad


# ------------------------------------------------------------------ collision


def collision(x, body: SdfBody | None, epsilon: float = 0.002):
    """Cubic penalty on vertices closer than ``epsilon`` to (or inside) the body."""
    x = _pos(x)
    if body is None:
        return 0.0, np.zeros_like(x)
    d, _, g = body.query(x)
    viol = np.maximum(epsilon - d, 0.0)
    value = float((viol ** 3).sum())
    grad = (-3.0 * viol ** 2)[:, None] * g
    return value, grad


# ------------------------------------------------------------------ total


def total_loss(x, target: TargetData, rest: RestState, body: SdfBody | None, cfg: LossConfig,
               iteration: int, corr: Correspondences | None = None):
    """Weighted objective, its position gradient and the unweighted per-term breakdown.

    Strain enters the weighted sum only from ``cfg.strain_start_iter`` on but is
    always reported.
    """
    x = _pos(x)
    if corr is None:
        corr = find_correspondences(x, rest, target, iteration)
    parts: dict[str, float] = {}
    grads: dict[str, np.ndarray] = {}
    parts["rec"], grads["rec"] = surface_chamfer(x, target, rest, corr)
    if cfg.use_contour:
        parts["contour"], grads["contour"] = contour_chamfer(x, target, rest, corr, warn=False)
    else:
        parts["contour"], grads["contour"] = 0.0, np.zeros_like(x)
    parts["normal"], grads["normal"] = normal_loss(x, target, rest, corr)
    parts["strain"], grads["strain"] = strain_stvk(x, rest, cfg.lame_lambda, cfg.lame_mu)
    parts["bending"], grads["bending"] = bending(x, rest, cfg.kappa, cfg.bending_mode)
    parts["collision"], grads["collision"] = collision(x, body, cfg.epsilon_collision)
    w = term_weights(cfg, iteration)
    total = sum(w[k] * parts[k] for k in TERMS)
    grad = sum(w[k] * grads[k] for k in TERMS if w[k] != 0.0)
    return float(total), grad, parts


def term_weights(cfg: LossConfig, iteration: int) -> dict[str, float]:
    return {
        "rec": 1.0,
        "contour": 1.0 if cfg.use_contour else 0.0,
        "normal": cfg.lambda_n,
        "strain": cfg.lambda_s if iteration >= cfg.strain_start_iter else 0.0,
        "bending": cfg.lambda_b,
        "collision": cfg.lambda_c,
    }
