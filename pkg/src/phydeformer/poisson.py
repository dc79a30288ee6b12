"""Per-triangle Jacobian fields and the area-weighted Poisson solve that maps them to vertices.

Vertex positions X minimize sum_i A_i ||grad_i(X) - J_i||^2. The system matrix
K = G^T M G is the cotangent Laplacian; its constant null space is removed by
pinning one anchor vertex per connected component, and the solution is then
shifted so each component keeps the centroid it has in the source mesh. The
map J -> X is affine, so its adjoint is exact and reuses the same factorization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .mesh import TriMesh, build_face_gradient, connected_components, face_areas

FACTORIZATIONS = 0


class FactorizationError(RuntimeError):
    pass


class NonFiniteJacobianError(ValueError):
    pass


@dataclass
class PoissonSystem:
    gradient_operator: sparse.csr_matrix
    mass: np.ndarray  # A_i repeated for the 3 gradient rows of face i
    source_positions: np.ndarray
    labels: np.ndarray  # component id per vertex
    anchors: np.ndarray  # pinned vertex per component
    free: np.ndarray  # vertex ids kept in the reduced system
    component_centroids: np.ndarray
    factor: object = field(repr=False)
    factorizations: int = 1
    _GtM: sparse.csr_matrix = field(default=None, repr=False)

    @property
    def n_faces(self) -> int:
        return self.gradient_operator.shape[0] // 3

    @property
    def n_vertices(self) -> int:
        return self.gradient_operator.shape[1]

    @property
    def source_centroid(self) -> np.ndarray:
        return self.source_positions.mean(axis=0)

    # reduced K^-1 applied to (|V|, k) right-hand sides, anchors pinned to zero
    def _solve_k(self, rhs: np.ndarray) -> np.ndarray:
        out = np.zeros_like(rhs)
        out[self.free] = self.factor.solve(np.ascontiguousarray(rhs[self.free]))
        return out

    def _center(self, x: np.ndarray) -> np.ndarray:
        """Subtract the per-component mean (the gauge projection)."""
        n_comp = len(self.anchors)
        counts = np.bincount(self.labels, minlength=n_comp).astype(float)
        means = np.stack([np.bincount(self.labels, weights=x[:, c], minlength=n_comp) for c in range(x.shape[1])],
                         axis=1) / counts[:, None]
        return x - means[self.labels]


def factorize(source: TriMesh) -> PoissonSystem:
    """Build G and the area weights for ``source`` and factor the gauge-fixed K once."""
    global FACTORIZATIONS
    G = build_face_gradient(source)
    areas = face_areas(source)
    mass = np.repeat(areas, 3)
    GtM = (G.T @ sparse.diags(mass)).tocsr()
    K = (GtM @ G).tocsc()
    n_comp, labels = connected_components(source)
    # lowest vertex id of each component is its anchor
    anchors = np.array([int(np.flatnonzero(labels == c)[0]) for c in range(n_comp)], dtype=np.int64)
    free = np.setdiff1d(np.arange(source.n_vertices), anchors)
    Kr = K[free][:, free].tocsc()
    if Kr.shape[0] == 0:
        raise FactorizationError("mesh has no free vertices after gauge fixing")
    try:
        lu = splu(Kr, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True})
    except RuntimeError as exc:
        comps = ", ".join(f"{c}: {int((labels == c).sum())} vertices" for c in range(n_comp))
        raise FactorizationError(f"factorization failed ({exc}); components: {comps}") from exc
    FACTORIZATIONS += 1
    centroids = np.stack([source.positions[labels == c].mean(axis=0) for c in range(n_comp)])
    return PoissonSystem(G, mass, source.positions.copy(), labels, anchors, free, centroids, lu, 1, GtM)


def jacobians_from_positions(sys: PoissonSystem, positions: np.ndarray) -> np.ndarray:
    """Per-face 3x3 Jacobians: row c is the face gradient of coordinate c."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape != (sys.n_vertices, 3):
        raise ValueError(f"expected positions of shape {(sys.n_vertices, 3)}, got {positions.shape}")
    g = sys.gradient_operator @ positions  # (3F, 3): column c holds grad of coordinate c
    return np.ascontiguousarray(g.reshape(-1, 3, 3).transpose(0, 2, 1))


def _jacobian_rhs(sys: PoissonSystem, J: np.ndarray) -> np.ndarray:
    # column c = G^T M vec(J[:, c, :])
    return sys._GtM @ J.transpose(0, 2, 1).reshape(-1, 3)


def solve_direction(sys: PoissonSystem, J: np.ndarray) -> np.ndarray:
    """Linear part of the J -> X map: centered least-squares positions."""
    x = sys._solve_k(_jacobian_rhs(sys, J))
    return sys._center(x)


def solve(sys: PoissonSystem, J: np.ndarray, translation=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Vertex positions whose face gradients best match ``J`` in the area-weighted sense.

    Each component keeps its source centroid; ``translation`` is added afterwards.
    """
    J = np.asarray(J, dtype=np.float64)
    if J.shape != (sys.n_faces, 3, 3):
        raise ValueError(f"expected a Jacobian field of shape {(sys.n_faces, 3, 3)}, got {J.shape}")
    if not np.all(np.isfinite(J)):
        bad = int(np.flatnonzero(~np.isfinite(J).reshape(len(J), -1).all(axis=1))[0])
        raise NonFiniteJacobianError(f"non-finite Jacobian entries, first at face {bad}")
    x = solve_direction(sys, J)
    return x + sys.component_centroids[sys.labels] + np.asarray(translation, dtype=np.float64)


def adjoint(sys: PoissonSystem, dL_dX: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pull a position gradient back to (dL/dJ per face, dL/dtranslation).

    dL/dJ = M G K^-1 C dL/dX with C the gauge (centering) projection.
    """
    w = np.asarray(dL_dX, dtype=np.float64).reshape(sys.n_vertices, 3)
    y = sys._solve_k(sys._center(w))
    g = (sys.gradient_operator @ y) * sys.mass[:, None]  # (3F, 3), column c -> coordinate c
    dJ = np.ascontiguousarray(g.reshape(-1, 3, 3).transpose(0, 2, 1))
    return dJ, w.sum(axis=0)


# -------------------------------------------------------------- binary dump


def dump_jacobians(J: np.ndarray, path) -> None:
    """Write |F| x 9 little-endian doubles, row-major."""
    np.ascontiguousarray(J, dtype="<f8").reshape(-1, 9).tofile(str(path))


def load_jacobians(path) -> np.ndarray:
    return np.fromfile(str(path), dtype="<f8").reshape(-1, 3, 3)

