import warnings

import numpy as np
import pytest

from phydeformer import kernels, synthetic
from phydeformer.mesh import TriMesh
from phydeformer.sdf import SdfBody, signed_distance

BACKENDS = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])


def closest_on_segments(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    return a + t[:, None] * ab


def closest_on_triangles_oracle(p, a, b, c):
    """Plane projection where it lands inside the triangle, else the best of the three edges.

    ``p`` is one point; ``a``, ``b``, ``c`` are (n, 3) triangle corners.
    """
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    q = p - np.einsum("ij,ij->i", p - a, n)[:, None] * n
    v0, v1, v2 = b - a, c - a, q - a
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    inside = (v >= 0) & (w >= 0) & (v + w <= 1)
    pp = np.broadcast_to(p, a.shape)
    edges = np.stack([closest_on_segments(pp, a, b), closest_on_segments(pp, b, c),
                      closest_on_segments(pp, c, a)], axis=1)
    k = np.argmin(((p - edges) ** 2).sum(axis=2), axis=1)
    out = edges[np.arange(len(a)), k]
    out[inside] = q[inside]
    return out


def brute_force(mesh, p):
    """(distance, first face attaining it) over all faces."""
    tri = mesh.positions[mesh.faces]
    q = closest_on_triangles_oracle(p, tri[:, 0], tri[:, 1], tri[:, 2])
    d = np.sqrt(((p - q) ** 2).sum(axis=1))
    return d.min(), int(np.argmin(d)), d


def inside_by_ray_parity(mesh, p, direction=(0.3141, 0.2718, 0.9119)):
    d = np.asarray(direction) / np.linalg.norm(direction)
    hits = 0
    for i, j, k in mesh.faces:
        a, b, c = mesh.positions[[i, j, k]]
        e1, e2 = b - a, c - a
        h = np.cross(d, e2)
        det = e1 @ h
        if abs(det) < 1e-14:
            continue
        s = p - a
        u = (s @ h) / det
        q = np.cross(s, e1)
        v = (d @ q) / det
        t = (e2 @ q) / det
        if u >= 0 and v >= 0 and u + v <= 1 and t > 0:
            hits += 1
    return hits % 2 == 1


@pytest.mark.parametrize("backend", BACKENDS)
def test_flat_patch_distance(backend):
    patch = synthetic.grid(4, 4, size=(10.0, 10.0))
    patch = patch.with_positions(patch.positions - [5, 5, 0])
    with pytest.warns(UserWarning, match="not closed"):
        body = SdfBody(patch, backend=backend)
    d, cp, g = signed_distance(body, [0.3, 0.2, 1.0])
    assert d == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(cp, [0.3, 0.2, 0.0], atol=1e-12)
    np.testing.assert_allclose(g, [0, 0, 1.0], atol=1e-12)
    # open body: unsigned, so the point below is also +1
    assert signed_distance(body, [0.3, 0.2, -1.0])[0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_cube_centre_is_minus_inradius(backend):
    body = SdfBody(synthetic.cube(side=2.0), backend=backend)
    d, _, _ = signed_distance(body, [0.0, 0.0, 0.0])
    assert d == pytest.approx(-1.0, abs=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_random_queries_match_brute_force(backend):
    rng = np.random.default_rng(7)
    mesh = synthetic.icosphere(2, radius=0.5)
    mesh = mesh.with_positions(mesh.positions * [1.0, 0.7, 1.3])
    body = SdfBody(mesh, backend=backend)
    pts = rng.uniform(-1.0, 1.0, size=(1000, 3))
    sq, face, cp, _ = body.closest(pts)
    for n, p in enumerate(pts):
        d_ref, f_ref, all_d = brute_force(mesh, p)
        assert np.sqrt(sq[n]) == pytest.approx(d_ref, abs=1e-10)
        if face[n] != f_ref:
            # a different face is allowed only as an exact tie
            assert all_d[face[n]] == pytest.approx(d_ref, abs=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_sign_matches_ray_parity(backend):
    rng = np.random.default_rng(3)
    mesh = synthetic.icosphere(1, radius=0.4)
    body = SdfBody(mesh, backend=backend)
    pts = rng.uniform(-0.6, 0.6, size=(200, 3))
    d, _, _ = body.query(pts)
    for p, di in zip(pts, d):
        if abs(di) > 1e-6:
            assert (di < 0) == inside_by_ray_parity(mesh, p)


@pytest.mark.parametrize("backend", BACKENDS)
def test_cube_edge_and_corner_regions(backend):
    body = SdfBody(synthetic.cube(side=2.0), backend=backend)
    # outside near an edge, near a corner, and inside close to a face
    pts = np.array([[1.5, 1.5, 0.0], [1.2, 1.3, 1.4], [0.0, 0.0, 0.9]])
    d, cp, g = body.query(pts)
    assert d[0] == pytest.approx(np.sqrt(0.5), abs=1e-12)
    assert d[1] == pytest.approx(np.sqrt(0.04 + 0.09 + 0.16), abs=1e-12)
    assert d[2] == pytest.approx(-0.1, abs=1e-12)
    np.testing.assert_allclose(g[2], [0, 0, 1.0], atol=1e-12)  # gradient points outward
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_ties_resolve_to_lowest_face(backend):
    # two coplanar triangles sharing the diagonal; a point above the diagonal is equidistant
    body_mesh = TriMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[2, 3, 0], [0, 1, 2]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        body = SdfBody(body_mesh, backend=backend)
    _, face, _, _ = body.closest(np.array([[0.5, 0.5, 1.0], [0.25, 0.25, 0.5]]))
    assert face.tolist() == [0, 0]


def test_on_surface_gradient_is_pseudonormal():
    body = SdfBody(synthetic.cube(side=2.0))
    d, _, g = body.query(np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))
    np.testing.assert_allclose(d, 0.0, atol=1e-12)
    np.testing.assert_allclose(g[0], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(g[1], np.ones(3) / np.sqrt(3), atol=1e-12)


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="compiled kernel not built")
def test_compiled_and_python_backends_agree():
    rng = np.random.default_rng(11)
    mesh = synthetic.skirt(24, 8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = SdfBody(mesh, backend="compiled")
        b = SdfBody(mesh, backend="python")
    pts = rng.uniform(-0.4, 0.4, size=(2000, 3))
    sa, fa, ca, ra = a.closest(pts)
    sb, fb, cb, rb = b.closest(pts)
    np.testing.assert_allclose(sa, sb, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(ca, cb, atol=1e-12)
    same = fa == fb
    assert same.mean() > 0.999
    np.testing.assert_array_equal(ra[same], rb[same])


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("gpu")
