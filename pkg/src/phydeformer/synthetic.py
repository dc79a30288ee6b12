"""Procedural meshes for tests, benchmarks and the synthetic registration pair."""
from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def quad() -> TriMesh:
    """Unit square in z = 0 split into two CCW triangles."""
    p = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    return TriMesh(p, [[0, 1, 2], [0, 2, 3]], "quad")


def grid(nx: int = 4, ny: int = 4, size=(1.0, 1.0), jitter: float = 0.0, seed: int = 0) -> TriMesh:
    """Planar z = 0 grid, CCW, optionally with in-plane vertex jitter."""
    xs = np.linspace(0, size[0], nx + 1)
    ys = np.linspace(0, size[1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    p = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    if jitter:
        rng = np.random.default_rng(seed)
        h = min(size[0] / nx, size[1] / ny)
        p[:, :2] += rng.uniform(-jitter * h, jitter * h, size=(len(p), 2))
    faces = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            faces += [[a, b, c], [a, c, d]]
    return TriMesh(p, faces, "grid")


def cube(side: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Closed axis-aligned cube, 8 vertices and 12 outward-facing triangles."""
    h = side / 2
    p = np.array([[x, y, z] for z in (-h, h) for y in (-h, h) for x in (-h, h)], dtype=float)
    p += np.asarray(center, dtype=float)
    f = [
        [0, 2, 1], [1, 2, 3],  # z-
        [4, 5, 6], [5, 7, 6],  # z+
        [0, 1, 4], [1, 5, 4],  # y-
        [2, 6, 3], [3, 6, 7],  # y+
        [0, 4, 2], [2, 4, 6],  # x-
        [1, 3, 5], [3, 7, 5],  # x+
    ]
    return TriMesh(p, f, "cube")


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    p = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in p]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = nf
    return TriMesh(np.array(verts) * radius, f, "icosphere")


def tube(n_around: int = 24, n_along: int = 10, radius: float = 0.2, length: float = 0.6,
         radius_end: float | None = None) -> TriMesh:
    """Open cylinder along +z with outward normals and two boundary loops.

    ``radius_end`` linearly tapers the radius towards z = length.
    """
    r1 = radius if radius_end is None else radius_end
    th = np.linspace(0, 2 * np.pi, n_around, endpoint=False)
    zs = np.linspace(0, length, n_along + 1)
    pts = []
    for z in zs:
        r = radius + (r1 - radius) * (z / length)
        pts += [[r * np.cos(a), r * np.sin(a), z] for a in th]
    faces = []
    for j in range(n_along):
        for i in range(n_around):
            a = j * n_around + i
            b = j * n_around + (i + 1) % n_around
            c = b + n_around
            d = a + n_around
            faces += [[a, b, c], [a, c, d]]
    return TriMesh(np.array(pts), faces, "tube")


def sphere_cap(n_rings: int = 8, n_around: int = 24, radius: float = 0.3, max_angle: float = 1.0) -> TriMesh:
    """Spherical cap around +z with one boundary loop."""
    pts = [[0.0, 0.0, radius]]
    for r in range(1, n_rings + 1):
        phi = max_angle * r / n_rings
        for i in range(n_around):
            a = 2 * np.pi * (i + 0.5 * (r % 2)) / n_around
            pts.append([radius * np.sin(phi) * np.cos(a), radius * np.sin(phi) * np.sin(a), radius * np.cos(phi)])
    faces = []
    for i in range(n_around):
        faces.append([0, 1 + i, 1 + (i + 1) % n_around])
    for r in range(1, n_rings):
        o0 = 1 + (r - 1) * n_around
        o1 = 1 + r * n_around
        for i in range(n_around):
            a, b = o0 + i, o0 + (i + 1) % n_around
            if r % 2 == 1:
                # next ring is rotated by half a step
                c, d = o1 + i, o1 + (i + 1) % n_around
                faces += [[a, c, b], [b, c, d]]
            else:
                c, d = o1 + (i - 1) % n_around, o1 + i
                faces += [[a, c, d], [a, d, b]]
    return TriMesh(np.array(pts), faces, "sphere_cap")


def skirt(n_around: int = 48, n_along: int = 16, waist: float = 0.16, hem: float = 0.28,
          length: float = 0.55) -> TriMesh:
    """Flared open skirt hanging along -z from the waist at z = 0."""
    th = np.linspace(0, 2 * np.pi, n_around, endpoint=False)
    pts = []
    for j in range(n_along + 1):
        s = j / n_along
        r = waist + (hem - waist) * s ** 1.2
        z = -length * s
        pts += [[r * np.cos(a), r * np.sin(a), z] for a in th]
    faces = []
    for j in range(n_along):
        for i in range(n_around):
            a = j * n_around + i
            b = j * n_around + (i + 1) % n_around
            c, d = b + n_around, a + n_around
            faces += [[a, c, b], [a, d, c]]
    return TriMesh(np.array(pts), faces, "skirt")


def wrinkle_target(mesh: TriMesh, scale: float = 1.15, amplitude: float = 0.02, n_folds: int = 6,
                   axis_waves: float = 1.5, origin=None) -> TriMesh:
    """Scale ``mesh`` uniformly about ``origin`` and add smooth radial folds.

    The fold field is amplitude * sin(n_folds * theta) * envelope(z), with the
    radial direction taken about the z axis; it vanishes at neither end so the
    open contours are wrinkled too.
    """
    x = mesh.positions
    origin = x.mean(axis=0) if origin is None else np.asarray(origin, dtype=float)
    y = origin + scale * (x - origin)
    theta = np.arctan2(y[:, 1] - origin[1], y[:, 0] - origin[0])
    z = y[:, 2]
    zmin, zmax = z.min(), z.max()
    s = (z - zmin) / max(zmax - zmin, 1e-12)
    env = 0.5 + 0.5 * np.sin(np.pi * axis_waves * s)
    radial = np.stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)], axis=1)
    disp = amplitude * (np.sin(n_folds * theta) * env)[:, None] * radial
    return TriMesh(y + disp, mesh.faces, "wrinkled_" + mesh.name)


def sinusoidal_displacement(mesh: TriMesh, amplitude: float = 0.02, waves: float = 2.0) -> TriMesh:
    """Smooth displacement along vertex normals with a sinusoidal profile."""
    from .mesh import vertex_normals

    x = mesh.positions
    lo, hi = x.min(axis=0), x.max(axis=0)
    u = (x - lo) / np.maximum(hi - lo, 1e-12)
    field = np.sin(2 * np.pi * waves * u[:, 0]) * np.cos(2 * np.pi * waves * u[:, 1]) * np.cos(np.pi * u[:, 2])
    return mesh.with_positions(x + amplitude * field[:, None] * vertex_normals(mesh), "displaced_" + mesh.name)


def random_mesh(n_faces: int = 10, seed: int = 0) -> TriMesh:
    """Jittered, randomly bent grid with roughly ``n_faces`` faces."""
    rng = np.random.default_rng(seed)
    nx = max(1, int(round(np.sqrt(n_faces / 2))))
    ny = max(1, int(np.ceil(n_faces / (2 * nx))))
    g = grid(nx, ny, size=(0.3, 0.3), jitter=0.2, seed=seed)
    p = g.positions.copy()
    p[:, 2] = 0.03 * np.sin(7 * p[:, 0] + rng.uniform(0, 3)) * np.cos(5 * p[:, 1]) + rng.normal(0, 0.004, len(p))
    return TriMesh(p, g.faces, "random")
