import numpy as np
import pytest

from phydeformer import synthetic
from phydeformer.mesh import TriMesh

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def central_fd(f, x, h):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def hinge(angle: float) -> TriMesh:
    """Two unit right triangles sharing the edge (0,0,0)-(1,0,0), folded by ``angle``."""
    pos = np.array([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -np.cos(angle), np.sin(angle)],
    ])
    return TriMesh(pos, np.array([[0, 1, 2], [1, 0, 3]]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_tube():
    return synthetic.tube(8, 4, radius=0.2, length=0.4)


@pytest.fixture
def small_grid():
    return synthetic.grid(4, 4, size=(0.3, 0.3), jitter=0.2, seed=3)


def loss_fixture(seed: int = 0, n_around: int = 12, n_along: int = 5, epsilon: float = 0.03):
    """Small garment pair (<= 200 faces) with a body close enough to trigger collisions.

    Returns (x, rest, target_data, body, cfg) with ``x`` a random deformation of
    the source.
    """
    import warnings

    from phydeformer.losses import LossConfig, RestState, TargetData
    from phydeformer.sdf import SdfBody

    src = synthetic.skirt(n_around, n_along)
    tgt = synthetic.wrinkle_target(src, scale=1.1, amplitude=0.02)
    rng = np.random.default_rng(seed)
    x = src.positions * 1.05 + rng.normal(scale=0.01, size=src.positions.shape)
    cfg = LossConfig(epsilon_collision=epsilon, surface_samples=2.0)
    body_mesh = synthetic.icosphere(1, radius=0.17)
    body_mesh = body_mesh.with_positions(body_mesh.positions + [0.0, 0.0, -0.1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        body = SdfBody(body_mesh)
    return x, RestState.build(src, cfg, seed), TargetData(tgt, cfg, seed), body, cfg
