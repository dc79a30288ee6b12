"""Registration driver: Adam over a Jacobian field (plus a global translation),
the vertex-displacement ablation, per-iteration logging and final metrics."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import poisson
from .losses import (TERMS, LossConfig, RestState, TargetData, chamfer, find_correspondences, term_weights,
                     total_loss)
from .mesh import TriMesh, perturb_gaussian, vertex_normals
from .sdf import SdfBody

PARAMETERIZATIONS = ("jacobian", "vertex_displacement")
CSV_HEADER = "iter,total,rec,contour,normal,strain,bending,collision,time_ms"


class NumericalFailure(RuntimeError):
    """Non-finite loss or gradient during registration.

    Carries the partial report and the last finite mesh so callers can inspect them.
    """

    def __init__(self, message, iteration=None, report=None, mesh=None):
        super().__init__(message)
        self.iteration = iteration
        self.report = report
        self.mesh = mesh


class NonFiniteGradientError(NumericalFailure):
    pass


@dataclass
class OptimConfig:
    learning_rate: float = 0.002
    iterations: int = 1500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    parameterization: str = "jacobian"
    gradient_clip: float | None = None
    seed: int = 0
    early_stop: bool = False
    early_stop_window: int = 50
    early_stop_tol: float = 1e-7
    outlier_window: int = 50
    outlier_factor: float = 10.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
        if self.gradient_clip is not None and self.gradient_clip <= 0:
            raise ValueError("gradient_clip must be > 0")
        if self.outlier_window < 1 or self.outlier_factor <= 0:
            raise ValueError("outlier_window must be >= 1 and outlier_factor > 0")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class OptimState:
    """Adam state over a list of parameter arrays."""

    params: list[np.ndarray]
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    iter: int = 0

    @classmethod
    def create(cls, params) -> "OptimState":
        params = [np.array(p, dtype=np.float64) for p in params]
        return cls(params, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(state: OptimState, grads, cfg: OptimConfig) -> OptimState:
    """One bias-corrected Adam update; returns a new state."""
    if len(grads) != len(state.params):
        raise ValueError("gradient list does not match parameters")
    for g, p in zip(grads, state.params):
        if np.shape(g) != p.shape:
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient at iteration {state.iter}", state.iter)
    t = state.iter + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    new_p, new_m, new_v = [], [], []
    for p, m, v, g in zip(state.params, state.first_moment, state.second_moment, grads):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        new_p.append(p - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps))
        new_m.append(m)
        new_v.append(v)
    return OptimState(new_p, new_m, new_v, t)


@dataclass
class RegistrationReport:
    rows: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    factorizations: int = 0
    gradient_events: list[dict] = field(default_factory=list)
    outlier_ratios: list[float] = field(default_factory=list)
    stopped_early: bool = False

    def csv_lines(self, timing: bool = False) -> list[str]:
        out = [f"# {k} = {v}" for k, v in self.config.items()]
        out.append(CSV_HEADER)
        for r in self.rows:
            vals = [repr(float(r[k])) for k in ("total", *TERMS)]
            t = repr(float(r["time_ms"])) if timing else "0"
            out.append(",".join([str(r["iter"]), *vals, t]))
        if self.metrics:
            out.append("# metrics chamfer_x1000=%.9g normal_similarity=%.9g"
                       % (self.metrics["chamfer_x1000"], self.metrics["normal_similarity"]))
        return out

    def write_csv(self, path, timing: bool = False) -> None:
        with open(path, "w") as fh:
            fh.write("\n".join(self.csv_lines(timing)) + "\n")


def metrics(X: TriMesh, T: TriMesh) -> tuple[float, float]:
    """(Chamfer x 1000 on vertex sets, half the two-way normal cosine distance)."""
    cd, _ = chamfer(X.positions, T.positions)
    nx = vertex_normals(X)
    nt = vertex_normals(T)
    from scipy.spatial import cKDTree

    _, x2t = cKDTree(T.positions).query(X.positions)
    _, t2x = cKDTree(X.positions).query(T.positions)
    ln = (1.0 - (nx * nt[x2t]).sum(axis=1)).mean() + (1.0 - (nt * nx[t2x]).sum(axis=1)).mean()
    return float(cd * 1000.0), float(0.5 * ln)


class GradientMonitor:
    """Flags per-entity gradient outliers.

    An entity (face in Jacobian mode, vertex in displacement mode) is an
    outlier when its gradient norm exceeds ``factor`` times its own median over
    the previous ``window`` iterations. History restarts whenever the term
    weights change, so a scheduled term switching on is not an outlier.
    """

    def __init__(self, window: int = 50, factor: float = 10.0, min_history: int = 5):
        self.window = window
        self.factor = factor
        self.min_history = min_history
        self.history: list[np.ndarray] = []

    def reset(self) -> None:
        self.history = []

    def update(self, grad: np.ndarray) -> tuple[float, int]:
        """Record one gradient; returns (largest ratio to own median, entity index)."""
        norms = np.linalg.norm(grad.reshape(len(grad), -1), axis=1)
        if not np.isfinite(norms).all():
            return float("inf"), int(np.argmin(np.isfinite(norms)))
        ratio, entity = 0.0, -1
        if len(self.history) >= self.min_history:
            med = np.median(np.asarray(self.history), axis=0)
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(med > 0, norms / med, np.where(norms > 0, np.inf, 0.0))
            entity = int(np.argmax(r))
            ratio = float(r[entity])
        self.history.append(norms)
        if len(self.history) > self.window:
            self.history.pop(0)
        return ratio, entity


def _clip(grads, max_norm):
    total = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm is None or not np.isfinite(total) or total <= max_norm:
        return grads
    return [g * (max_norm / total) for g in grads]


def register(source: TriMesh, target: TriMesh, body: TriMesh | SdfBody | None = None,
             loss_cfg: LossConfig | None = None, opt_cfg: OptimConfig | None = None,
             rest: RestState | None = None, callback=None) -> tuple[TriMesh, RegistrationReport]:
    """Deform ``source`` (already graded) towards ``target``.

    Per iteration: positions from the current parameters, correspondence
    refresh, objective and position gradient, pull-back to the parameters,
    Adam step. The returned mesh always carries the source face list.
    """
    loss_cfg = loss_cfg or LossConfig()
    opt_cfg = opt_cfg or OptimConfig()
    if isinstance(body, TriMesh):
        body = SdfBody(body)
    rest = RestState.build(source, loss_cfg, seed=opt_cfg.seed) if rest is None else rest
    tdata = TargetData(target, loss_cfg, seed=opt_cfg.seed)
    offset = target.positions.mean(axis=0) - source.positions.mean(axis=0)
    jac_mode = opt_cfg.parameterization == "jacobian"

    report = RegistrationReport(config={**{f"loss.{k}": v for k, v in asdict(loss_cfg).items()},
                                        **{f"optim.{k}": v for k, v in asdict(opt_cfg).items()}})
    if jac_mode:
        sys = poisson.factorize(source)
        report.factorizations = 1
        state = OptimState.create([poisson.jacobians_from_positions(sys, source.positions), offset])

        def positions(st):
            return poisson.solve(sys, st.params[0], st.params[1])
    else:
        state = OptimState.create([np.zeros_like(source.positions) + offset])

        def positions(st):
            return source.positions + st.params[0]

    monitor = GradientMonitor(opt_cfg.outlier_window, opt_cfg.outlier_factor)
    weights = None
    last_good = source.with_positions(positions(state))
    history = []
    for it in range(opt_cfg.iterations):
        t0 = time.perf_counter()
        x = positions(state)
        corr = find_correspondences(x, rest, tdata, it)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            value, gx, parts = total_loss(x, tdata, rest, body, loss_cfg, it, corr)
        if not np.isfinite(value):
            report.gradient_events.append({"iter": it, "kind": "non-finite loss"})
            raise NumericalFailure(f"non-finite loss at iteration {it}", it, report, last_good)
        last_good = source.with_positions(x)
        if jac_mode:
            dJ, dt = poisson.adjoint(sys, gx)
            grads = [dJ, dt]
        else:
            grads = [gx]
        w_now = term_weights(loss_cfg, it)
        if w_now != weights:
            monitor.reset()
            weights = w_now
        ratio, entity = monitor.update(grads[0])
        report.outlier_ratios.append(ratio)
        if not all(np.isfinite(g).all() for g in grads):
            report.gradient_events.append({"iter": it, "kind": "non-finite", "entity": entity})
        elif ratio > opt_cfg.outlier_factor:
            report.gradient_events.append({"iter": it, "kind": "outlier", "entity": entity, "ratio": ratio})
        grads = _clip(grads, opt_cfg.gradient_clip)
        try:
            state = adam_step(state, grads, opt_cfg)
        except NonFiniteGradientError as exc:
            raise NonFiniteGradientError(f"non-finite gradient at iteration {it}", it, report, last_good) from exc
        row = {"iter": it, "total": value, **parts, "time_ms": (time.perf_counter() - t0) * 1000.0}
        report.rows.append(row)
        history.append(value)
        if callback is not None:
            callback(it, x, row)
        w = opt_cfg.early_stop_window
        if opt_cfg.early_stop and it >= w and it >= loss_cfg.strain_start_iter:
            prev = history[-w - 1]
            if prev - value < opt_cfg.early_stop_tol * abs(prev):
                report.stopped_early = True
                break

    final = source.with_positions(positions(state), name=f"registered_{source.name}")
    if not np.isfinite(final.positions).all():
        raise NumericalFailure("non-finite final positions", opt_cfg.iterations, report, last_good)
    cd, ns = metrics(final, target)
    report.metrics = {"chamfer_x1000": cd, "normal_similarity": ns}
    return final, report


def dihedral_deviation_variance(mesh: TriMesh, reference: TriMesh) -> float:
    """Variance of (dihedral - reference dihedral) over interior edges; a roughness measure."""
    from .mesh import dihedral_angles, edge_topology

    topo = edge_topology(reference)
    d = dihedral_angles(mesh, topo) - dihedral_angles(reference, topo)
    d = (d + np.pi) % (2 * np.pi) - np.pi
    return float(np.var(d))


def run_noise_study(source: TriMesh, target: TriMesh, sigmas, loss_cfg: LossConfig | None = None,
                    opt_cfg: OptimConfig | None = None, body=None, noise_seed: int | None = None,
                    prepare=None) -> list[tuple[float, float, float]]:
    """Register against noisy copies of ``target``; metrics are taken against the clean target.

    ``prepare(source, target) -> source`` optionally runs a pre-alignment
    (e.g. grading) against each noisy target.
    """
    opt_cfg = opt_cfg or OptimConfig()
    seed = opt_cfg.seed if noise_seed is None else noise_seed
    table = []
    for sigma in sigmas:
        noisy = perturb_gaussian(target, float(sigma), seed)
        src = source if prepare is None else prepare(source, noisy)
        final, _ = register(src, noisy, body, loss_cfg, opt_cfg)
        cd, ns = metrics(final, target)
        table.append((float(sigma), cd, ns))
    return table
