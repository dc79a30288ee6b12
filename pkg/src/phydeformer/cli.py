"""Command-line interface: register, grade, metrics, perturb, ablate.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grading import GradingAxis, grade
from .losses import LossConfig
from .mesh import MeshError, TriMesh, load_obj, perturb_gaussian, save_obj
from .optim import NumericalFailure, OptimConfig, metrics, register
from .pipeline import VARIANTS, run_variant
from .poisson import FactorizationError

UNITS = {"m": 1.0, "cm": 0.01, "mm": 0.001}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    source: str | None = None
    target: str | None = None
    body: str | None = None
    out: str | None = None
    log: str | None = None
    grading: bool = True
    axis: tuple[float, float, float] | None = None
    units: str = "m"
    seed: int = 0
    timing: bool = False
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)

    RUN_KEYS = ("source", "target", "body", "out", "log", "grading", "axis", "units", "seed", "timing")

    @property
    def scale(self) -> float:
        return UNITS[self.units]

    def echo(self) -> dict:
        """Effective configuration for log headers (output paths omitted)."""
        d = {k: getattr(self, k) for k in ("source", "target", "body", "grading", "axis", "units", "seed")}
        d.update({f"loss.{k}": v for k, v in asdict(self.loss).items()})
        d.update({f"optim.{k}": v for k, v in asdict(self.optim).items()})
        return d


def _parse_bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _coerce(value: str, like):
    if isinstance(like, bool):
        return _parse_bool(value)
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def apply_settings(cfg: RunConfig, settings: dict[str, object]) -> RunConfig:
    """Overlay string or typed settings; unknown keys raise ConfigError."""
    loss_kw = asdict(cfg.loss)
    optim_kw = asdict(cfg.optim)
    for key, val in settings.items():
        if val is None:
            continue
        if key in ("lr",):
            key = "learning_rate"
        if key in RunConfig.RUN_KEYS:
            if key == "axis":
                val = tuple(float(t) for t in str(val).replace(",", " ").split()) if isinstance(val, str) else val
                if len(val) != 3:
                    raise ConfigError("axis needs three components")
            elif key in ("grading", "timing"):
                val = _parse_bool(val) if isinstance(val, str) else bool(val)
            elif key == "seed":
                val = int(val)
            elif key == "units" and val not in UNITS:
                raise ConfigError(f"units must be one of {sorted(UNITS)}")
            setattr(cfg, key, val)
        elif key in loss_kw:
            loss_kw[key] = _coerce(val, loss_kw[key]) if isinstance(val, str) else val
        elif key in optim_kw:
            if key == "gradient_clip":
                optim_kw[key] = None if str(val).lower() in ("none", "") else float(val)
            else:
                optim_kw[key] = _coerce(val, optim_kw[key]) if isinstance(val, str) else val
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        cfg.loss = LossConfig(**loss_kw)
        cfg.optim = OptimConfig(**optim_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.optim.seed = cfg.seed
    return cfg


def build_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        apply_settings(cfg, read_config_file(args.config))
    flags = {
        "source": getattr(args, "source", None),
        "target": getattr(args, "target", None),
        "body": getattr(args, "body", None),
        "out": getattr(args, "out", None),
        "log": getattr(args, "log", None),
        "seed": getattr(args, "seed", None),
        "iterations": getattr(args, "iterations", None),
        "learning_rate": getattr(args, "lr", None),
        "bending_mode": getattr(args, "bending_mode", None),
        "parameterization": getattr(args, "parameterization", None),
        "units": getattr(args, "units", None),
        "axis": getattr(args, "axis", None),
        "gradient_clip": getattr(args, "gradient_clip", None),
    }
    if getattr(args, "no_grading", False):
        flags["grading"] = False
    if getattr(args, "timing", False):
        flags["timing"] = True
    if getattr(args, "early_stop", False):
        flags["early_stop"] = True
    return apply_settings(cfg, flags)


def _load(path, scale: float, what: str) -> TriMesh:
    if path is None:
        raise ConfigError(f"missing --{what}")
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} file not found: {p}")
    m = load_obj(p)
    if scale != 1.0:
        m = m.with_positions(m.positions * scale)
    return m


def _save(mesh: TriMesh, path, scale: float) -> None:
    if scale != 1.0:
        mesh = mesh.with_positions(mesh.positions / scale)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_obj(mesh, path)


def _axis(cfg: RunConfig, source: TriMesh):
    if cfg.axis is None:
        return None
    return GradingAxis(source.positions.mean(axis=0), cfg.axis)


def _lengths_to_meters(cfg: RunConfig) -> None:
    if cfg.scale != 1.0:
        cfg.loss.epsilon_collision *= cfg.scale


def cmd_register(args) -> int:
    cfg = build_config(args)
    _lengths_to_meters(cfg)
    src = _load(cfg.source, cfg.scale, "source")
    tgt = _load(cfg.target, cfg.scale, "target")
    body = _load(cfg.body, cfg.scale, "body") if cfg.body else None
    if cfg.out is None:
        raise ConfigError("missing --out")
    graded = src
    if cfg.grading:
        graded, gmap = grade(src, tgt, _axis(cfg, src))
    final, report = register(graded, tgt, body, cfg.loss, cfg.optim)
    report.config = cfg.echo()
    _save(final, cfg.out, cfg.scale)
    log = cfg.log or str(Path(cfg.out).with_suffix(".csv"))
    report.write_csv(log, timing=cfg.timing)
    summary = Path(cfg.out).with_suffix(".metrics.txt")
    summary.write_text("chamfer_x1000 = %.9g\nnormal_similarity = %.9g\niterations = %d\nfactorizations = %d\n" % (
        report.metrics["chamfer_x1000"], report.metrics["normal_similarity"], len(report.rows),
        report.factorizations))
    print("%.6f %.6f" % (report.metrics["chamfer_x1000"], report.metrics["normal_similarity"]))
    return 0


def cmd_grade(args) -> int:
    cfg = build_config(args)
    src = _load(cfg.source, cfg.scale, "source")
    tgt = _load(cfg.target, cfg.scale, "target")
    if cfg.out is None:
        raise ConfigError("missing --out")
    graded, gmap = grade(src, tgt, _axis(cfg, src))
    _save(graded, cfg.out, cfg.scale)
    map_path = args.grading_out or str(Path(cfg.out).with_suffix(".grading.txt"))
    Path(map_path).write_text(gmap.to_text())
    return 0


def cmd_metrics(args) -> int:
    scale = UNITS[args.units or "m"]
    a = _load(args.a, scale, "a")
    b = _load(args.b, scale, "b")
    cd, ns = metrics(a, b)
    print("%.6f %.6f" % (cd, ns))
    return 0


def cmd_perturb(args) -> int:
    cfg = build_config(args)
    src = _load(cfg.source, cfg.scale, "source")
    if cfg.out is None:
        raise ConfigError("missing --out")
    if args.sigma < 0:
        raise ConfigError("--sigma must be >= 0")
    noisy = perturb_gaussian(src, args.sigma * cfg.scale, cfg.seed)
    _save(noisy, cfg.out, cfg.scale)
    return 0


def format_table(rows) -> str:
    lines = ["%-20s %14s %18s" % ("variant", "chamfer_x1000", "normal_similarity")]
    lines += ["%-20s %14.6f %18.6f" % r for r in rows]
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    _lengths_to_meters(cfg)
    src = _load(cfg.source, cfg.scale, "source")
    tgt = _load(cfg.target, cfg.scale, "target")
    body = _load(cfg.body, cfg.scale, "body") if cfg.body else None
    names = [v.strip() for v in args.only.split(",")] if args.only else list(VARIANTS)
    for n in names:
        if n not in VARIANTS:
            raise ConfigError(f"unknown variant {n!r}; choose from {', '.join(VARIANTS)}")
    rows = []
    for n in names:
        res = run_variant(n, src, tgt, body, cfg.loss, cfg.optim, _axis(cfg, src))
        rows.append((n, res.report.metrics["chamfer_x1000"], res.report.metrics["normal_similarity"]))
    table = format_table(rows)
    if cfg.out:
        Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.out).write_text(table)
    sys.stdout.write(table)
    return 0


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--source", help="source / template OBJ")
    p.add_argument("--target", help="target OBJ")
    p.add_argument("--body", help="body OBJ for the collision term")
    p.add_argument("--out", help="output path")
    p.add_argument("--log", help="CSV log path (default: <out>.csv)")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-grading", action="store_true", help="skip the contour grading stage")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--bending-mode", choices=["rest_relative", "absolute"])
    p.add_argument("--parameterization", choices=["jacobian", "vertex_displacement"])
    p.add_argument("--gradient-clip", type=float)
    p.add_argument("--units", choices=sorted(UNITS))
    p.add_argument("--axis", help="grading axis direction 'x,y,z' (default: principal axis)")
    p.add_argument("--timing", action="store_true", help="record wall time in the CSV log")
    p.add_argument("--early-stop", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phydeformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="grade then refine a template onto a target")
    _shared(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("grade", help="contour grading only")
    _shared(p)
    p.add_argument("--grading-out", help="grading map text path (default: <out>.grading.txt)")
    p.set_defaults(func=cmd_grade)

    p = sub.add_parser("metrics", help="Chamfer x1000 and normal similarity between two meshes")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--units", choices=sorted(UNITS))
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("perturb", help="add Gaussian vertex noise")
    _shared(p)
    p.add_argument("--sigma", type=float, required=True, help="standard deviation (in --units)")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("ablate", help="run ablation variants and print a table")
    _shared(p)
    p.add_argument("--only", help="comma-separated subset of: " + ", ".join(VARIANTS))
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MeshError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalFailure, FactorizationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
