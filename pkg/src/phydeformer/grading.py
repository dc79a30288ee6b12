"""Coarse alignment by open-contour grading.

Boundary loops of source and target are measured along a grading axis
(principal axis of the source by default), paired by axial rank, and turned
into a piecewise-linear axial + radial scaling that is applied directly to the
source mesh.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .mesh import BoundaryLoop, MeshError, TriMesh, extract_boundary_loops


class ClosedMeshError(MeshError):
    pass


@dataclass
class GradingAxis:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        self.direction = d / np.linalg.norm(d)

    def project(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.origin) @ self.direction


def principal_axis(mesh: TriMesh) -> GradingAxis:
    """Largest-variance direction through the vertex centroid.

    The sign is fixed so the largest-magnitude component is positive.
    """
    c = mesh.positions.mean(axis=0)
    cov = np.cov((mesh.positions - c).T)
    w, v = np.linalg.eigh(cov)
    d = v[:, np.argmax(w)]
    if d[np.argmax(np.abs(d))] < 0:
        d = -d
    return GradingAxis(c, d)


@dataclass
class ContourMeasure:
    loop: BoundaryLoop
    circumference: float
    centroid: np.ndarray
    axial_coord: float


def measure_contours(mesh: TriMesh, axis: GradingAxis) -> list[ContourMeasure]:
    loops = extract_boundary_loops(mesh)
    if not loops:
        raise ClosedMeshError("closed mesh, grading skipped")
    out = []
    for lp in loops:
        p = mesh.positions[lp.vertex_ids]
        circ = float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum())
        centroid = p.mean(axis=0)
        out.append(ContourMeasure(lp, circ, centroid, float(axis.project(centroid))))
    return out


def _rank_order(measures: list[ContourMeasure]) -> list[int]:
    keys = [(m.axial_coord, m.circumference, *np.round(m.centroid, 12)) for m in measures]
    return sorted(range(len(measures)), key=lambda i: keys[i])


def pair_contours(src: list[ContourMeasure], tgt: list[ContourMeasure]) -> list[tuple[int, int]]:
    """One-to-one pairing of source and target loops by axial rank.

    With unequal counts every loop of the shorter list is matched to the loop
    of proportional rank in the longer one; leftovers are reported as warnings.
    """
    if not src or not tgt:
        raise ValueError("pair_contours needs two non-empty lists")
    rs = _rank_order(src)
    rt = _rank_order(tgt)
    swap = len(rs) > len(rt)
    short, long_ = (rt, rs) if swap else (rs, rt)
    k, n = len(short), len(long_)
    if k == n:
        picks = list(range(n))
    elif k == 1:
        # single loop: nearest axial coordinate
        lst_short = tgt if swap else src
        lst_long = src if swap else tgt
        a = lst_short[short[0]].axial_coord
        picks = [min(range(n), key=lambda r: (abs(lst_long[long_[r]].axial_coord - a), r))]
    else:
        picks = [int(round(i * (n - 1) / (k - 1))) for i in range(k)]
    pairs = []
    for i, r in enumerate(picks):
        a, b = short[i], long_[r]
        pairs.append((b, a) if swap else (a, b))
    if k != n:
        used = {long_[r] for r in picks}
        side = "source" if swap else "target"
        left = sorted(set(long_) - used)
        warnings.warn(f"{len(left)} unmatched {side} contour(s): {left}", stacklevel=2)
    return sorted(pairs)


@dataclass
class GradingMap:
    axis: GradingAxis
    knots: list[tuple[float, float, float]] = field(default_factory=list)  # (axial, axial_scale, radial_scale)

    def __post_init__(self):
        coords = [k[0] for k in self.knots]
        if any(b <= a for a, b in zip(coords, coords[1:])):
            raise ValueError("grading knots must be strictly increasing in axial coordinate")
        if any(k[1] <= 0 or k[2] <= 0 for k in self.knots):
            raise ValueError("grading scales must be positive")

    @classmethod
    def identity(cls, axis: GradingAxis) -> "GradingMap":
        return cls(axis, [(0.0, 1.0, 1.0)])

    def _arrays(self):
        k = np.asarray(self.knots, dtype=np.float64).reshape(-1, 3)
        return k[:, 0], k[:, 1], k[:, 2]

    def scales_at(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s, ax, rad = self._arrays()
        return np.interp(a, s, ax), np.interp(a, s, rad)

    def map_axial(self, a: np.ndarray) -> np.ndarray:
        """Integral of the interpolated axial scale from the axis origin to ``a``."""
        s, ax, _ = self._arrays()
        a = np.asarray(a, dtype=np.float64)
        # cumulative integral at the knots, anchored at 0 with constant extrapolation below s[0]
        seg = 0.5 * (ax[1:] + ax[:-1]) * np.diff(s)
        at_knot = ax[0] * s[0] + np.concatenate([[0.0], np.cumsum(seg)])
        out = np.empty_like(a)
        lo = a <= s[0]
        hi = a >= s[-1]
        mid = ~(lo | hi)
        out[lo] = ax[0] * a[lo]
        out[hi] = at_knot[-1] + ax[-1] * (a[hi] - s[-1])
        if mid.any():
            am = a[mid]
            k = np.clip(np.searchsorted(s, am, side="right") - 1, 0, len(s) - 2)
            t = am - s[k]
            slope = (ax[k + 1] - ax[k]) / (s[k + 1] - s[k])
            out[mid] = at_knot[k] + ax[k] * t + 0.5 * slope * t * t
        return out

    def inverse(self) -> "GradingMap":
        """Knot-wise reciprocal map.

        Exact when all knots share one axial and one radial scale. With a
        shared axial scale but varying radial scales it is exact only for
        points on the knots.
        """
        s, ax, rad = self._arrays()
        mapped = self.map_axial(s)
        return GradingMap(self.axis, [(float(m), float(1.0 / a), float(1.0 / r)) for m, a, r in zip(mapped, ax, rad)])

    def to_text(self) -> str:
        o, d = self.axis.origin, self.axis.direction
        lines = [
            "[grading]",
            "axis_origin = %.17g %.17g %.17g" % tuple(o),
            "axis_direction = %.17g %.17g %.17g" % tuple(d),
        ]
        lines += ["knot = %.17g %.17g %.17g" % k for k in self.knots]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GradingMap":
        origin = direction = None
        knots = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line or line.startswith("["):
                continue
            key, _, val = line.partition("=")
            key = key.strip()
            nums = [float(t) for t in val.split()]
            if key == "axis_origin":
                origin = nums
            elif key == "axis_direction":
                direction = nums
            elif key == "knot":
                knots.append(tuple(nums))
            else:
                raise ValueError(f"unknown grading key {key!r}")
        if origin is None or direction is None:
            raise ValueError("grading text lacks axis_origin or axis_direction")
        return cls(GradingAxis(origin, direction), knots)


def compute_grading(pairs, src_measures, tgt_measures, axis: GradingAxis) -> GradingMap:
    """Knots at the source loops' axial coordinates.

    Radial scale is the circumference ratio. Axial scale is the ratio of the
    target to source axial span around the knot (neighbouring knots on both
    sides for interior knots, one side at the ends); a single pair keeps 1.
    """
    if not pairs:
        raise ValueError("compute_grading needs at least one pair")
    rows = sorted((src_measures[i].axial_coord, tgt_measures[j].axial_coord,
                   tgt_measures[j].circumference / src_measures[i].circumference) for i, j in pairs)
    merged: list[list[float]] = []
    for s, t, r in rows:
        if merged and abs(s - merged[-1][0]) <= 1e-12:
            warnings.warn(f"contours share axial coordinate {s:.6g}; knots merged", stacklevel=2)
            m = merged[-1]
            n = m[3]
            m[1] = (m[1] * n + t) / (n + 1)
            m[2] = (m[2] * n + r) / (n + 1)
            m[3] = n + 1
        else:
            merged.append([s, t, r, 1])
    s = np.array([m[0] for m in merged])
    t = np.array([m[1] for m in merged])
    r = np.array([m[2] for m in merged])
    k = len(s)
    if k == 1:
        ax = np.ones(1)
    else:
        lo = np.maximum(np.arange(k) - 1, 0)
        hi = np.minimum(np.arange(k) + 1, k - 1)
        ax = (t[hi] - t[lo]) / (s[hi] - s[lo])
        if np.any(ax <= 0):
            warnings.warn("non-positive axial scale from contour order; clamped", stacklevel=2)
            ax = np.maximum(ax, 1e-3)
    return GradingMap(axis, [(float(a), float(b), float(c)) for a, b, c in zip(s, ax, r)])


def apply_grading(mesh: TriMesh, grading: GradingMap) -> TriMesh:
    """Scale each vertex along the axis (integrated axial scale) and radially about it."""
    ax = grading.axis
    rel = mesh.positions - ax.origin
    a = rel @ ax.direction
    radial = rel - a[:, None] * ax.direction
    _, rad_scale = grading.scales_at(a)
    a_new = grading.map_axial(a)
    # written as a displacement so unit scales leave positions bit-identical
    pos = mesh.positions + (a_new - a)[:, None] * ax.direction + (rad_scale - 1.0)[:, None] * radial
    return mesh.with_positions(pos, mesh.name)


def grade(source: TriMesh, target: TriMesh, axis: GradingAxis | None = None) -> tuple[TriMesh, GradingMap]:
    """Full grading stage; a closed source or target yields the identity map with a warning."""
    axis = principal_axis(source) if axis is None else axis
    try:
        sm = measure_contours(source, axis)
        tm = measure_contours(target, axis)
    except ClosedMeshError as exc:
        warnings.warn(str(exc), stacklevel=2)
        g = GradingMap.identity(axis)
        return apply_grading(source, g), g
    g = compute_grading(pair_contours(sm, tm), sm, tm, axis)
    return apply_grading(source, g), g
