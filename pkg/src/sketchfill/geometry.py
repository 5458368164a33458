"""Cubic Bezier stroke primitives and the sketch container.

Everything in this module is an immutable value; all operations are pure
functions, safe to call concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tag",
    "Point",
    "CubicBezier",
    "Stroke",
    "Sketch",
    "eval_bezier",
    "sample_stroke",
    "stroke_length",
    "partition",
    "bernstein_matrix",
    "line_to_cubic",
    "split_curve",
]


class Tag(Enum):
    """Origin of a stroke: part of the user's partial sketch, or synthesized."""

    INPUT = "input"
    GENERATED = "generated"


@dataclass(frozen=True, slots=True)
class Point:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x!r}, {self.y!r})")


@dataclass(frozen=True, slots=True)
class CubicBezier:
    p0: Point
    p1: Point
    p2: Point
    p3: Point

    @property
    def points(self) -> tuple[Point, Point, Point, Point]:
        return (self.p0, self.p1, self.p2, self.p3)

    def as_array(self) -> np.ndarray:
        """Control points as a (4, 2) float array."""
        return np.array([(p.x, p.y) for p in self.points], dtype=np.float64)

    @staticmethod
    def from_array(arr: np.ndarray) -> "CubicBezier":
        pts = [Point(float(x), float(y)) for x, y in np.asarray(arr, dtype=np.float64)]
        if len(pts) != 4:
            raise ValueError("a cubic needs exactly 4 control points")
        return CubicBezier(*pts)


@dataclass(frozen=True, slots=True)
class Stroke:
    """One cubic Bezier with width/opacity attributes and an origin tag."""

    curve: CubicBezier
    width: float
    opacity: float
    tag: Tag
    id: str

    def __post_init__(self) -> None:
        if not (math.isfinite(self.width) and self.width > 0):
            raise ValueError(f"stroke {self.id!r}: width must be positive, got {self.width!r}")
        if not (math.isfinite(self.opacity) and 0.0 <= self.opacity <= 1.0):
            raise ValueError(f"stroke {self.id!r}: opacity must be in [0, 1], got {self.opacity!r}")
        if not self.id:
            raise ValueError("stroke id must be nonempty")

    def with_tag(self, tag: Tag) -> "Stroke":
        return replace(self, tag=tag)


@dataclass(frozen=True)
class Sketch:
    """Ordered stroke collection on a fixed-size canvas.

    Control points may overshoot the canvas during optimization, but only up
    to one canvas size in each direction.
    """

    strokes: tuple[Stroke, ...]
    canvas_w: int
    canvas_h: int

    def __post_init__(self) -> None:
        if self.canvas_w <= 0 or self.canvas_h <= 0:
            raise ValueError("canvas dimensions must be positive")
        object.__setattr__(self, "strokes", tuple(self.strokes))
        seen: set[str] = set()
        for s in self.strokes:
            if s.id in seen:
                raise ValueError(f"duplicate stroke id {s.id!r}")
            seen.add(s.id)
            for p in s.curve.points:
                if not (-self.canvas_w <= p.x <= 2 * self.canvas_w and -self.canvas_h <= p.y <= 2 * self.canvas_h):
                    raise ValueError(
                        f"stroke {s.id!r}: control point ({p.x}, {p.y}) outside "
                        f"allowed overshoot region for {self.canvas_w}x{self.canvas_h} canvas"
                    )

    def __len__(self) -> int:
        return len(self.strokes)

    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.strokes)

    def with_strokes(self, strokes: Iterable[Stroke]) -> "Sketch":
        return Sketch(tuple(strokes), self.canvas_w, self.canvas_h)


def _bernstein(t: float) -> tuple[float, float, float, float]:
    u = 1.0 - t
    return (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t)


@lru_cache(maxsize=32)
def bernstein_matrix(k: int) -> np.ndarray:
    """Cubic Bernstein basis evaluated on k uniform parameters, shape (k, 4).

    Row i holds the four basis weights at t = i/(k-1).
    """
    ts = np.linspace(0.0, 1.0, k)
    u = 1.0 - ts
    m = np.stack([u**3, 3.0 * u**2 * ts, 3.0 * u * ts**2, ts**3], axis=1)
    m.setflags(write=False)
    return m


def eval_bezier(curve: CubicBezier, t: float) -> Point:
    """Evaluate the curve at parameter t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"parameter t={t!r} outside [0, 1]")
    w = _bernstein(t)
    x = sum(wi * p.x for wi, p in zip(w, curve.points))
    y = sum(wi * p.y for wi, p in zip(w, curve.points))
    return Point(x, y)


def sample_stroke(stroke: Stroke, k: int) -> list[Point]:
    """k points at uniform parameters t = i/(k-1), endpoints included."""
    if k < 2:
        raise ValueError(f"need at least 2 samples, got {k}")
    pts = bernstein_matrix(k) @ stroke.curve.as_array()
    return [Point(float(x), float(y)) for x, y in pts]


def sample_points_array(curve_array: np.ndarray, k: int) -> np.ndarray:
    """Vectorized uniform-t sampling; curve_array is (4, 2), result (k, 2)."""
    return bernstein_matrix(k) @ curve_array


def stroke_length(stroke: Stroke, segments: int = 64) -> float:
    """Polyline length over `segments` uniform-t subdivisions."""
    if segments < 1:
        raise ValueError(f"need at least 1 segment, got {segments}")
    pts = bernstein_matrix(segments + 1) @ stroke.curve.as_array()
    return float(np.sum(np.hypot(*(np.diff(pts, axis=0).T))))


def partition(sketch: Sketch) -> tuple[Sketch, Sketch]:
    """Split into (input, generated) sub-sketches, order and ids preserved."""
    inp = [s for s in sketch.strokes if s.tag is Tag.INPUT]
    gen = [s for s in sketch.strokes if s.tag is Tag.GENERATED]
    return (
        Sketch(tuple(inp), sketch.canvas_w, sketch.canvas_h),
        Sketch(tuple(gen), sketch.canvas_w, sketch.canvas_h),
    )


def line_to_cubic(a: Point, b: Point) -> CubicBezier:
    """Exact degree elevation of the segment a-b to a cubic."""
    p1 = Point(a.x + (b.x - a.x) / 3.0, a.y + (b.y - a.y) / 3.0)
    p2 = Point(a.x + 2.0 * (b.x - a.x) / 3.0, a.y + 2.0 * (b.y - a.y) / 3.0)
    return CubicBezier(a, p1, p2, b)


def _subcurve(ctrl: np.ndarray, t0: float, t1: float) -> np.ndarray:
    """Control points of the restriction to [t0, t1], via two de Casteljau splits."""

    def split_right(c: np.ndarray, t: float) -> np.ndarray:
        # right half of a split at t
        a = c[:3] * (1 - t) + c[1:] * t
        b = a[:2] * (1 - t) + a[1:] * t
        d = b[:1] * (1 - t) + b[1:] * t
        return np.vstack([d, b[1:2], a[2:3], c[3:4]])

    def split_left(c: np.ndarray, t: float) -> np.ndarray:
        a = c[:3] * (1 - t) + c[1:] * t
        b = a[:2] * (1 - t) + a[1:] * t
        d = b[:1] * (1 - t) + b[1:] * t
        return np.vstack([c[0:1], a[0:1], b[0:1], d])

    if t0 > 0.0:
        ctrl = split_right(ctrl, t0)
        t1 = (t1 - t0) / (1.0 - t0)
    if t1 < 1.0:
        ctrl = split_left(ctrl, t1)
    return ctrl


def split_curve(curve: CubicBezier, n: int) -> list[CubicBezier]:
    """n sub-cubics covering [i/n, (i+1)/n]; their union traces the original."""
    if n < 2:
        raise ValueError(f"split count must be >= 2, got {n}")
    ctrl = curve.as_array()
    return [CubicBezier.from_array(_subcurve(ctrl, i / n, (i + 1) / n)) for i in range(n)]
