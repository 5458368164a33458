"""Prompt-guided completion of partial vector sketches.

Stage 1 optimizes new cubic-Bezier strokes against a guidance image while
penalizing overlap with the input strokes; stage 2 adjusts the new strokes'
style through an interpreted adjustment-program loop.
"""

from .geometry import CubicBezier, Point, Sketch, Stroke, Tag
from .svgio import parse_svg, serialize_svg

__all__ = [
    "CubicBezier",
    "Point",
    "Sketch",
    "Stroke",
    "Tag",
    "parse_svg",
    "serialize_svg",
]

__version__ = "0.1.0"
