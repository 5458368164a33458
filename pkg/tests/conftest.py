import numpy as np
import pytest

from sketchfill.geometry import CubicBezier, Point, Sketch, Stroke, Tag


def make_stroke(pts, width=2.0, opacity=1.0, tag=Tag.GENERATED, sid="s0"):
    return Stroke(CubicBezier.from_array(np.asarray(pts, dtype=float)), width, opacity, tag, sid)


def random_sketch(rng, n, wh, tag=Tag.GENERATED, prefix="g", spread=8.0, margin=8.0,
                  width_range=(2.5, 6.0), opacity_range=(0.3, 0.9)):
    strokes = []
    for i in range(n):
        anchor = rng.uniform(margin, wh - margin, 2)
        pts = anchor + rng.uniform(-spread, spread, (4, 2))
        strokes.append(
            Stroke(
                CubicBezier.from_array(pts),
                float(rng.uniform(*width_range)),
                float(rng.uniform(*opacity_range)),
                tag,
                f"{prefix}{i}",
            )
        )
    return Sketch(tuple(strokes), wh, wh)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
