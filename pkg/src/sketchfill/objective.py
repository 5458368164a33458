"""Completion objective: visual alignment to the guidance image plus an
overlap penalty keeping generated strokes off the input strokes.

The overlap penalty exists in two forms: the exact count of stroke sample
points landing on set mask pixels (reported, not differentiable) and the sum
of the blurred mask field bilinearly interpolated at the sample points (the
differentiable surrogate actually driving gradients).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import raster
from .errors import BackendCapabilityError
from .geometry import Sketch, Tag, bernstein_matrix, partition
from .perceptual import PerceptualBackend, cosine_similarity
from .raster import CanvasSpec, MaskGrid, RasterImage, StrokeGradients

__all__ = [
    "OVERLAP_SAMPLES",
    "LossWeights",
    "LossBreakdown",
    "embedding_similarity",
    "overlap_penalty",
    "total_objective",
    "objective_gradients",
    "evaluate_objective",
]

# Sample points per stroke for the overlap terms.
OVERLAP_SAMPLES = 10


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.5

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.alpha == 0 and self.beta == 0 and self.gamma == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    similarity_term: float
    perceptual_term: float
    overlap_term: float
    total: float
    overlap_count: int


def embedding_similarity(backend: PerceptualBackend, a: RasterImage, b: RasterImage) -> float:
    """Cosine similarity of the backend embeddings of two same-size images."""
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError("images must share dimensions")
    return min(1.0, max(-1.0, cosine_similarity(backend.embed(a), backend.embed(b))))


def _sample_points(sketch: Sketch, k: int) -> np.ndarray:
    """(n*k, 2) uniform-t samples over all strokes of the sketch."""
    if len(sketch.strokes) == 0:
        return np.zeros((0, 2), dtype=np.float64)
    bm = bernstein_matrix(k)
    ctrl = np.stack([s.curve.as_array() for s in sketch.strokes])  # (n, 4, 2)
    return np.einsum("kj,njc->nkc", bm, ctrl).reshape(-1, 2)


def _bilinear(field: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values and spatial gradients of a grid field at canvas points.

    Grid values sit at pixel centers; lookups are clamped to the border band,
    where the clamped axis contributes zero gradient.
    """
    h, w = field.shape
    u_raw = pts[:, 0] - 0.5
    v_raw = pts[:, 1] - 0.5
    u = np.clip(u_raw, 0.0, w - 1.0)
    v = np.clip(v_raw, 0.0, h - 1.0)
    live_u = (u_raw > 0.0) & (u_raw < w - 1.0) if w > 1 else np.zeros(len(pts), dtype=bool)
    live_v = (v_raw > 0.0) & (v_raw < h - 1.0) if h > 1 else np.zeros(len(pts), dtype=bool)
    x0 = np.clip(np.floor(u).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(v).astype(np.int64), 0, max(h - 2, 0))
    fx = u - x0
    fy = v - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    f00 = field[y0, x0]
    f01 = field[y0, x1]
    f10 = field[y1, x0]
    f11 = field[y1, x1]
    val = (1 - fx) * (1 - fy) * f00 + fx * (1 - fy) * f01 + (1 - fx) * fy * f10 + fx * fy * f11
    dx = np.where(live_u, (1 - fy) * (f01 - f00) + fy * (f11 - f10), 0.0)
    dy = np.where(live_v, (1 - fx) * (f10 - f00) + fx * (f11 - f01), 0.0)
    return val, dx, dy


def overlap_penalty(generated: Sketch, mask: MaskGrid, k: int = OVERLAP_SAMPLES) -> tuple[int, float]:
    """(exact indicator count, differentiable surrogate) over k samples per stroke."""
    if k < 2:
        raise ValueError("need at least 2 sample points per stroke")
    if (mask.width, mask.height) != (generated.canvas_w, generated.canvas_h):
        raise ValueError("mask dimensions must match the sketch canvas")
    pts = _sample_points(generated, k)
    if len(pts) == 0:
        return 0, 0.0
    ix = np.floor(pts[:, 0]).astype(np.int64)
    iy = np.floor(pts[:, 1]).astype(np.int64)
    inside = (ix >= 0) & (ix < mask.width) & (iy >= 0) & (iy < mask.height)
    count = int(np.sum(mask.binary[iy[inside], ix[inside]] == 1))
    val, _, _ = _bilinear(mask.smooth, pts)
    return count, float(np.sum(val))


def _overlap_point_gradients(generated: Sketch, mask: MaskGrid, k: int) -> np.ndarray:
    """d(surrogate)/d(control points), shape (n, 4, 2), via Bernstein weights."""
    n = len(generated.strokes)
    grads = np.zeros((n, 4, 2), dtype=np.float64)
    if n == 0:
        return grads
    pts = _sample_points(generated, k)
    _, dx, dy = _bilinear(mask.smooth, pts)
    bm = bernstein_matrix(k)  # (k, 4)
    dxy = np.stack([dx, dy], axis=1).reshape(n, k, 2)
    grads += np.einsum("kj,nkc->njc", bm, dxy)
    return grads


def evaluate_objective(
    complete: Sketch,
    guide: RasterImage,
    mask: MaskGrid,
    weights: LossWeights,
    backend: PerceptualBackend,
    spec: CanvasSpec,
    k: int = OVERLAP_SAMPLES,
    segments: int = raster.SEGMENTS_OPT,
    want_gradients: bool = False,
    input_base: tuple[np.ndarray, np.ndarray] | None = None,
    guide_features: np.ndarray | None = None,
) -> tuple[LossBreakdown, StrokeGradients | None]:
    """Shared implementation behind total_objective and objective_gradients.

    ``input_base`` optionally reuses a precomposited input-stroke layer;
    ``guide_features`` optionally reuses the guide embedding. Both are pure
    caches and do not change results.
    """
    if (guide.width, guide.height) != (spec.width, spec.height):
        raise ValueError("guide dimensions must match the canvas spec")
    if want_gradients and not getattr(backend, "supports_adjoint", False):
        raise BackendCapabilityError(
            "backend exposes no pixel-space adjoint; it can evaluate but not drive optimization"
        )

    cache = raster._forward(complete, spec, segments, base=input_base)
    img = RasterImage(spec.width, spec.height, 1, cache.image)

    fa = backend.embed(img)
    fb = guide_features if guide_features is not None else backend.embed(guide)
    sim = cosine_similarity(fa, fb)
    similarity_term = 1.0 - sim
    if hasattr(backend, "distance_from_features"):
        perceptual_term = backend.distance_from_features(fa, fb)
    else:
        perceptual_term = backend.distance(img, guide)

    generated = partition(complete)[1]
    overlap_count, overlap_term = overlap_penalty(generated, mask, k)

    total = weights.alpha * similarity_term + weights.beta * perceptual_term + weights.gamma * overlap_term
    breakdown = LossBreakdown(similarity_term, perceptual_term, overlap_term, total, overlap_count)
    if not want_gradients:
        return breakdown, None

    # pixel adjoint of alpha*(1 - cos) + beta*dist, in feature space first
    na = float(np.linalg.norm(fa))
    nb = float(np.linalg.norm(fb))
    d_sim_df = fb / (na * nb) - (sim / (na * na)) * fa
    d_dist_df = 2.0 * (fa - fb) / fa.size
    df = weights.alpha * (-d_sim_df) + weights.beta * d_dist_df
    adjoint = backend.feature_adjoint(img, df)
    grads = raster._backward(cache, adjoint)

    if weights.gamma != 0.0 and len(generated.strokes) > 0:
        overlap_grads = _overlap_point_gradients(generated, mask, k)
        gen_ids = {s.id for s in generated.strokes}
        gi = 0
        pts = grads.points.copy()
        for i, s in enumerate(complete.strokes):
            if s.id in gen_ids and s.tag is Tag.GENERATED:
                pts[i] += weights.gamma * overlap_grads[gi]
                gi += 1
        grads = StrokeGradients(grads.ids, pts, grads.width, grads.opacity)
    return breakdown, grads


def total_objective(
    complete: Sketch,
    guide: RasterImage,
    mask: MaskGrid,
    weights: LossWeights,
    backend: PerceptualBackend,
    spec: CanvasSpec,
    k: int = OVERLAP_SAMPLES,
    segments: int = raster.SEGMENTS_OPT,
) -> LossBreakdown:
    breakdown, _ = evaluate_objective(complete, guide, mask, weights, backend, spec, k, segments)
    return breakdown


def objective_gradients(
    complete: Sketch,
    guide: RasterImage,
    mask: MaskGrid,
    weights: LossWeights,
    backend: PerceptualBackend,
    spec: CanvasSpec,
    k: int = OVERLAP_SAMPLES,
    segments: int = raster.SEGMENTS_OPT,
) -> StrokeGradients:
    _, grads = evaluate_objective(
        complete, guide, mask, weights, backend, spec, k, segments, want_gradients=True
    )
    assert grads is not None
    return grads
