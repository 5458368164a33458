"""Stroke initialization and the Adam loop over generated stroke parameters.

Each generated stroke carries 10 parameters: 8 control-point coordinates,
width, opacity. Learning rates are per group because the scales differ by
orders of magnitude (pixels vs. unit interval). After every step widths and
opacities are clamped to their valid ranges and positions to the sketch's
allowed overshoot region.
"""
from __future__ import annotations

import io
import statistics
from dataclasses import dataclass, field

import numpy as np

from . import raster
from .errors import NoFreeSpaceError, NonFiniteGradientError, SketchfillError
from .geometry import CubicBezier, Sketch, Stroke, Tag
from .objective import OVERLAP_SAMPLES, LossBreakdown, LossWeights, evaluate_objective
from .perceptual import PerceptualBackend
from .raster import CanvasSpec, MaskGrid, RasterImage

__all__ = [
    "OptimizerConfig",
    "AdamState",
    "OptimizationResult",
    "init_strokes",
    "adam_step",
    "optimize",
    "trace_to_csv",
]

INIT_DISC_RADIUS = 8.0
WIDTH_BOUNDS = (0.1, 20.0)
OPACITY_BOUNDS = (0.0, 1.0)
FALLBACK_WIDTH = 2.0


@dataclass(frozen=True)
class OptimizerConfig:
    n_strokes: int = 512
    iterations: int = 1000
    lr_position: float = 0.8
    lr_width: float = 0.02
    lr_opacity: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    rng_seed: int = 0
    snapshot_every: int = 0
    overlap_samples: int = OVERLAP_SAMPLES
    aa_band: float = 1.0

    def __post_init__(self) -> None:
        if self.n_strokes < 1 or self.iterations < 0:
            raise ValueError("stroke count must be positive and iterations nonnegative")
        if min(self.lr_position, self.lr_width, self.lr_opacity) <= 0:
            raise ValueError("learning rates must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.epsilon <= 0 or self.aa_band <= 0:
            raise ValueError("epsilon and aa_band must be positive")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def zeros(n: int) -> "AdamState":
        return AdamState(np.zeros(n), np.zeros(n), 0)


@dataclass(frozen=True)
class OptimizationResult:
    sketch: Sketch
    trace: list[LossBreakdown]
    snapshots: list[Sketch]
    error: str | None = None


def _unique_prefix(taken: set[str], base: str = "gen") -> str:
    prefix = base
    while any(t.startswith(prefix + "_") for t in taken):
        prefix += "g"
    return prefix


def init_strokes(
    n: int,
    mask: MaskGrid,
    spec: CanvasSpec,
    seed: int,
    input_widths: list[float] | None = None,
    id_prefix: str = "gen",
) -> Sketch:
    """n generated strokes anchored uniformly on mask-free pixels.

    Control points are the anchor plus independent offsets uniform in an
    8 px disc; width starts at the median input stroke width (2.0 when there
    are no input strokes), opacity at 1.0. Deterministic for a fixed seed.
    """
    if n < 1:
        raise ValueError("need at least one stroke")
    free = np.flatnonzero(mask.binary.ravel() == 0)
    if free.size == 0:
        raise NoFreeSpaceError("mask covers every pixel; nowhere to anchor new strokes")
    rng = np.random.default_rng(seed)
    picks = free[rng.integers(0, free.size, size=n)]
    ys, xs = np.divmod(picks, mask.width)
    anchors = np.stack([xs + 0.5, ys + 0.5], axis=1).astype(np.float64)

    radii = INIT_DISC_RADIUS * np.sqrt(rng.random((n, 4)))
    angles = 2.0 * np.pi * rng.random((n, 4))
    offsets = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=2)  # (n, 4, 2)
    ctrl = anchors[:, None, :] + offsets
    ctrl[..., 0] = np.clip(ctrl[..., 0], -spec.width, 2.0 * spec.width)
    ctrl[..., 1] = np.clip(ctrl[..., 1], -spec.height, 2.0 * spec.height)

    width = statistics.median(input_widths) if input_widths else FALLBACK_WIDTH
    strokes = [
        Stroke(CubicBezier.from_array(ctrl[i]), float(width), 1.0, Tag.GENERATED, f"{id_prefix}_{i:04d}")
        for i in range(n)
    ]
    return Sketch(tuple(strokes), spec.width, spec.height)


def adam_step(
    state: AdamState,
    params: np.ndarray,
    grads: np.ndarray,
    config: OptimizerConfig,
    lrs: np.ndarray | float,
    clamp_lo: np.ndarray | None = None,
    clamp_hi: np.ndarray | None = None,
    labels: list[str] | None = None,
) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; pure, returns fresh state and params."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("params, grads and state must share shape")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        i = int(bad[0])
        label = labels[i] if labels is not None else f"index {i}"
        raise NonFiniteGradientError(label)
    t = state.t + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * grads
    v = config.beta2 * state.v + (1.0 - config.beta2) * grads * grads
    m_hat = m / (1.0 - config.beta1**t)
    v_hat = v / (1.0 - config.beta2**t)
    new_params = params - lrs * m_hat / (np.sqrt(v_hat) + config.epsilon)
    if clamp_lo is not None:
        new_params = np.maximum(new_params, clamp_lo)
    if clamp_hi is not None:
        new_params = np.minimum(new_params, clamp_hi)
    return AdamState(m, v, t), new_params


def _pack(strokes: list[Stroke]) -> np.ndarray:
    out = np.empty(len(strokes) * 10, dtype=np.float64)
    for i, s in enumerate(strokes):
        out[10 * i : 10 * i + 8] = s.curve.as_array().ravel()
        out[10 * i + 8] = s.width
        out[10 * i + 9] = s.opacity
    return out


def _unpack(params: np.ndarray, template: list[Stroke]) -> list[Stroke]:
    out = []
    for i, s in enumerate(template):
        block = params[10 * i : 10 * i + 10]
        curve = CubicBezier.from_array(block[:8].reshape(4, 2))
        out.append(Stroke(curve, float(block[8]), float(block[9]), Tag.GENERATED, s.id))
    return out


def _param_vectors(n: int, config: OptimizerConfig, spec: CanvasSpec):
    lrs = np.empty(10 * n)
    lo = np.empty(10 * n)
    hi = np.empty(10 * n)
    for i in range(n):
        b = 10 * i
        lrs[b : b + 8] = config.lr_position
        lrs[b + 8] = config.lr_width
        lrs[b + 9] = config.lr_opacity
        lo[b : b + 8 : 2] = -spec.width
        hi[b : b + 8 : 2] = 2.0 * spec.width
        lo[b + 1 : b + 8 : 2] = -spec.height
        hi[b + 1 : b + 8 : 2] = 2.0 * spec.height
        lo[b + 8], hi[b + 8] = WIDTH_BOUNDS
        lo[b + 9], hi[b + 9] = OPACITY_BOUNDS
    return lrs, lo, hi


def optimize(
    input_sketch: Sketch,
    guide: RasterImage,
    mask: MaskGrid,
    config: OptimizerConfig,
    backend: PerceptualBackend,
    initial: Sketch | None = None,
) -> OptimizationResult:
    """Initialize strokes, then run the Adam loop on generated parameters only.

    ``initial`` optionally supplies the starting generated strokes instead of
    calling init_strokes (used by warm starts and penalty experiments).
    """
    if any(s.tag is not Tag.INPUT for s in input_sketch.strokes):
        raise ValueError("optimize expects every input stroke to be tagged as input")
    spec = CanvasSpec(input_sketch.canvas_w, input_sketch.canvas_h, aa_band=config.aa_band)
    if (guide.width, guide.height) != (spec.width, spec.height):
        raise ValueError("guide image must match the canvas dimensions")

    if initial is None:
        prefix = _unique_prefix(set(input_sketch.ids()))
        widths = [s.width for s in input_sketch.strokes]
        generated = init_strokes(config.n_strokes, mask, spec, config.rng_seed, widths, id_prefix=prefix)
    else:
        if any(s.tag is not Tag.GENERATED for s in initial.strokes):
            raise ValueError("initial strokes must be tagged as generated")
        generated = initial
    gen_strokes = list(generated.strokes)
    labels = [s.id for s in gen_strokes for _ in range(10)]

    params = _pack(gen_strokes)
    lrs, lo, hi = _param_vectors(len(gen_strokes), config, spec)
    state = AdamState.zeros(params.size)

    input_base = raster.forward_base(input_sketch, spec, raster.SEGMENTS_OPT)
    guide_features = backend.embed(guide) if getattr(backend, "supports_adjoint", False) else None

    trace: list[LossBreakdown] = []
    snapshots: list[Sketch] = []

    def combined(gen: list[Stroke]) -> Sketch:
        return Sketch(tuple(input_sketch.strokes) + tuple(gen), spec.width, spec.height)

    current = combined(gen_strokes)
    try:
        for it in range(config.iterations):
            breakdown, grads = evaluate_objective(
                current,
                guide,
                mask,
                config.weights,
                backend,
                spec,
                k=config.overlap_samples,
                want_gradients=True,
                input_base=input_base,
                guide_features=guide_features,
            )
            assert grads is not None
            n_in = len(input_sketch.strokes)
            flat = np.concatenate(
                [
                    np.concatenate([grads.points[n_in + j].ravel(), [grads.width[n_in + j]], [grads.opacity[n_in + j]]])
                    for j in range(len(gen_strokes))
                ]
            )
            state, params = adam_step(state, params, flat, config, lrs, lo, hi, labels)
            gen_strokes = _unpack(params, gen_strokes)
            current = combined(gen_strokes)
            trace.append(breakdown)
            if config.snapshot_every and (it + 1) % config.snapshot_every == 0:
                snapshots.append(current)
    except SketchfillError as exc:
        return OptimizationResult(current, trace, snapshots, error=str(exc))
    return OptimizationResult(current, trace, snapshots)


def trace_to_csv(trace: list[LossBreakdown]) -> str:
    buf = io.StringIO()
    buf.write("iteration,similarity_term,perceptual_term,overlap_term,overlap_count,total\n")
    for i, row in enumerate(trace):
        buf.write(
            f"{i},{row.similarity_term!r},{row.perceptual_term!r},{row.overlap_term!r},"
            f"{row.overlap_count},{row.total!r}\n"
        )
    return buf.getvalue()
