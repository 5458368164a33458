"""Software rasterizer for width/opacity strokes with analytic gradients.

Coverage model: each stroke deposits ink ``cov = opacity * ramp(d)`` where d
is the distance from the pixel center to the stroke's polyline approximation
and ramp is a cubic-hermite falloff, 1 inside ``w/2 - aa`` and 0 outside
``w/2 + aa``. Pixels composite multiplicatively over a bright background:

    intensity = background * prod_strokes (1 - cov_s)

which is order-independent, so images are bit-identical under stroke
permutation (factors are multiplied in id-sorted order). Gradients of
``sum(adjoint * intensity)`` w.r.t. the ten stroke parameters flow through
the nearest polyline segment's foot point and the Bernstein weights of the
polyline vertices.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from PIL import Image
from scipy import ndimage

from ._kernels import fill_distance_patch
from .geometry import Sketch, Stroke, Tag, bernstein_matrix

__all__ = [
    "CanvasSpec",
    "RasterImage",
    "StrokeGradients",
    "MaskGrid",
    "distance_to_stroke",
    "render",
    "render_two_tone",
    "render_with_gradients",
    "build_mask",
    "mask_from_binary",
    "hard_coverage",
    "save_png",
    "load_png",
]

# Polyline resolutions: coarse while optimizing, fine for final output.
SEGMENTS_OPT = 16
SEGMENTS_FINAL = 64

_DIST_SENTINEL = 1e18


@dataclass(frozen=True)
class CanvasSpec:
    width: int
    height: int
    background: float = 1.0
    aa_band: float = 1.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("canvas dimensions must be positive")
        if self.aa_band <= 0:
            raise ValueError("aa_band must be positive")


@dataclass(frozen=True)
class RasterImage:
    """Row-major intensities in [0, 1]; data shape (h, w) or (h, w, 3)."""

    width: int
    height: int
    channels: int
    data: np.ndarray

    def __post_init__(self) -> None:
        expected = (self.height, self.width) if self.channels == 1 else (self.height, self.width, self.channels)
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if self.data.shape != expected:
            raise ValueError(f"data shape {self.data.shape} does not match {expected}")
        lo, hi = float(self.data.min(initial=0.0)), float(self.data.max(initial=0.0))
        if lo < -1e-9 or hi > 1.0 + 1e-9:
            raise ValueError(f"intensities outside [0, 1]: min {lo}, max {hi}")

    @staticmethod
    def from_array(data: np.ndarray) -> "RasterImage":
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 2:
            h, w = data.shape
            return RasterImage(w, h, 1, data)
        h, w, c = data.shape
        return RasterImage(w, h, c, data)


@dataclass(frozen=True)
class StrokeGradients:
    """Per-stroke gradients aligned with the rendered sketch's stroke order."""

    ids: tuple[str, ...]
    points: np.ndarray  # (n, 4, 2)
    width: np.ndarray  # (n,)
    opacity: np.ndarray  # (n,)

    def for_stroke(self, stroke_id: str) -> tuple[np.ndarray, float, float]:
        i = self.ids.index(stroke_id)
        return self.points[i], float(self.width[i]), float(self.opacity[i])


@dataclass(frozen=True)
class MaskGrid:
    """Input-stroke occupancy: exact binary grid plus a blurred penalty field."""

    binary: np.ndarray  # (h, w) uint8 of {0, 1}
    smooth: np.ndarray  # (h, w) float64 in [0, 1]
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.binary.shape != (self.height, self.width) or self.smooth.shape != (self.height, self.width):
            raise ValueError("mask grids must share the declared dimensions")
        if float(self.smooth.min(initial=0.0)) < 0 or float(self.smooth.max(initial=0.0)) > 1.0 + 1e-12:
            raise ValueError("smooth field must stay within [0, 1]")


def _polyline(stroke: Stroke, segments: int) -> np.ndarray:
    return bernstein_matrix(segments + 1) @ stroke.curve.as_array()


def distance_to_stroke(pt, stroke: Stroke, segments: int = SEGMENTS_FINAL) -> float:
    """Min Euclidean distance from pt to the polyline approximation."""
    if segments < 1:
        raise ValueError("segments must be >= 1")
    verts = _polyline(stroke, segments)
    a, b = verts[:-1], verts[1:]
    ab = b - a
    l2 = np.einsum("ij,ij->i", ab, ab)
    p = np.array([pt.x, pt.y], dtype=np.float64)
    s = np.where(l2 < 1e-24, 0.0, np.clip(np.einsum("ij,ij->i", p - a, ab) / np.where(l2 < 1e-24, 1.0, l2), 0.0, 1.0))
    foot = a + s[:, None] * ab
    return float(np.min(np.hypot(*(p - foot).T)))


@dataclass
class _Patch:
    x0: int
    y0: int
    dist: np.ndarray
    seg: np.ndarray
    foot: np.ndarray
    factor: np.ndarray


@dataclass
class _ForwardCache:
    sketch: Sketch
    spec: CanvasSpec
    segments: int
    order: list[int]
    patches: list[_Patch | None]
    prodnz: np.ndarray
    zcount: np.ndarray
    image: np.ndarray


def _patch_window(verts: np.ndarray, reach: float, spec: CanvasSpec) -> tuple[int, int, int, int] | None:
    x0 = int(np.floor(verts[:, 0].min() - reach - 0.5))
    x1 = int(np.ceil(verts[:, 0].max() + reach + 0.5))
    y0 = int(np.floor(verts[:, 1].min() - reach - 0.5))
    y1 = int(np.ceil(verts[:, 1].max() + reach + 0.5))
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, spec.width), min(y1, spec.height)
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, y0, x1, y1


def _coverage_ramp(dist: np.ndarray, width: float, aa: float) -> np.ndarray:
    t = (dist - (0.5 * width - aa)) / (2.0 * aa)
    u = np.clip(t, 0.0, 1.0)
    return 1.0 - u * u * (3.0 - 2.0 * u)


def _forward(
    sketch: Sketch,
    spec: CanvasSpec,
    segments: int,
    base: tuple[np.ndarray, np.ndarray] | None = None,
) -> _ForwardCache:
    """Composite coverage factors in canonical (tag, id) order.

    ``base`` is an optional precomposited (prodnz, zcount) pair for the input
    strokes; passing it skips them and yields bit-identical results, since
    input strokes always come first in the canonical order.
    """
    h, w = spec.height, spec.width
    if base is None:
        prodnz = np.ones((h, w), dtype=np.float64)
        zcount = np.zeros((h, w), dtype=np.int32)
        skip_input = False
    else:
        prodnz = base[0].copy()
        zcount = base[1].copy()
        skip_input = True
    patches: list[_Patch | None] = [None] * len(sketch.strokes)
    order = sorted(
        range(len(sketch.strokes)),
        key=lambda i: (sketch.strokes[i].tag is Tag.GENERATED, sketch.strokes[i].id),
    )
    for i in order:
        if skip_input and sketch.strokes[i].tag is Tag.INPUT:
            continue
        s = sketch.strokes[i]
        verts = _polyline(s, segments)
        reach = 0.5 * s.width + spec.aa_band
        win = _patch_window(verts, reach, spec)
        if win is None:
            continue
        x0, y0, x1, y1 = win
        dist = np.full((y1 - y0, x1 - x0), _DIST_SENTINEL, dtype=np.float64)
        seg = np.zeros_like(dist, dtype=np.int32)
        foot = np.zeros_like(dist)
        fill_distance_patch(verts, float(x0), float(y0), reach + 1e-9, dist, seg, foot)
        cov = s.opacity * _coverage_ramp(dist, s.width, spec.aa_band)
        factor = 1.0 - cov
        nz = factor == 0.0
        sl = (slice(y0, y1), slice(x0, x1))
        prodnz[sl] *= np.where(nz, 1.0, factor)
        zcount[sl] += nz
        patches[i] = _Patch(x0, y0, dist, seg, foot, factor)
    image = spec.background * np.where(zcount > 0, 0.0, prodnz)
    return _ForwardCache(sketch, spec, segments, order, patches, prodnz, zcount, image)


def forward_base(input_sketch: Sketch, spec: CanvasSpec, segments: int) -> tuple[np.ndarray, np.ndarray]:
    """Precomposited (prodnz, zcount) of a static input layer, reusable across renders."""
    cache = _forward(input_sketch, spec, segments)
    return cache.prodnz, cache.zcount


def _backward(cache: _ForwardCache, adjoint: np.ndarray) -> StrokeGradients:
    sketch, spec = cache.sketch, cache.spec
    n = len(sketch.strokes)
    g_points = np.zeros((n, 4, 2), dtype=np.float64)
    g_width = np.zeros(n, dtype=np.float64)
    g_opacity = np.zeros(n, dtype=np.float64)
    bm = bernstein_matrix(cache.segments + 1)  # (V, 4)
    aa = spec.aa_band
    for i, s in enumerate(sketch.strokes):
        if s.tag is not Tag.GENERATED:
            continue
        patch = cache.patches[i]
        if patch is None:
            continue
        y0, x0 = patch.y0, patch.x0
        ph, pw = patch.dist.shape
        sl = (slice(y0, y0 + ph), slice(x0, x0 + pw))
        adj = adjoint[sl]
        if not np.any(adj):
            continue
        f = patch.factor
        nz = f == 0.0
        zc = cache.zcount[sl]
        pn = cache.prodnz[sl]
        t_others = np.where(zc == 0, pn / np.where(nz, 1.0, f), 0.0)
        t_others = np.where((zc == 1) & nz, pn, t_others)
        dl_dcov = adj * (-spec.background * t_others)

        dist = patch.dist
        ramp = _coverage_ramp(dist, s.width, aa)
        g_opacity[i] = float(np.sum(dl_dcov * ramp))

        t = (dist - (0.5 * s.width - aa)) / (2.0 * aa)
        interior = (t > 0.0) & (t < 1.0)
        hprime = np.where(interior, -6.0 * t * (1.0 - t), 0.0)
        g_width[i] = float(np.sum(dl_dcov * s.opacity * hprime * (-1.0 / (4.0 * aa))))

        dl_dd = dl_dcov * s.opacity * hprime / (2.0 * aa)
        live = np.flatnonzero(dl_dd)
        if live.size == 0:
            continue
        verts = _polyline(s, cache.segments)
        k = patch.seg.ravel()[live]
        sfrac = patch.foot.ravel()[live]
        a = verts[k]
        b = verts[k + 1]
        foot_xy = a + sfrac[:, None] * (b - a)
        py, px = np.unravel_index(live, dist.shape)
        centers = np.stack([x0 + px + 0.5, y0 + py + 0.5], axis=1)
        d = dist.ravel()[live]
        with np.errstate(invalid="ignore"):
            dirvec = np.where(d[:, None] > 1e-12, (foot_xy - centers) / np.where(d[:, None] > 1e-12, d[:, None], 1.0), 0.0)
        gxy = dl_dd.ravel()[live][:, None] * dirvec  # (P, 2)
        w4 = (1.0 - sfrac)[:, None] * bm[k] + sfrac[:, None] * bm[k + 1]  # (P, 4)
        g_points[i] = w4.T @ gxy
    return StrokeGradients(sketch.ids(), g_points, g_width, g_opacity)


def render(sketch: Sketch, spec: CanvasSpec, segments: int = SEGMENTS_FINAL) -> RasterImage:
    """Rasterize a sketch to a grayscale image."""
    cache = _forward(sketch, spec, segments)
    return RasterImage(spec.width, spec.height, 1, cache.image)


def render_with_gradients(
    sketch: Sketch, spec: CanvasSpec, adjoint: RasterImage, segments: int = SEGMENTS_FINAL
) -> tuple[RasterImage, StrokeGradients]:
    """Render plus gradients of sum(adjoint * intensity) w.r.t. stroke params.

    Input strokes always get zero gradients; they are never optimized.
    """
    if (adjoint.height, adjoint.width) != (spec.height, spec.width) or adjoint.channels != 1:
        raise ValueError("adjoint dimensions must match the canvas spec")
    cache = _forward(sketch, spec, segments)
    grads = _backward(cache, adjoint.data)
    return RasterImage(spec.width, spec.height, 1, cache.image), grads


def render_two_tone(sketch: Sketch, spec: CanvasSpec, segments: int = SEGMENTS_FINAL) -> RasterImage:
    """RGB rendering with input strokes in blue rgb(51,102,178), generated in black."""
    from .svgio import INPUT_COLOR

    gen = [s for s in sketch.strokes if s.tag is Tag.GENERATED]
    inp = [s for s in sketch.strokes if s.tag is Tag.INPUT]
    sub = Sketch(tuple(gen), sketch.canvas_w, sketch.canvas_h)
    t_gen = _forward(sub, replace(spec, background=1.0), segments).image
    channels = []
    for comp in INPUT_COLOR:
        tint = comp / 255.0
        scaled = [replace(s, opacity=s.opacity * (1.0 - tint)) for s in inp]
        t_in = _forward(Sketch(tuple(scaled), sketch.canvas_w, sketch.canvas_h), replace(spec, background=1.0), segments).image
        channels.append(spec.background * t_in * t_gen)
    return RasterImage(spec.width, spec.height, 3, np.stack(channels, axis=-1))


def hard_coverage(sketch: Sketch, spec: CanvasSpec, segments: int = SEGMENTS_FINAL) -> np.ndarray:
    """Boolean grid: pixel centers within width/2 of any stroke (opacity ignored)."""
    grid = np.zeros((spec.height, spec.width), dtype=bool)
    for s in sketch.strokes:
        verts = _polyline(s, segments)
        reach = 0.5 * s.width
        win = _patch_window(verts, reach, spec)
        if win is None:
            continue
        x0, y0, x1, y1 = win
        dist = np.full((y1 - y0, x1 - x0), _DIST_SENTINEL, dtype=np.float64)
        seg = np.zeros_like(dist, dtype=np.int32)
        foot = np.zeros_like(dist)
        fill_distance_patch(verts, float(x0), float(y0), reach + 1e-9, dist, seg, foot)
        grid[y0:y1, x0:x1] |= dist <= 0.5 * s.width
    return grid


def mask_from_binary(binary: np.ndarray, blur_sigma: float) -> MaskGrid:
    """Wrap an arbitrary binary grid with its Gaussian-blurred penalty field."""
    binary = np.ascontiguousarray(binary, dtype=np.uint8)
    smooth = ndimage.gaussian_filter(binary.astype(np.float64), sigma=blur_sigma) if blur_sigma > 0 else binary.astype(np.float64)
    smooth = np.clip(smooth, 0.0, 1.0)
    h, w = binary.shape
    return MaskGrid(binary, smooth, w, h)


def build_mask(input_sketch: Sketch, spec: CanvasSpec, dilation: int = 2, blur_sigma: float = 3.0) -> MaskGrid:
    """Occupancy mask of the input strokes, dilated and blurred."""
    if any(s.tag is not Tag.INPUT for s in input_sketch.strokes):
        raise ValueError("build_mask expects a sketch of input strokes only")
    grid = hard_coverage(input_sketch, spec)
    if dilation > 0 and grid.any():
        grid = ndimage.binary_dilation(grid, iterations=dilation)
    return mask_from_binary(grid.astype(np.uint8), blur_sigma)


def save_png(image: RasterImage, path) -> None:
    """8-bit PNG export; intensities scaled by 255, rounding half-up."""
    scaled = np.floor(image.data * 255.0 + 0.5).astype(np.uint8)
    mode = "L" if image.channels == 1 else "RGB"
    Image.fromarray(scaled, mode=mode).save(path, format="PNG")


def load_png(path) -> RasterImage:
    with Image.open(path) as im:
        if im.mode in ("L", "1", "I;16"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            return RasterImage.from_array(arr)
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return RasterImage.from_array(arr)


def png_bytes(image: RasterImage) -> bytes:
    import io

    buf = io.BytesIO()
    save_png(image, buf)
    return buf.getvalue()


def png_from_bytes(data: bytes) -> RasterImage:
    import io

    return load_png(io.BytesIO(data))
