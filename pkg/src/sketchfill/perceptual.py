"""Perceptual backends: image embeddings and distances, with pixel adjoints.

The built-in backend needs no learned weights. It builds a factor-2
box-downsampling pyramid; each level is smoothed with a normalized Gaussian
(so constant images stay exactly constant), split into 8x8-pixel cells, and
mean-centered per cell. Features are the centered intensities plus a
small-weight DC channel per cell (cell mean relative to mid-gray),
concatenated across levels with coarse levels weighted up. Distance is the
mean squared feature difference.

The smoothing and coarse-level gain give strokes a usable attraction range
of tens of pixels during optimization; the DC channel keeps embeddings of
constant images nonzero while its small weight preserves near-invariance to
uniform brightness shifts. The whole feature map is linear in pixel
intensities, so the pixel-space adjoint is an exact transpose.
"""
from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np
from scipy import ndimage

from .errors import DegenerateEmbeddingError
from .raster import RasterImage

__all__ = [
    "PerceptualBackend",
    "PyramidBackend",
    "RemoteBackend",
    "cosine_similarity",
]


@runtime_checkable
class PerceptualBackend(Protocol):
    supports_adjoint: bool

    def embed(self, image: RasterImage) -> np.ndarray: ...

    def distance(self, a: RasterImage, b: RasterImage) -> float: ...


def cosine_similarity(fa: np.ndarray, fb: np.ndarray) -> float:
    na = float(np.linalg.norm(fa))
    nb = float(np.linalg.norm(fb))
    if na == 0.0 or nb == 0.0:
        raise DegenerateEmbeddingError("embedding has zero norm; cosine similarity undefined")
    return float(np.dot(fa, fb) / (na * nb))


def _gray(image: RasterImage) -> np.ndarray:
    if image.channels != 1:
        raise ValueError("perceptual backends take single-channel images")
    return image.data


def _downsample(img: np.ndarray) -> np.ndarray:
    # 2x2 box mean; an odd trailing row/column is dropped
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2])


def _upsample_adjoint(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape, dtype=np.float64)
    gh, gw = g.shape
    q = 0.25 * g
    out[0 : 2 * gh : 2, 0 : 2 * gw : 2] = q
    out[0 : 2 * gh : 2, 1 : 2 * gw : 2] = q
    out[1 : 2 * gh : 2, 0 : 2 * gw : 2] = q
    out[1 : 2 * gh : 2, 1 : 2 * gw : 2] = q
    return out


def _cell_layout(n: int, cell: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(starts, sizes, pixel->cell index) for 1-d tiling with a partial tail cell."""
    starts = np.arange(0, n, cell)
    sizes = np.minimum(starts + cell, n) - starts
    index = np.repeat(np.arange(len(starts)), sizes)
    return starts, sizes, index


def _cell_means(img: np.ndarray, cell: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    h, w = img.shape
    r_starts, r_sizes, r_index = _cell_layout(h, cell)
    c_starts, c_sizes, c_index = _cell_layout(w, cell)
    sums = np.add.reduceat(np.add.reduceat(img, r_starts, axis=0), c_starts, axis=1)
    counts = np.outer(r_sizes, c_sizes).astype(np.float64)
    return sums / counts, counts, r_index, c_index


class PyramidBackend:
    """Deterministic multi-scale structural features; see module docstring."""

    supports_adjoint = True

    def __init__(
        self,
        levels: int = 5,
        cell: int = 8,
        dc_weight: float = 1e-3,
        level_gain: float = 4.0,
        blur_sigma: float = 2.0,
    ):
        if levels < 1 or cell < 1:
            raise ValueError("levels and cell size must be positive")
        self.levels = levels
        self.cell = cell
        self.dc_weight = dc_weight
        self.level_gain = level_gain
        self.blur_sigma = blur_sigma
        self._norm_cache: dict[tuple[int, int], np.ndarray] = {}

    def _level_images(self, img: np.ndarray) -> list[np.ndarray]:
        out = [img]
        for _ in range(self.levels - 1):
            img = _downsample(img)
            out.append(img)
        return out

    def _scales(self, shape: tuple[int, int]) -> list[float]:
        h, w = shape
        return [
            float(np.sqrt(self.level_gain**l / max((h >> l) * (w >> l), 1)))
            for l in range(self.levels)
        ]

    def _blur_norm(self, shape: tuple[int, int]) -> np.ndarray:
        norm = self._norm_cache.get(shape)
        if norm is None:
            norm = ndimage.gaussian_filter(np.ones(shape), self.blur_sigma, mode="constant")
            self._norm_cache[shape] = norm
        return norm

    def _smooth(self, img: np.ndarray) -> np.ndarray:
        # normalized zero-pad blur: preserves constant images exactly
        if self.blur_sigma <= 0:
            return img
        return ndimage.gaussian_filter(img, self.blur_sigma, mode="constant") / self._blur_norm(img.shape)

    def _smooth_adjoint(self, g: np.ndarray) -> np.ndarray:
        # transpose of _smooth: diag(1/norm) then the (symmetric) zero-pad blur
        if self.blur_sigma <= 0:
            return g
        return ndimage.gaussian_filter(g / self._blur_norm(g.shape), self.blur_sigma, mode="constant")

    def embed(self, image: RasterImage) -> np.ndarray:
        img = _gray(image)
        parts = []
        scales = self._scales(img.shape)
        for l, lv in enumerate(self._level_images(img)):
            sm = self._smooth(lv)
            means, _, r_index, c_index = _cell_means(sm, self.cell)
            parts.append((scales[l] * (sm - means[np.ix_(r_index, c_index)])).ravel())
            parts.append((scales[l] * self.dc_weight * (means - 0.5)).ravel())
        return np.concatenate(parts)

    @staticmethod
    def distance_from_features(fa: np.ndarray, fb: np.ndarray) -> float:
        if fa.shape != fb.shape:
            raise ValueError("feature vectors must share length")
        d = fa - fb
        return float(np.dot(d, d) / d.size)

    def distance(self, a: RasterImage, b: RasterImage) -> float:
        return self.distance_from_features(self.embed(a), self.embed(b))

    def feature_adjoint(self, image: RasterImage, grad_features: np.ndarray) -> np.ndarray:
        """Map a feature-space gradient back to pixel space (exact transpose)."""
        levels = self._level_images(_gray(image))
        scales = self._scales(levels[0].shape)
        grad_img = np.zeros_like(levels[0])
        pos = 0
        for li, lv in enumerate(levels):
            h, w = lv.shape
            sm = self._smooth(lv)
            means, counts, r_index, c_index = _cell_means(sm, self.cell)
            g_res = grad_features[pos : pos + h * w].reshape(h, w) * scales[li]
            pos += h * w
            g_dc = grad_features[pos : pos + means.size].reshape(means.shape) * scales[li]
            pos += means.size
            res_means, _, _, _ = _cell_means(g_res, self.cell)
            dc_spread = (self.dc_weight * g_dc) / counts
            g_sm = g_res - res_means[np.ix_(r_index, c_index)] + dc_spread[np.ix_(r_index, c_index)]
            g_level = self._smooth_adjoint(g_sm)
            for k in range(li, 0, -1):
                g_level = _upsample_adjoint(g_level, levels[k - 1].shape)
            grad_img += g_level
        if pos != grad_features.size:
            raise ValueError("feature gradient length mismatch")
        return grad_img


class RemoteBackend:
    """HTTP embedding service; usable for evaluation but not optimization."""

    supports_adjoint = False

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def embed(self, image: RasterImage) -> np.ndarray:
        import requests

        from .raster import png_bytes

        resp = requests.post(
            f"{self.endpoint}/embed",
            data=png_bytes(image),
            headers={"Content-Type": "image/png"},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        return np.asarray(resp.json()["vector"], dtype=np.float64)

    def distance(self, a: RasterImage, b: RasterImage) -> float:
        import requests

        from .raster import png_bytes

        resp = requests.post(
            f"{self.endpoint}/distance",
            files={"a": ("a.png", png_bytes(a), "image/png"), "b": ("b.png", png_bytes(b), "image/png")},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        return float(resp.json()["distance"])
