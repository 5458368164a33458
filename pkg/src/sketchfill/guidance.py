"""Guidance image acquisition: scribble conditioning plus pluggable providers.

The image-generation service lives behind GuidanceProvider; tests and
offline runs use the file provider, which ignores the prompt and loads a
fixed image.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
import requests
from PIL import Image

from .errors import GuidanceUnavailableError, ProviderContractError
from .geometry import Sketch
from .raster import CanvasSpec, RasterImage, hard_coverage, png_bytes

__all__ = [
    "GuidanceProvider",
    "GuidanceRequest",
    "FileGuidanceProvider",
    "HttpGuidanceProvider",
    "scribble_image",
    "fetch_guidance",
]


@dataclass(frozen=True)
class GuidanceRequest:
    prompt: str
    scribble: RasterImage
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("guidance prompt must be nonempty")


@runtime_checkable
class GuidanceProvider(Protocol):
    def fetch(self, request: GuidanceRequest) -> RasterImage: ...


def scribble_image(input_sketch: Sketch, spec: CanvasSpec) -> RasterImage:
    """Hard-coverage conditioning image: every stroke black on white.

    Tag colors never leak into conditioning; scribble models expect crisp
    binary input, so no anti-aliasing is applied.
    """
    covered = hard_coverage(input_sketch, spec)
    return RasterImage(spec.width, spec.height, 1, np.where(covered, 0.0, 1.0))


def _to_gray(img: Image.Image) -> np.ndarray:
    return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def _fit_to(img: Image.Image, width: int, height: int) -> RasterImage:
    if img.size != (width, height):
        img = img.resize((width, height), Image.BILINEAR)
    data = _to_gray(img)
    if data.shape != (height, width):
        raise ProviderContractError(f"provider image resize produced {data.shape}, wanted {(height, width)}")
    return RasterImage(width, height, 1, data)


class FileGuidanceProvider:
    """Loads a fixed image from disk; referentially transparent."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def fetch(self, request: GuidanceRequest) -> RasterImage:
        if not self.path.is_file():
            raise GuidanceUnavailableError(f"guidance file not found: {self.path}")
        try:
            with Image.open(self.path) as img:
                return _fit_to(img, request.scribble.width, request.scribble.height)
        except ProviderContractError:
            raise
        except Exception as exc:
            raise GuidanceUnavailableError(f"cannot read guidance file {self.path}: {exc}") from exc


class HttpGuidanceProvider:
    """POSTs the prompt + scribble to an image-generation service."""

    def __init__(self, endpoint: str, timeout: float = 120.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def fetch(self, request: GuidanceRequest) -> RasterImage:
        import json

        try:
            resp = requests.post(
                self.endpoint,
                data={"prompt": request.prompt},
                files={
                    "scribble": ("scribble.png", png_bytes(request.scribble), "image/png"),
                    "params": ("params.json", json.dumps(request.params), "application/json"),
                },
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise GuidanceUnavailableError(f"guidance service unreachable: {exc}") from exc
        if resp.status_code // 100 != 2:
            raise GuidanceUnavailableError(f"guidance service returned HTTP {resp.status_code}")
        try:
            with Image.open(io.BytesIO(resp.content)) as img:
                return _fit_to(img, request.scribble.width, request.scribble.height)
        except ProviderContractError:
            raise
        except Exception as exc:
            raise GuidanceUnavailableError(f"guidance service returned an unreadable image: {exc}") from exc


def fetch_guidance(provider: GuidanceProvider, request: GuidanceRequest) -> RasterImage:
    """Fetch the guidance image; never falls back silently."""
    image = provider.fetch(request)
    if (image.width, image.height) != (request.scribble.width, request.scribble.height):
        raise ProviderContractError(
            f"provider returned {image.width}x{image.height}, scribble is "
            f"{request.scribble.width}x{request.scribble.height}"
        )
    return image
