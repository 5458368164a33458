"""VLM interactions: prompt augmentation, style-difference detection, and
adjustment-program generation, with digest-keyed record/replay fixtures.

Model output is never executed; the only consumer of generated program text
is the adjustment-DSL parser. Preamble files ship with the package and are
part of every request digest, so editing a preamble invalidates fixtures
automatically.
"""
from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable

from .errors import (
    AugmentationUnavailableError,
    CodegenFailureError,
    MissingFixtureError,
    ReportParseError,
    SketchfillError,
    VlmUnavailableError,
)
from .raster import RasterImage, png_bytes

__all__ = [
    "VlmMode",
    "VlmRequest",
    "VlmClient",
    "FixtureStore",
    "AugmentedPrompt",
    "StyleAspect",
    "StyleDiffItem",
    "StyleDiffReport",
    "FALLBACK_STYLE_SUFFIX",
    "augment_prompt",
    "detect_style_differences",
    "generate_adjustment_program",
    "replay_or_call",
    "load_preamble",
    "load_skeleton",
]

# Ablation-baseline suffix used when augmentation is unavailable.
FALLBACK_STYLE_SUFFIX = "in non-photorealistic styles"

MAX_STYLE_WORDS = 60


class VlmMode(Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


@dataclass(frozen=True)
class ImagePart:
    png: bytes


@dataclass(frozen=True)
class VlmRequest:
    system: str
    parts: tuple[str | ImagePart, ...]
    max_tokens: int = 1024
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.parts:
            raise ValueError("request needs at least one user part")

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.system.encode())
        h.update(b"\x00")
        for part in self.parts:
            if isinstance(part, ImagePart):
                h.update(b"img\x00")
                h.update(part.png)
            else:
                h.update(b"txt\x00")
                h.update(part.encode())
            h.update(b"\x00")
        h.update(f"{self.max_tokens}|{self.temperature!r}".encode())
        return h.hexdigest()

    def to_json(self) -> dict:
        parts = []
        for part in self.parts:
            if isinstance(part, ImagePart):
                parts.append({"type": "image", "png_b64": base64.b64encode(part.png).decode()})
            else:
                parts.append({"type": "text", "text": part})
        return {
            "system": self.system,
            "parts": parts,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        }

    @staticmethod
    def from_json(data: dict) -> "VlmRequest":
        parts: list[str | ImagePart] = []
        for p in data["parts"]:
            if p["type"] == "image":
                parts.append(ImagePart(base64.b64decode(p["png_b64"])))
            else:
                parts.append(p["text"])
        return VlmRequest(data["system"], tuple(parts), data["max_tokens"], data["temperature"])


class FixtureStore:
    """Directory of digest-named JSON files {request, reply, timestamp}."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def _path(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, digest: str) -> str | None:
        path = self._path(digest)
        if not path.is_file():
            return None
        return json.loads(path.read_text())["reply"]

    def put(self, request: VlmRequest, reply: str) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        record = {
            "digest": request.digest,
            "request": request.to_json(),
            "reply": reply,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        self._path(request.digest).write_text(json.dumps(record, indent=2))


def _http_transport(request: VlmRequest, endpoint: str, api_key: str, model: str, timeout: float) -> str:
    import requests

    content: list[dict] = []
    for part in request.parts:
        if isinstance(part, ImagePart):
            b64 = base64.b64encode(part.png).decode()
            content.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}})
        else:
            content.append({"type": "text", "text": part})
    payload = {
        "model": model,
        "messages": [
            {"role": "system", "content": request.system},
            {"role": "user", "content": content},
        ],
        "max_tokens": request.max_tokens,
        "temperature": request.temperature,
    }
    resp = requests.post(
        endpoint,
        json=payload,
        headers={"Authorization": f"Bearer {api_key}"},
        timeout=timeout,
    )
    resp.raise_for_status()
    return resp.json()["choices"][0]["message"]["content"]


@dataclass
class VlmClient:
    """Chat-completion access with Live/Record/Replay modes.

    ``transport`` may be injected for tests; the default reads VLM_ENDPOINT
    and VLM_API_KEY from the environment and speaks the OpenAI-compatible
    JSON protocol.
    """

    mode: VlmMode = VlmMode.REPLAY
    store: FixtureStore | None = None
    transport: Callable[[VlmRequest], str] | None = None
    model: str = "gpt-4o"
    timeout: float = 120.0
    retries: int = 3
    backoff: float = 1.0
    on_exchange: Callable[[str, str], None] | None = None  # (digest, reply) observer

    def __post_init__(self) -> None:
        if self.mode in (VlmMode.RECORD, VlmMode.REPLAY) and self.store is None:
            raise ValueError(f"{self.mode.value} mode requires a fixture store")

    def _call(self, request: VlmRequest) -> str:
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                if self.transport is not None:
                    return self.transport(request)
                endpoint = os.environ.get("VLM_ENDPOINT")
                api_key = os.environ.get("VLM_API_KEY", "")
                if not endpoint:
                    raise VlmUnavailableError("VLM_ENDPOINT is not configured")
                return _http_transport(request, endpoint, api_key, self.model, self.timeout)
            except SketchfillError:
                raise
            except Exception as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * 2**attempt)
        raise VlmUnavailableError(f"VLM call failed after {self.retries} attempts: {last}")


def replay_or_call(client: VlmClient, request: VlmRequest) -> str:
    """Mode dispatch: replay from the store, or call (and record)."""
    if client.mode is VlmMode.REPLAY:
        assert client.store is not None
        reply = client.store.get(request.digest)
        if reply is None:
            raise MissingFixtureError(request.digest)
    else:
        reply = client._call(request)
        if client.mode is VlmMode.RECORD:
            assert client.store is not None
            client.store.put(request, reply)
    if client.on_exchange is not None:
        client.on_exchange(request.digest, reply)
    return reply


def load_preamble(name: str) -> str:
    return resources.files("sketchfill").joinpath("preambles", f"{name}.txt").read_text()


def load_skeleton() -> str:
    return resources.files("sketchfill").joinpath("preambles", "skeleton.txt").read_text()


@dataclass(frozen=True)
class AugmentedPrompt:
    base: str
    style_descriptions: str

    def __post_init__(self) -> None:
        if not self.base:
            raise ValueError("base prompt must be nonempty")

    @property
    def combined(self) -> str:
        return f"{self.base}, {self.style_descriptions}"


def _truncate_words(text: str, limit: int) -> str:
    words = text.split()
    return " ".join(words[:limit])


def augment_prompt(client: VlmClient, base: str, rendered_input: RasterImage) -> AugmentedPrompt:
    """Ask the VLM for style descriptions of the rendered input sketch."""
    if not base:
        raise ValueError("base prompt must be nonempty")
    request = VlmRequest(
        system=load_preamble("augment"),
        parts=(ImagePart(png_bytes(rendered_input)), f"Describe the drawing style of this sketch. The sketch depicts: {base}"),
        max_tokens=256,
    )
    try:
        reply = replay_or_call(client, request)
    except SketchfillError as exc:
        raise AugmentationUnavailableError(f"prompt augmentation failed: {exc}") from exc
    description = " ".join(reply.strip().split())
    description = _truncate_words(description, MAX_STYLE_WORDS).rstrip(".")
    if not description:
        raise AugmentationUnavailableError("VLM returned an empty style description")
    return AugmentedPrompt(base=base, style_descriptions=description)


class StyleAspect(Enum):
    ABSTRACTION_LEVEL = "abstraction_level"
    THICKNESS = "thickness"
    SMOOTHNESS = "smoothness"
    CURVATURE = "curvature"
    OPACITY = "opacity"
    OTHER = "other"


# keyword -> aspect, checked in order; first hit wins
_ASPECT_KEYWORDS: list[tuple[StyleAspect, tuple[str, ...]]] = [
    (StyleAspect.OPACITY, ("opacity", "opaque", "transparen", "faint", "translucent")),
    (StyleAspect.THICKNESS, ("thick", "thin", "width", "bold", "heavy", "weight")),
    (StyleAspect.SMOOTHNESS, ("smooth", "rough", "jitter", "wobbl", "shaky", "jagged")),
    (StyleAspect.CURVATURE, ("curv", "straight", "bend", "angular", "arc")),
    (StyleAspect.ABSTRACTION_LEVEL, ("abstract", "detail", "dense", "sparse", "simpl", "minimal", "complex")),
]


@dataclass(frozen=True)
class StyleDiffItem:
    aspect: StyleAspect
    description: str


@dataclass(frozen=True)
class StyleDiffReport:
    items: tuple[StyleDiffItem, ...]
    no_differences: bool = False

    def __post_init__(self) -> None:
        if not self.items and not self.no_differences:
            raise ValueError("report needs items or an explicit no-differences marker")

    def as_text(self) -> str:
        if self.no_differences:
            return "NO DIFFERENCES"
        return "\n".join(f"{i + 1}. {item.description}" for i, item in enumerate(self.items))


def _classify_aspect(line: str) -> StyleAspect:
    low = line.lower()
    for aspect, keywords in _ASPECT_KEYWORDS:
        if any(k in low for k in keywords):
            return aspect
    return StyleAspect.OTHER


_NUMBERED_LINE = re.compile(r"^\s*\d+[.):]\s*(.+?)\s*$")


def _parse_report(reply: str) -> StyleDiffReport | None:
    if re.search(r"\bno differences\b", reply, re.IGNORECASE):
        return StyleDiffReport(items=(), no_differences=True)
    items = []
    for line in reply.splitlines():
        m = _NUMBERED_LINE.match(line)
        if m:
            text = m.group(1)
            items.append(StyleDiffItem(_classify_aspect(text), text))
    if not items:
        return None
    return StyleDiffReport(items=tuple(items))


def detect_style_differences(client: VlmClient, two_tone: RasterImage, svg_text: str) -> StyleDiffReport:
    """Numbered-list style differences between input (blue) and new (black) strokes."""
    base_parts: tuple[str | ImagePart, ...] = (
        ImagePart(png_bytes(two_tone)),
        "SVG of the sketch shown above:\n" + svg_text,
    )
    request = VlmRequest(system=load_preamble("detect"), parts=base_parts, max_tokens=1024)
    reply = replay_or_call(client, request)
    report = _parse_report(reply)
    if report is not None:
        return report
    reminder = (
        "Your previous answer could not be parsed. Reply ONLY with a numbered list "
        "(1. ... 2. ...) of style differences, or the exact text NO DIFFERENCES."
    )
    retry = VlmRequest(system=load_preamble("detect"), parts=base_parts + (reminder,), max_tokens=1024)
    reply = replay_or_call(client, retry)
    report = _parse_report(reply)
    if report is None:
        raise ReportParseError("style-difference reply was unparseable twice")
    return report


_FENCED_BLOCK = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


def extract_program_text(reply: str) -> str:
    """Contents of the first fenced block, or the whole reply when unfenced."""
    m = _FENCED_BLOCK.search(reply)
    if m:
        return m.group(1).strip()
    return reply.strip()


def generate_adjustment_program(
    client: VlmClient,
    report: StyleDiffReport,
    svg_text: str,
    prompt: AugmentedPrompt,
    skeleton: str,
) -> str:
    """Program text in the adjustment DSL, regenerated on parse failure.

    Up to three attempts; each retry feeds the parser diagnostics back to the
    model. Raises CodegenFailureError after the third parse failure.
    """
    from .dsl import parse_program
    from .errors import DslSyntaxError

    if not report.items and not report.no_differences:
        raise ValueError("report must not be empty")
    base_parts: tuple[str | ImagePart, ...] = (
        "Detected style differences:\n" + report.as_text(),
        "Current sketch SVG:\n" + svg_text,
        "The sketch should depict: " + prompt.combined,
        "Skeleton program to complete:\n" + skeleton,
    )
    system = load_preamble("codegen")
    last_error: DslSyntaxError | None = None
    for _ in range(3):
        parts = base_parts
        if last_error is not None:
            parts = base_parts + (
                f"Your previous program failed to parse: {last_error}. "
                "Emit a corrected program in one fenced code block.",
            )
        reply = replay_or_call(client, VlmRequest(system=system, parts=parts, max_tokens=1024))
        text = extract_program_text(reply)
        try:
            parse_program(text)
        except DslSyntaxError as exc:
            last_error = exc
            continue
        return text
    raise CodegenFailureError(f"adjustment program failed to parse 3 times; last error: {last_error}")
