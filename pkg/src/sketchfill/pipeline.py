"""Two-stage completion pipeline, session state machine, and persistence.

Sessions move Created -> Stage1Running -> Stage1Done -> Stage2Running ->
Done, with Failed reachable from either running state. Input strokes are
immutable end to end: they pass through stage 1 untouched and the
adjustment interpreter refuses to modify them in stage 2.
"""
from __future__ import annotations

import hashlib
import json
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from . import raster
from .dsl import AdjustmentStep, adjustment_loop
from .errors import (
    AugmentationUnavailableError,
    InvalidTransitionError,
    SessionIntegrityError,
    SessionNotFoundError,
    SketchfillError,
    UnknownStrokeIdsError,
)
from .geometry import Sketch, Stroke, Tag
from .guidance import GuidanceProvider, GuidanceRequest, fetch_guidance, scribble_image
from .objective import LossBreakdown
from .optimizer import OptimizerConfig, optimize
from .perceptual import PerceptualBackend
from .raster import CanvasSpec, RasterImage, build_mask, render
from .svgio import parse_svg, serialize_svg
from .vlm import FALLBACK_STYLE_SUFFIX, AugmentedPrompt, VlmClient, augment_prompt

__all__ = [
    "SessionStatus",
    "SessionState",
    "IterationRequest",
    "PipelineConfig",
    "Pipeline",
    "SessionStore",
    "save_session",
    "load_session",
]


class SessionStatus(Enum):
    CREATED = "created"
    STAGE1_RUNNING = "stage1_running"
    STAGE1_DONE = "stage1_done"
    STAGE2_RUNNING = "stage2_running"
    DONE = "done"
    FAILED = "failed"


@dataclass
class SessionState:
    id: str
    base_prompt: str
    input_sketch: Sketch
    rng_seed: int
    status: SessionStatus = SessionStatus.CREATED
    augmented: AugmentedPrompt | None = None
    guidance: RasterImage | None = None
    intermediate: Sketch | None = None
    final: Sketch | None = None
    loss_trace: list[LossBreakdown] = field(default_factory=list)
    adjustment_trace: list[AdjustmentStep] = field(default_factory=list)
    failure_reason: str | None = None
    warning: str | None = None
    parent_id: str | None = None
    vlm_transcript: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class IterationRequest:
    retained_ids: tuple[str, ...]
    new_strokes: Sketch
    prompt: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    mask_dilation: int = 2
    mask_blur_sigma: float = 3.0
    adjust_max_iters: int = 5
    augment_fallback: bool = True
    guidance_params: dict = field(default_factory=dict)


class Pipeline:
    """Wires the VLM client, guidance provider, and backend into the stages."""

    def __init__(
        self,
        client: VlmClient,
        provider: GuidanceProvider,
        backend: PerceptualBackend,
        config: PipelineConfig | None = None,
        store: "SessionStore | None" = None,
    ):
        self.client = client
        self.provider = provider
        self.backend = backend
        self.config = config or PipelineConfig()
        self.store = store

    # -- session construction ------------------------------------------------

    def create_session(
        self, prompt: str, svg_text: str, seed: int = 0, session_id: str | None = None
    ) -> SessionState:
        """New session from a user sketch; every stroke is re-tagged as input."""
        if not prompt:
            raise ValueError("prompt must be nonempty")
        sketch = parse_svg(svg_text)
        sketch = sketch.with_strokes(s.with_tag(Tag.INPUT) for s in sketch.strokes)
        session = SessionState(
            id=session_id or uuid.uuid4().hex,
            base_prompt=prompt,
            input_sketch=sketch,
            rng_seed=seed,
        )
        self._persist(session)
        return session

    def iterate(self, parent: SessionState, request: IterationRequest) -> SessionState:
        """Child session keeping selected strokes of the parent's final sketch.

        Retained strokes are re-tagged as input, which automatically protects
        them through the next run's optimization and style adjustment.
        """
        if parent.status is not SessionStatus.DONE or parent.final is None:
            raise InvalidTransitionError(f"parent session must be done, is {parent.status.value}")
        final_ids = set(parent.final.ids())
        unknown = [i for i in request.retained_ids if i not in final_ids]
        if unknown:
            raise UnknownStrokeIdsError(unknown)
        retained_set = set(request.retained_ids)
        kept = [s.with_tag(Tag.INPUT) for s in parent.final.strokes if s.id in retained_set]
        taken = {s.id for s in kept}
        added = []
        for s in request.new_strokes.strokes:
            sid = s.id
            while sid in taken:
                sid = sid + "_n"
            taken.add(sid)
            added.append(replace(s, tag=Tag.INPUT, id=sid))
        sketch = Sketch(tuple(kept + added), parent.input_sketch.canvas_w, parent.input_sketch.canvas_h)
        child = SessionState(
            id=uuid.uuid4().hex,
            base_prompt=request.prompt or parent.base_prompt,
            input_sketch=sketch,
            rng_seed=parent.rng_seed + 1,
            parent_id=parent.id,
        )
        self._persist(child)
        return child

    # -- stages ---------------------------------------------------------------

    def stage1(self, session: SessionState) -> SessionState:
        """Augment the prompt, fetch guidance, optimize new strokes."""
        if session.status is not SessionStatus.CREATED:
            raise InvalidTransitionError(f"stage1 requires a created session, got {session.status.value}")
        session.status = SessionStatus.STAGE1_RUNNING
        self._persist(session)
        previous_hook = self.client.on_exchange
        self.client.on_exchange = lambda digest, reply: session.vlm_transcript.append(
            {"digest": digest, "reply_chars": len(reply)}
        )
        try:
            spec = CanvasSpec(
                session.input_sketch.canvas_w,
                session.input_sketch.canvas_h,
                aa_band=self.config.optimizer.aa_band,
            )
            rendered = render(session.input_sketch, spec)
            try:
                session.augmented = augment_prompt(self.client, session.base_prompt, rendered)
            except AugmentationUnavailableError:
                if not self.config.augment_fallback:
                    raise
                session.augmented = AugmentedPrompt(session.base_prompt, FALLBACK_STYLE_SUFFIX)
            scribble = scribble_image(session.input_sketch, spec)
            mask = build_mask(session.input_sketch, spec, self.config.mask_dilation, self.config.mask_blur_sigma)
            session.guidance = fetch_guidance(
                self.provider,
                GuidanceRequest(session.augmented.combined, scribble, dict(self.config.guidance_params)),
            )
            opt_config = replace(self.config.optimizer, rng_seed=session.rng_seed)
            result = optimize(session.input_sketch, session.guidance, mask, opt_config, self.backend)
            if result.error is not None:
                raise SketchfillError(f"stroke optimization aborted: {result.error}")
            session.intermediate = result.sketch
            session.loss_trace = list(result.trace)
            session.status = SessionStatus.STAGE1_DONE
        except SketchfillError as exc:
            session.status = SessionStatus.FAILED
            session.failure_reason = str(exc)
        finally:
            self.client.on_exchange = previous_hook
            self._persist(session)
        return session

    def stage2(self, session: SessionState) -> SessionState:
        """Iterative VLM style adjustment of the intermediate sketch."""
        if session.status is not SessionStatus.STAGE1_DONE or session.intermediate is None:
            raise InvalidTransitionError(f"stage2 requires stage1 to be done, got {session.status.value}")
        session.status = SessionStatus.STAGE2_RUNNING
        self._persist(session)
        previous_hook = self.client.on_exchange
        self.client.on_exchange = lambda digest, reply: session.vlm_transcript.append(
            {"digest": digest, "reply_chars": len(reply)}
        )
        try:
            assert session.augmented is not None
            result = adjustment_loop(
                self.client, session.intermediate, session.augmented, self.config.adjust_max_iters
            )
            session.final = result.final
            session.adjustment_trace = list(result.trace)
            session.warning = result.warning
            session.status = SessionStatus.DONE
        except SketchfillError as exc:
            session.status = SessionStatus.FAILED
            session.failure_reason = str(exc)
        finally:
            self.client.on_exchange = previous_hook
            self._persist(session)
        return session

    def complete(self, session: SessionState) -> SessionState:
        """stage1 followed by stage2."""
        session = self.stage1(session)
        if session.status is SessionStatus.STAGE1_DONE:
            session = self.stage2(session)
        return session

    def _persist(self, session: SessionState) -> None:
        if self.store is not None:
            save_session(session, self.store)


# --- persistence -------------------------------------------------------------


class SessionStore:
    """Directory of per-session folders: a JSON record plus SVG/PNG blobs."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def session_dir(self, session_id: str) -> Path:
        return self.directory / session_id

    def list_ids(self) -> list[str]:
        if not self.directory.is_dir():
            return []
        return sorted(p.name for p in self.directory.iterdir() if (p / "session.json").is_file())


def _breakdown_to_json(b: LossBreakdown) -> dict:
    return {
        "similarity_term": b.similarity_term,
        "perceptual_term": b.perceptual_term,
        "overlap_term": b.overlap_term,
        "total": b.total,
        "overlap_count": b.overlap_count,
    }


def _breakdown_from_json(d: dict) -> LossBreakdown:
    return LossBreakdown(
        d["similarity_term"], d["perceptual_term"], d["overlap_term"], d["total"], d["overlap_count"]
    )


def _step_to_json(s: AdjustmentStep) -> dict:
    return {
        "report_text": s.report_text,
        "program_text": s.program_text,
        "fingerprint": s.fingerprint,
        "stroke_count": s.stroke_count,
        "note": s.note,
    }


def _step_from_json(d: dict) -> AdjustmentStep:
    return AdjustmentStep(d["report_text"], d["program_text"], d["fingerprint"], d["stroke_count"], d["note"])


def save_session(session: SessionState, store: SessionStore) -> None:
    """Write the session record and its blobs; the record carries digests."""
    sdir = store.session_dir(session.id)
    sdir.mkdir(parents=True, exist_ok=True)
    blobs: dict[str, bytes] = {"input.svg": serialize_svg(session.input_sketch).encode()}
    if session.intermediate is not None:
        blobs["intermediate.svg"] = serialize_svg(session.intermediate).encode()
    if session.final is not None:
        blobs["final.svg"] = serialize_svg(session.final).encode()
    if session.guidance is not None:
        blobs["guidance.png"] = raster.png_bytes(session.guidance)
    for name, data in blobs.items():
        (sdir / name).write_bytes(data)
    payload = {
        "id": session.id,
        "base_prompt": session.base_prompt,
        "rng_seed": session.rng_seed,
        "status": session.status.value,
        "augmented": None
        if session.augmented is None
        else {"base": session.augmented.base, "style_descriptions": session.augmented.style_descriptions},
        "loss_trace": [_breakdown_to_json(b) for b in session.loss_trace],
        "adjustment_trace": [_step_to_json(s) for s in session.adjustment_trace],
        "failure_reason": session.failure_reason,
        "warning": session.warning,
        "parent_id": session.parent_id,
        "vlm_transcript": session.vlm_transcript,
        "blobs": {name: hashlib.sha256(data).hexdigest() for name, data in blobs.items()},
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    record = {"payload": payload, "digest": hashlib.sha256(canonical.encode()).hexdigest()}
    (sdir / "session.json").write_text(json.dumps(record, indent=2))


def load_session(session_id: str, store: SessionStore) -> SessionState:
    sdir = store.session_dir(session_id)
    record_path = sdir / "session.json"
    if not record_path.is_file():
        raise SessionNotFoundError(f"no session {session_id!r} in {store.directory}")
    record = json.loads(record_path.read_text())
    payload = record["payload"]
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(canonical.encode()).hexdigest()
    if digest != record.get("digest"):
        raise SessionIntegrityError(
            f"session {session_id!r} record digest mismatch: stored {record.get('digest')}, computed {digest}"
        )
    blobs: dict[str, bytes] = {}
    for name, expected in payload["blobs"].items():
        data = (sdir / name).read_bytes()
        actual = hashlib.sha256(data).hexdigest()
        if actual != expected:
            raise SessionIntegrityError(
                f"session {session_id!r} blob {name} digest mismatch: stored {expected}, computed {actual}"
            )
        blobs[name] = data

    def sketch_of(name: str) -> Sketch | None:
        if name not in blobs:
            return None
        return parse_svg(blobs[name].decode())

    input_sketch = sketch_of("input.svg")
    assert input_sketch is not None
    # input strokes serialize blue and parse back as input; enforce anyway
    input_sketch = input_sketch.with_strokes(s.with_tag(Tag.INPUT) for s in input_sketch.strokes)
    augmented = None
    if payload["augmented"] is not None:
        augmented = AugmentedPrompt(payload["augmented"]["base"], payload["augmented"]["style_descriptions"])
    guidance = raster.png_from_bytes(blobs["guidance.png"]) if "guidance.png" in blobs else None
    return SessionState(
        id=payload["id"],
        base_prompt=payload["base_prompt"],
        input_sketch=input_sketch,
        rng_seed=payload["rng_seed"],
        status=SessionStatus(payload["status"]),
        augmented=augmented,
        guidance=guidance,
        intermediate=sketch_of("intermediate.svg"),
        final=sketch_of("final.svg"),
        loss_trace=[_breakdown_from_json(d) for d in payload["loss_trace"]],
        adjustment_trace=[_step_from_json(d) for d in payload["adjustment_trace"]],
        failure_reason=payload["failure_reason"],
        warning=payload["warning"],
        parent_id=payload["parent_id"],
        vlm_transcript=payload["vlm_transcript"],
    )
