"""Command-line front door: complete, render, adjust, serve.

Configuration precedence: built-in defaults, then the --config JSON file,
then explicit flags. Exit codes: 0 success, 1 runtime failure, 2 usage.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

from .dsl import adjustment_loop, apply_program, parse_program
from .errors import SketchfillError
from .geometry import Sketch, Tag
from .guidance import FileGuidanceProvider, HttpGuidanceProvider
from .objective import LossWeights
from .optimizer import OptimizerConfig, trace_to_csv
from .perceptual import PyramidBackend
from .pipeline import Pipeline, PipelineConfig, SessionStatus, SessionStore, save_session
from .raster import SEGMENTS_FINAL, CanvasSpec, load_png, render, save_png
from .svgio import parse_svg, serialize_svg
from .vlm import AugmentedPrompt, FixtureStore, VlmClient, VlmMode

USAGE_ERROR = 2
RUNTIME_ERROR = 1

_OPTIMIZER_FIELDS = (
    "n_strokes",
    "iterations",
    "lr_position",
    "lr_width",
    "lr_opacity",
    "beta1",
    "beta2",
    "epsilon",
    "rng_seed",
    "snapshot_every",
    "overlap_samples",
    "aa_band",
)
_WEIGHT_FIELDS = ("alpha", "beta", "gamma")
_PIPELINE_FIELDS = ("mask_dilation", "mask_blur_sigma", "adjust_max_iters", "augment_fallback")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file (defaults < file < flags)")
    for name in _OPTIMIZER_FIELDS:
        p.add_argument(f"--{name.replace('_', '-')}", type=float, default=None, dest=name)
    for name in _WEIGHT_FIELDS:
        p.add_argument(f"--{name}", type=float, default=None, dest=f"weight_{name}")
    for name in _PIPELINE_FIELDS:
        p.add_argument(f"--{name.replace('_', '-')}", type=float, default=None, dest=name)
    p.add_argument("--guidance", choices=("file", "http"), default=None)
    p.add_argument("--guidance-path", type=Path, default=None)
    p.add_argument("--guidance-endpoint", default=None)
    p.add_argument("--vlm", choices=("live", "record", "replay"), default=None)
    p.add_argument("--fixture-dir", type=Path, default=None)


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, config file, and flags into one concrete mapping."""
    merged: dict = {
        **{f.name: getattr(OptimizerConfig(), f.name) for f in fields(OptimizerConfig) if f.name != "weights"},
        **{f"weight_{n}": getattr(LossWeights(), n) for n in _WEIGHT_FIELDS},
        "mask_dilation": 2,
        "mask_blur_sigma": 3.0,
        "adjust_max_iters": 5,
        "augment_fallback": True,
        "guidance": "file",
        "guidance_path": None,
        "guidance_endpoint": None,
        "vlm": "replay",
        "fixture_dir": None,
    }
    config_path = getattr(args, "config", None)
    if config_path is not None:
        loaded = json.loads(Path(config_path).read_text())
        for key, value in loaded.items():
            if key not in merged:
                raise SketchfillError(f"unknown config key {key!r}")
            merged[key] = value
    for key in list(merged):
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    for int_key in ("n_strokes", "iterations", "rng_seed", "snapshot_every", "overlap_samples", "mask_dilation", "adjust_max_iters"):
        merged[int_key] = int(merged[int_key])
    merged["augment_fallback"] = bool(merged["augment_fallback"])
    return merged


def _build_optimizer_config(merged: dict) -> OptimizerConfig:
    weights = LossWeights(merged["weight_alpha"], merged["weight_beta"], merged["weight_gamma"])
    kwargs = {name: merged[name] for name in _OPTIMIZER_FIELDS}
    return OptimizerConfig(weights=weights, **kwargs)


def _build_pipeline(merged: dict, store: SessionStore | None) -> Pipeline:
    if merged["guidance"] == "file":
        if not merged["guidance_path"]:
            raise SketchfillError("file guidance needs --guidance-path")
        provider = FileGuidanceProvider(merged["guidance_path"])
    else:
        import os

        endpoint = merged["guidance_endpoint"] or os.environ.get("GUIDANCE_ENDPOINT")
        if not endpoint:
            raise SketchfillError("http guidance needs --guidance-endpoint or GUIDANCE_ENDPOINT")
        provider = HttpGuidanceProvider(endpoint)
    mode = VlmMode(merged["vlm"])
    fixture_store = FixtureStore(merged["fixture_dir"]) if merged["fixture_dir"] else None
    client = VlmClient(mode=mode, store=fixture_store)
    config = PipelineConfig(
        optimizer=_build_optimizer_config(merged),
        mask_dilation=merged["mask_dilation"],
        mask_blur_sigma=merged["mask_blur_sigma"],
        adjust_max_iters=merged["adjust_max_iters"],
        augment_fallback=merged["augment_fallback"],
    )
    return Pipeline(client, provider, PyramidBackend(), config, store)


def cmd_complete(args: argparse.Namespace) -> int:
    merged = resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pipeline = _build_pipeline(merged, SessionStore(out_dir / "sessions"))
    svg_text = Path(args.input).read_text()
    session = pipeline.create_session(args.prompt, svg_text, seed=merged["rng_seed"])
    session = pipeline.complete(session)
    if session.intermediate is not None:
        (out_dir / "intermediate.svg").write_text(serialize_svg(session.intermediate))
    if session.final is not None:
        (out_dir / "final.svg").write_text(serialize_svg(session.final))
    if session.guidance is not None:
        save_png(session.guidance, out_dir / "guidance.png")
    (out_dir / "trace.csv").write_text(trace_to_csv(session.loss_trace))
    record = pipeline.store.session_dir(session.id) / "session.json"
    (out_dir / "session.json").write_text(record.read_text())
    if session.status is not SessionStatus.DONE:
        print(f"completion failed: {session.failure_reason}", file=sys.stderr)
        return RUNTIME_ERROR
    if session.warning:
        print(f"warning: {session.warning}", file=sys.stderr)
    print(f"session {session.id} done; outputs in {out_dir}")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    sketch = parse_svg(Path(args.input).read_text())
    spec = CanvasSpec(sketch.canvas_w, sketch.canvas_h)
    save_png(render(sketch, spec, SEGMENTS_FINAL), args.out)
    return 0


def cmd_adjust(args: argparse.Namespace) -> int:
    sketch = parse_svg(Path(args.input).read_text())
    if args.program is not None:
        program = parse_program(Path(args.program).read_text())
        adjusted = apply_program(program, sketch)
    else:
        merged = resolve_config(args)
        fixture_store = FixtureStore(merged["fixture_dir"]) if merged["fixture_dir"] else None
        client = VlmClient(mode=VlmMode(merged["vlm"]), store=fixture_store)
        prompt = AugmentedPrompt(args.prompt or "a sketch", "matching the existing stroke style")
        result = adjustment_loop(client, sketch, prompt, max_iters=merged["adjust_max_iters"])
        if result.warning:
            print(f"warning: {result.warning}", file=sys.stderr)
        adjusted = result.final
    Path(args.out).write_text(serialize_svg(adjusted))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .server import create_app

    merged = resolve_config(args)
    store = SessionStore(Path(args.store)) if args.store else None
    pipeline = _build_pipeline(merged, store)
    app = create_app(pipeline, static_dir=args.static)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    except OSError as exc:
        print(f"cannot serve on port {args.port}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchfill", description="Prompt-guided vector sketch completion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("complete", help="run both stages on an input sketch")
    p.add_argument("--prompt", required=True)
    p.add_argument("--input", required=True, type=Path, help="input SVG path")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("render", help="rasterize an SVG sketch to PNG")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("adjust", help="apply a style-adjustment program (or run the VLM loop)")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--program", type=Path, help="DSL program file (offline, no VLM)")
    p.add_argument("--prompt", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("serve", help="serve the HTTP API and web UI")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--store", type=Path, default=None, help="session store directory")
    p.add_argument("--static", type=Path, default=None, help="static web UI directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except SketchfillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
