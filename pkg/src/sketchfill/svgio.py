"""Strict SVG-subset parser and canonical serializer.

Supported documents: a root ``svg`` element with integer ``width``/``height``,
containing ``path`` elements whose ``d`` uses absolute M, L, C commands only.
Strokes colored rgb(51,102,178) are tagged as input strokes; everything else
is tagged generated. Serialization is canonical: 4 decimal places with
trailing zeros trimmed, one path per stroke, so that parse(serialize(s))
round-trips.
"""
from __future__ import annotations

import re
import xml.etree.ElementTree as ET

from .errors import SvgParseError, UnsupportedSvgFeatureError
from .geometry import CubicBezier, Point, Sketch, Stroke, Tag, line_to_cubic

__all__ = ["INPUT_COLOR", "parse_svg", "serialize_svg", "format_number"]

# Input strokes travel as this blue in the SVG interchange format.
INPUT_COLOR = (51, 102, 178)

_RGB_RE = re.compile(r"rgb\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\)")
_TOKEN_RE = re.compile(r"[MLCZQATSHVmlczqatshv]|[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


def format_number(v: float) -> str:
    """Canonical numeric format: 4 decimals, trailing zeros and dot trimmed."""
    s = f"{v:.4f}"
    s = s.rstrip("0").rstrip(".")
    if s in ("-0", ""):
        s = "0"
    return s


def _parse_color(value: str | None) -> tuple[int, int, int] | None:
    if value is None:
        return None
    m = _RGB_RE.fullmatch(value.strip())
    if not m:
        return None
    return (int(m.group(1)), int(m.group(2)), int(m.group(3)))


def _localname(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_dimension(root: ET.Element, name: str) -> int:
    raw = root.get(name)
    if raw is None:
        raise SvgParseError(f"svg root missing {name!r} attribute")
    try:
        value = int(raw.strip())
    except ValueError:
        raise SvgParseError(f"svg {name!r} must be a positive integer, got {raw!r}") from None
    if value <= 0:
        raise SvgParseError(f"svg {name!r} must be positive, got {value}")
    return value


def _path_curves(d: str, path_label: str) -> list[CubicBezier]:
    """Lower a d-attribute into cubics. M starts a subpath, L is degree-elevated."""
    tokens = _TOKEN_RE.findall(d)
    pos = 0
    current: Point | None = None
    curves: list[CubicBezier] = []

    def take_numbers(n: int, cmd: str) -> list[float]:
        nonlocal pos
        if pos + n > len(tokens):
            raise SvgParseError(f"path {path_label!r}: command {cmd} needs {n} numbers")
        out = []
        for tok in tokens[pos : pos + n]:
            try:
                out.append(float(tok))
            except ValueError:
                raise SvgParseError(f"path {path_label!r}: expected number, got {tok!r}") from None
        pos += n
        return out

    while pos < len(tokens):
        cmd = tokens[pos]
        if not cmd.isalpha():
            raise SvgParseError(f"path {path_label!r}: expected command, got {cmd!r}")
        pos += 1
        if cmd == "M":
            x, y = take_numbers(2, cmd)
            current = Point(x, y)
        elif cmd == "L":
            if current is None:
                raise SvgParseError(f"path {path_label!r}: L before any M")
            x, y = take_numbers(2, cmd)
            end = Point(x, y)
            curves.append(line_to_cubic(current, end))
            current = end
        elif cmd == "C":
            if current is None:
                raise SvgParseError(f"path {path_label!r}: C before any M")
            x1, y1, x2, y2, x3, y3 = take_numbers(6, cmd)
            end = Point(x3, y3)
            curves.append(CubicBezier(current, Point(x1, y1), Point(x2, y2), end))
            current = end
        else:
            raise UnsupportedSvgFeatureError(
                f"path {path_label!r}: unsupported path command {cmd!r} (only absolute M, L, C)"
            )
    return curves


def parse_svg(text: str) -> Sketch:
    """Parse an SVG document into a Sketch.

    One Stroke per cubic segment; multi-segment paths get deterministic
    ``_c<i>`` id suffixes. Color rgb(51,102,178) marks input strokes.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, column = exc.position if exc.position else (None, None)
        raise SvgParseError(f"malformed XML: {exc.msg.split(':')[0] if exc.msg else 'parse error'}",
                            line, column) from exc

    if _localname(root.tag) != "svg":
        raise SvgParseError(f"root element must be svg, got {_localname(root.tag)!r}")
    width = _parse_dimension(root, "width")
    height = _parse_dimension(root, "height")

    strokes: list[Stroke] = []
    auto_index = 0
    for elem in root.iter():
        if _localname(elem.tag) != "path":
            continue
        label = elem.get("id") or f"path{auto_index}"
        if elem.get("id") is None:
            auto_index += 1

        d = elem.get("d", "")
        curves = _path_curves(d, label)

        color = _parse_color(elem.get("stroke"))
        tag = Tag.INPUT if color == INPUT_COLOR else Tag.GENERATED
        try:
            stroke_width = float(elem.get("stroke-width", "2"))
            opacity = float(elem.get("stroke-opacity", "1"))
        except ValueError as exc:
            raise SvgParseError(f"path {label!r}: bad numeric attribute: {exc}") from None

        for i, curve in enumerate(curves):
            sid = label if len(curves) == 1 else f"{label}_c{i}"
            strokes.append(Stroke(curve=curve, width=stroke_width, opacity=opacity, tag=tag, id=sid))

    return Sketch(tuple(strokes), width, height)


def _color_of(stroke: Stroke) -> str:
    if stroke.tag is Tag.INPUT:
        r, g, b = INPUT_COLOR
        return f"rgb({r},{g},{b})"
    return "rgb(0,0,0)"


def serialize_svg(sketch: Sketch) -> str:
    """Canonical SVG text for a sketch; stable under parse/serialize cycles."""
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{sketch.canvas_w}" height="{sketch.canvas_h}">'
    ]
    for s in sketch.strokes:
        p0, p1, p2, p3 = s.curve.points
        d = (
            f"M {format_number(p0.x)} {format_number(p0.y)} "
            f"C {format_number(p1.x)} {format_number(p1.y)} "
            f"{format_number(p2.x)} {format_number(p2.y)} "
            f"{format_number(p3.x)} {format_number(p3.y)}"
        )
        lines.append(
            f'  <path id="{s.id}" d="{d}" fill="none" stroke="{_color_of(s)}" '
            f'stroke-width="{format_number(s.width)}" stroke-opacity="{format_number(s.opacity)}"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
