"""Style-adjustment DSL: grammar, interpreter, and the iterate-until-stable
adjustment loop.

Grammar (statements end with ';', '#' comments run to end of line):

    statement := "select" selector ("where" bexpr)? "=>" action ";"
    selector  := "generated" | "input" | "all"
    action    := "delete" | "set" attr "=" expr | "translate" "(" num "," num ")"
              | "smooth" "(" num ")" | "simplify" "(" num ")" | "split" "(" int ")"
    attr      := "width" | "opacity"
    bexpr     := expr cmp expr with "and"/"or"/parens, cmp in { < <= > >= == }
    expr      := num | attr | "length" | "curvature" | "input_width"
              | expr (+|-|*|/) expr | min(e,e) | max(e,e) | clamp(e,lo,hi)

Interpreter semantics: statements run in order; within one statement the
selector, predicate, and expressions all read the pre-statement snapshot.
Input strokes are hard-protected: programs may only select "generated";
"input"/"all" selectors raise a policy error here (they exist for read-only
tooling).
"""
from __future__ import annotations

import hashlib
import statistics
from dataclasses import dataclass, replace
from enum import Enum
from math import atan2, isfinite, pi

import numpy as np

from .errors import (
    CodegenFailureError,
    DslEvaluationError,
    DslPolicyError,
    DslSyntaxError,
    ReportParseError,
    SketchfillError,
    VlmUnavailableError,
    MissingFixtureError,
)
from .geometry import Point, Sketch, Stroke, Tag, bernstein_matrix, split_curve, stroke_length
from .svgio import serialize_svg

__all__ = [
    "Selector",
    "Num",
    "AttrRef",
    "BinOp",
    "Call",
    "Cmp",
    "BoolOp",
    "Delete",
    "SetAttr",
    "Translate",
    "Smooth",
    "Simplify",
    "Split",
    "Statement",
    "AdjustmentProgram",
    "parse_program",
    "print_program",
    "apply_program",
    "sketch_fingerprint",
    "adjustment_loop",
    "AdjustmentStep",
    "AdjustmentResult",
    "stroke_curvature",
]

LENGTH_SEGMENTS = 64
CURVATURE_SAMPLES = 16
# floors keeping SetAttr results inside Stroke invariants
MIN_WIDTH = 0.01


class Selector(Enum):
    GENERATED = "generated"
    INPUT = "input"
    ALL = "all"


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class AttrRef:
    name: str  # width | opacity | length | curvature | input_width


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str  # min | max | clamp
    args: tuple["Expr", ...]


Expr = Num | AttrRef | BinOp | Call


@dataclass(frozen=True)
class Cmp:
    op: str  # < <= > >= ==
    left: Expr
    right: Expr


@dataclass(frozen=True)
class BoolOp:
    op: str  # and | or
    left: "BoolExpr"
    right: "BoolExpr"


BoolExpr = Cmp | BoolOp


@dataclass(frozen=True)
class Delete:
    pass


@dataclass(frozen=True)
class SetAttr:
    attr: str  # width | opacity
    expr: Expr


@dataclass(frozen=True)
class Translate:
    dx: float
    dy: float


@dataclass(frozen=True)
class Smooth:
    lam: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise DslSyntaxError(f"smooth factor must be in [0, 1], got {self.lam}", 0, 0)


@dataclass(frozen=True)
class Simplify:
    tolerance: float


@dataclass(frozen=True)
class Split:
    n: int

    def __post_init__(self) -> None:
        if self.n < 2:
            raise DslSyntaxError(f"split needs at least 2 pieces, got {self.n}", 0, 0)


Action = Delete | SetAttr | Translate | Smooth | Simplify | Split


@dataclass(frozen=True)
class Statement:
    selector: Selector
    predicate: BoolExpr | None
    action: Action


@dataclass(frozen=True)
class AdjustmentProgram:
    statements: tuple[Statement, ...]


# --- lexer -----------------------------------------------------------------

_KEYWORDS = {
    "select", "where", "generated", "input", "all", "delete", "set",
    "translate", "smooth", "simplify", "split", "width", "opacity",
    "length", "curvature", "input_width", "min", "max", "clamp", "and", "or",
}
_SYMBOLS = ("=>", "<=", ">=", "==", ";", "(", ")", ",", "<", ">", "=", "+", "-", "*", "/")


@dataclass(frozen=True)
class _Token:
    kind: str  # kw | num | sym | eof
    text: str
    line: int
    col: int


def _lex(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        matched_sym = next((s for s in _SYMBOLS if text.startswith(s, i)), None)
        if matched_sym:
            tokens.append(_Token("sym", matched_sym, line, col))
            i += len(matched_sym)
            col += len(matched_sym)
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            tokens.append(_Token("num", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            if word not in _KEYWORDS:
                raise DslSyntaxError(f"unknown word {word!r}", line, col, tuple(sorted(_KEYWORDS)))
            tokens.append(_Token("kw", word, line, col))
            col += j - i
            i = j
            continue
        raise DslSyntaxError(f"unexpected character {c!r}", line, col, _SYMBOLS)
    tokens.append(_Token("eof", "", line, col))
    return tokens


# --- parser ----------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.text != text:
            raise DslSyntaxError(
                f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.line, tok.col, (text,)
            )
        return self.next()

    def fail(self, message: str, expected: tuple[str, ...] = ()) -> DslSyntaxError:
        tok = self.peek()
        return DslSyntaxError(message, tok.line, tok.col, expected)

    # statements

    def parse_program(self) -> AdjustmentProgram:
        statements = []
        while self.peek().kind != "eof":
            statements.append(self.parse_statement())
        return AdjustmentProgram(tuple(statements))

    def parse_statement(self) -> Statement:
        self.expect("select")
        tok = self.next()
        try:
            selector = Selector(tok.text)
        except ValueError:
            raise DslSyntaxError(
                f"expected a selector, found {tok.text!r}", tok.line, tok.col, ("generated", "input", "all")
            ) from None
        predicate = None
        if self.peek().text == "where":
            self.next()
            predicate = self.parse_bexpr()
        self.expect("=>")
        action = self.parse_action()
        self.expect(";")
        return Statement(selector, predicate, action)

    def parse_action(self) -> Action:
        tok = self.next()
        if tok.text == "delete":
            return Delete()
        if tok.text == "set":
            attr = self.next()
            if attr.text not in ("width", "opacity"):
                raise DslSyntaxError(
                    f"only width/opacity can be set, found {attr.text!r}", attr.line, attr.col, ("width", "opacity")
                )
            self.expect("=")
            return SetAttr(attr.text, self.parse_expr())
        if tok.text == "translate":
            self.expect("(")
            dx = self.parse_signed_number()
            self.expect(",")
            dy = self.parse_signed_number()
            self.expect(")")
            return Translate(dx, dy)
        if tok.text == "smooth":
            self.expect("(")
            lam = self.parse_signed_number()
            self.expect(")")
            if not 0.0 <= lam <= 1.0:
                raise DslSyntaxError(f"smooth factor must be in [0, 1], got {lam}", tok.line, tok.col)
            return Smooth(lam)
        if tok.text == "simplify":
            self.expect("(")
            tol = self.parse_signed_number()
            self.expect(")")
            return Simplify(tol)
        if tok.text == "split":
            self.expect("(")
            num = self.next()
            if num.kind != "num" or "." in num.text or "e" in num.text.lower():
                raise DslSyntaxError(f"split needs an integer, found {num.text!r}", num.line, num.col)
            self.expect(")")
            n = int(num.text)
            if n < 2:
                raise DslSyntaxError(f"split needs at least 2 pieces, got {n}", num.line, num.col)
            return Split(n)
        raise DslSyntaxError(
            f"expected an action, found {tok.text!r}",
            tok.line,
            tok.col,
            ("delete", "set", "translate", "smooth", "simplify", "split"),
        )

    def parse_signed_number(self) -> float:
        sign = 1.0
        if self.peek().text == "-":
            self.next()
            sign = -1.0
        tok = self.next()
        if tok.kind != "num":
            raise DslSyntaxError(f"expected a number, found {tok.text!r}", tok.line, tok.col)
        return sign * float(tok.text)

    # boolean expressions

    def parse_bexpr(self) -> BoolExpr:
        left = self.parse_band()
        while self.peek().text == "or":
            self.next()
            left = BoolOp("or", left, self.parse_band())
        return left

    def parse_band(self) -> BoolExpr:
        left = self.parse_bfactor()
        while self.peek().text == "and":
            self.next()
            left = BoolOp("and", left, self.parse_bfactor())
        return left

    def parse_bfactor(self) -> BoolExpr:
        if self.peek().text == "(":
            # '(' may open a boolean group or a parenthesized arithmetic expr
            saved = self.pos
            self.next()
            try:
                inner = self.parse_bexpr()
                self.expect(")")
                return inner
            except DslSyntaxError:
                self.pos = saved
        return self.parse_comparison()

    def parse_comparison(self) -> Cmp:
        left = self.parse_expr()
        tok = self.peek()
        if tok.text not in ("<", "<=", ">", ">=", "=="):
            raise self.fail(f"expected a comparison, found {tok.text!r}", ("<", "<=", ">", ">=", "=="))
        self.next()
        right = self.parse_expr()
        return Cmp(tok.text, left, right)

    # arithmetic expressions

    def parse_expr(self) -> Expr:
        left = self.parse_term()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            left = BinOp(op, left, self.parse_term())
        return left

    def parse_term(self) -> Expr:
        left = self.parse_unary()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            left = BinOp(op, left, self.parse_unary())
        return left

    def parse_unary(self) -> Expr:
        if self.peek().text == "-":
            self.next()
            operand = self.parse_unary()
            if isinstance(operand, Num):
                return Num(-operand.value)
            return BinOp("-", Num(0.0), operand)
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        tok = self.next()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.text in ("width", "opacity", "length", "curvature", "input_width"):
            return AttrRef(tok.text)
        if tok.text in ("min", "max", "clamp"):
            self.expect("(")
            args = [self.parse_expr()]
            while self.peek().text == ",":
                self.next()
                args.append(self.parse_expr())
            self.expect(")")
            want = 3 if tok.text == "clamp" else 2
            if len(args) != want:
                raise DslSyntaxError(f"{tok.text} takes {want} arguments, got {len(args)}", tok.line, tok.col)
            return Call(tok.text, tuple(args))
        if tok.text == "(":
            inner = self.parse_expr()
            self.expect(")")
            return inner
        raise DslSyntaxError(
            f"expected an expression, found {tok.text or 'end of input'!r}",
            tok.line,
            tok.col,
            ("number", "width", "opacity", "length", "curvature", "input_width", "min", "max", "clamp", "("),
        )


def parse_program(text: str) -> AdjustmentProgram:
    parser = _Parser(_lex(text))
    return parser.parse_program()


# --- printer ---------------------------------------------------------------


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _print_expr(e: Expr) -> str:
    if isinstance(e, Num):
        # a leading '-' re-parses as unary minus folded back into the literal
        return _fmt_num(e.value) if e.value >= 0 else f"-{_fmt_num(-e.value)}"
    if isinstance(e, AttrRef):
        return e.name
    if isinstance(e, BinOp):
        return f"({_print_expr(e.left)} {e.op} {_print_expr(e.right)})"
    if isinstance(e, Call):
        return f"{e.fn}({', '.join(_print_expr(a) for a in e.args)})"
    raise TypeError(f"not an expression: {e!r}")


def _print_bexpr(b: BoolExpr) -> str:
    if isinstance(b, Cmp):
        return f"{_print_expr(b.left)} {b.op} {_print_expr(b.right)}"
    return f"({_print_bexpr(b.left)}) {b.op} ({_print_bexpr(b.right)})"


def _print_action(a: Action) -> str:
    if isinstance(a, Delete):
        return "delete"
    if isinstance(a, SetAttr):
        return f"set {a.attr} = {_print_expr(a.expr)}"
    if isinstance(a, Translate):
        return f"translate({_fmt_num(a.dx) if a.dx >= 0 else '-' + _fmt_num(-a.dx)}, " \
               f"{_fmt_num(a.dy) if a.dy >= 0 else '-' + _fmt_num(-a.dy)})"
    if isinstance(a, Smooth):
        return f"smooth({_fmt_num(a.lam)})"
    if isinstance(a, Simplify):
        return f"simplify({_fmt_num(a.tolerance) if a.tolerance >= 0 else '-' + _fmt_num(-a.tolerance)})"
    if isinstance(a, Split):
        return f"split({a.n})"
    raise TypeError(f"not an action: {a!r}")


def print_program(program: AdjustmentProgram) -> str:
    lines = []
    for st in program.statements:
        where = f" where {_print_bexpr(st.predicate)}" if st.predicate is not None else ""
        lines.append(f"select {st.selector.value}{where} => {_print_action(st.action)};")
    return "\n".join(lines) + ("\n" if lines else "")


# --- evaluation ------------------------------------------------------------


def stroke_curvature(stroke: Stroke, samples: int = CURVATURE_SAMPLES) -> float:
    """Mean absolute turning angle per unit length over uniform-t samples."""
    pts = bernstein_matrix(samples) @ stroke.curve.as_array()
    vecs = np.diff(pts, axis=0)
    lens = np.hypot(vecs[:, 0], vecs[:, 1])
    total_len = float(lens.sum())
    if total_len < 1e-12:
        return 0.0
    turning = 0.0
    prev = None
    for v, l in zip(vecs, lens):
        if l < 1e-12:
            continue
        ang = atan2(v[1], v[0])
        if prev is not None:
            d = abs(ang - prev)
            if d > pi:
                d = 2 * pi - d
            turning += d
        prev = ang
    return turning / total_len


class _StrokeEnv:
    """Lazy pre-statement attribute snapshot for one stroke."""

    def __init__(self, stroke: Stroke, input_width: float):
        self.stroke = stroke
        self.input_width = input_width
        self._length: float | None = None
        self._curvature: float | None = None

    def get(self, name: str) -> float:
        if name == "width":
            return self.stroke.width
        if name == "opacity":
            return self.stroke.opacity
        if name == "input_width":
            return self.input_width
        if name == "length":
            if self._length is None:
                self._length = stroke_length(self.stroke, LENGTH_SEGMENTS)
            return self._length
        if name == "curvature":
            if self._curvature is None:
                self._curvature = stroke_curvature(self.stroke)
            return self._curvature
        raise KeyError(name)


def _eval_expr(e: Expr, env: _StrokeEnv) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, AttrRef):
        return env.get(e.name)
    if isinstance(e, BinOp):
        left = _eval_expr(e.left, env)
        right = _eval_expr(e.right, env)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        if right == 0.0:
            raise ZeroDivisionError("division by zero")
        return left / right
    if isinstance(e, Call):
        args = [_eval_expr(a, env) for a in e.args]
        if e.fn == "min":
            return min(args)
        if e.fn == "max":
            return max(args)
        lo, hi = args[1], args[2]
        return min(max(args[0], lo), hi)
    raise TypeError(f"not an expression: {e!r}")


def _eval_bexpr(b: BoolExpr, env: _StrokeEnv) -> bool:
    if isinstance(b, Cmp):
        left = _eval_expr(b.left, env)
        right = _eval_expr(b.right, env)
        return {
            "<": left < right,
            "<=": left <= right,
            ">": left > right,
            ">=": left >= right,
            "==": left == right,
        }[b.op]
    if b.op == "and":
        return _eval_bexpr(b.left, env) and _eval_bexpr(b.right, env)
    return _eval_bexpr(b.left, env) or _eval_bexpr(b.right, env)


def _median_input_width(sketch: Sketch) -> float:
    widths = [s.width for s in sketch.strokes if s.tag is Tag.INPUT]
    return statistics.median(widths) if widths else 2.0


def apply_program(program: AdjustmentProgram, sketch: Sketch) -> Sketch:
    """Run the program; input strokes are never modified or deleted."""
    input_width = _median_input_width(sketch)
    strokes = list(sketch.strokes)
    for index, st in enumerate(program.statements):
        if st.selector is not Selector.GENERATED:
            raise DslPolicyError(
                f"statement {index}: selector {st.selector.value!r} would touch input strokes; "
                "adjustment programs may only select generated"
            )
        snapshot = {s.id: _StrokeEnv(s, input_width) for s in strokes}

        def selected(s: Stroke) -> bool:
            if s.tag is not Tag.GENERATED:
                return False
            if st.predicate is None:
                return True
            try:
                return _eval_bexpr(st.predicate, snapshot[s.id])
            except (ZeroDivisionError, OverflowError) as exc:
                raise DslEvaluationError(str(exc), index, s.id) from exc

        action = st.action
        out: list[Stroke] = []
        for s in strokes:
            if not selected(s):
                out.append(s)
                continue
            env = snapshot[s.id]
            if isinstance(action, Delete):
                continue
            if isinstance(action, Simplify):
                if env.get("length") < action.tolerance:
                    continue
                out.append(s)
            elif isinstance(action, SetAttr):
                try:
                    value = _eval_expr(action.expr, env)
                except (ZeroDivisionError, OverflowError) as exc:
                    raise DslEvaluationError(str(exc), index, s.id) from exc
                if not isfinite(value):
                    raise DslEvaluationError(f"expression produced {value!r}", index, s.id)
                if action.attr == "width":
                    out.append(replace(s, width=max(value, MIN_WIDTH)))
                else:
                    out.append(replace(s, opacity=min(max(value, 0.0), 1.0)))
            elif isinstance(action, Translate):
                out.append(_translate_clamped(s, action.dx, action.dy, sketch.canvas_w, sketch.canvas_h))
            elif isinstance(action, Smooth):
                out.append(_smooth_stroke(s, action.lam))
            elif isinstance(action, Split):
                for i, piece in enumerate(split_curve(s.curve, action.n)):
                    out.append(replace(s, curve=piece, id=f"{s.id}_s{i}"))
            else:
                raise TypeError(f"unhandled action {action!r}")
        strokes = out
    return sketch.with_strokes(strokes)


def _translate_clamped(s: Stroke, dx: float, dy: float, canvas_w: int, canvas_h: int) -> Stroke:
    xs = [p.x for p in s.curve.points]
    ys = [p.y for p in s.curve.points]
    dx = min(max(dx, -canvas_w - min(xs)), 2.0 * canvas_w - max(xs))
    dy = min(max(dy, -canvas_h - min(ys)), 2.0 * canvas_h - max(ys))
    moved = [Point(p.x + dx, p.y + dy) for p in s.curve.points]
    return replace(s, curve=type(s.curve)(*moved))


def _smooth_stroke(s: Stroke, lam: float) -> Stroke:
    """Move interior control points toward their projections on the chord line."""
    p0, p1, p2, p3 = s.curve.points
    cx, cy = p3.x - p0.x, p3.y - p0.y
    norm2 = cx * cx + cy * cy
    if norm2 < 1e-18:
        return s
    def toward_chord(p: Point) -> Point:
        t = ((p.x - p0.x) * cx + (p.y - p0.y) * cy) / norm2
        fx, fy = p0.x + t * cx, p0.y + t * cy
        return Point(p.x + lam * (fx - p.x), p.y + lam * (fy - p.y))
    return replace(s, curve=type(s.curve)(p0, toward_chord(p1), toward_chord(p2), p3))


def sketch_fingerprint(sketch: Sketch) -> str:
    """Stable digest of the canonical 4-decimal serialization."""
    return hashlib.sha256(serialize_svg(sketch).encode()).hexdigest()


# --- adjustment loop ---------------------------------------------------------


@dataclass(frozen=True)
class AdjustmentStep:
    report_text: str
    program_text: str
    fingerprint: str
    stroke_count: int
    note: str | None = None


@dataclass(frozen=True)
class AdjustmentResult:
    final: Sketch
    trace: tuple[AdjustmentStep, ...]
    warning: str | None = None


def adjustment_loop(client, sketch: Sketch, prompt, max_iters: int = 5) -> AdjustmentResult:
    """Detect differences, generate a program, apply, repeat until stable.

    Codegen failure in an iteration degrades to the identity program (which
    also terminates the loop via the unchanged fingerprint); a detection
    failure stops the loop with a warning and the trace so far.
    """
    from .raster import CanvasSpec, render_two_tone
    from .vlm import detect_style_differences, generate_adjustment_program, load_skeleton

    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    spec = CanvasSpec(sketch.canvas_w, sketch.canvas_h)
    skeleton = load_skeleton()
    current = sketch
    trace: list[AdjustmentStep] = []
    for _ in range(max_iters):
        fp_before = sketch_fingerprint(current)
        two_tone = render_two_tone(current, spec)
        svg_text = serialize_svg(current)
        try:
            report = detect_style_differences(client, two_tone, svg_text)
        except (ReportParseError, VlmUnavailableError, MissingFixtureError) as exc:
            return AdjustmentResult(current, tuple(trace), warning=f"difference detection failed: {exc}")
        note = None
        try:
            program_text = generate_adjustment_program(client, report, svg_text, prompt, skeleton)
        except CodegenFailureError as exc:
            program_text = ""
            note = f"codegen failed, applied identity program: {exc}"
        program = parse_program(program_text)
        try:
            new = apply_program(program, current)
        except SketchfillError as exc:
            new = current
            note = f"program application failed, kept sketch unchanged: {exc}"
        fp_after = sketch_fingerprint(new)
        trace.append(AdjustmentStep(report.as_text(), program_text, fp_after, len(new.strokes), note))
        current = new
        if fp_after == fp_before:
            break
    return AdjustmentResult(current, tuple(trace))
