"""Shared exception types."""
from __future__ import annotations


class SketchfillError(Exception):
    """Base class for all package errors."""


class SvgParseError(SketchfillError):
    """Malformed SVG input; carries 1-based line/column when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{loc}")


class UnsupportedSvgFeatureError(SketchfillError):
    """Valid SVG using a feature outside the supported subset."""


class DegenerateEmbeddingError(SketchfillError):
    """A perceptual embedding had zero norm; cosine similarity is undefined."""


class BackendCapabilityError(SketchfillError):
    """The perceptual backend cannot provide pixel-space adjoints."""


class NoFreeSpaceError(SketchfillError):
    """Stroke initialization found no mask-free pixel to anchor on."""


class NonFiniteGradientError(SketchfillError):
    """An optimizer step received a NaN/Inf gradient."""

    def __init__(self, label: str):
        self.label = label
        super().__init__(f"non-finite gradient for parameter of {label}")


class GuidanceUnavailableError(SketchfillError):
    """The guidance image could not be produced (missing file, bad service)."""


class ProviderContractError(SketchfillError):
    """A guidance provider returned an image violating its contract."""


class VlmUnavailableError(SketchfillError):
    """Live VLM call failed after retries."""


class AugmentationUnavailableError(SketchfillError):
    """Prompt augmentation failed; callers may fall back to the fixed suffix."""


class MissingFixtureError(SketchfillError):
    """Replay mode found no stored reply for a request digest."""

    def __init__(self, digest: str):
        self.digest = digest
        super().__init__(f"no recorded reply for request digest {digest}")


class ReportParseError(SketchfillError):
    """The style-difference reply could not be parsed even after a retry."""


class CodegenFailureError(SketchfillError):
    """Adjustment-program generation failed to parse three times in a row."""


class DslSyntaxError(SketchfillError):
    """Adjustment-program text violates the grammar."""

    def __init__(self, message: str, line: int, column: int, expected: tuple[str, ...] = ()):
        self.line = line
        self.column = column
        self.expected = expected
        hint = f"; expected one of: {', '.join(expected)}" if expected else ""
        super().__init__(f"{message} at line {line}, column {column}{hint}")


class DslPolicyError(SketchfillError):
    """A program statement would modify input strokes, which is forbidden."""


class DslEvaluationError(SketchfillError):
    """Expression evaluation failed for a statement/stroke pair."""

    def __init__(self, message: str, statement_index: int, stroke_id: str):
        self.statement_index = statement_index
        self.stroke_id = stroke_id
        super().__init__(f"statement {statement_index}, stroke {stroke_id!r}: {message}")


class SessionNotFoundError(SketchfillError):
    """No stored session with the requested id."""


class SessionIntegrityError(SketchfillError):
    """A stored session record failed its content-digest check."""


class InvalidTransitionError(SketchfillError):
    """A pipeline stage was invoked in the wrong session status."""


class UnknownStrokeIdsError(SketchfillError):
    """An iteration request referenced stroke ids absent from the parent."""

    def __init__(self, ids: list[str]):
        self.ids = list(ids)
        super().__init__(f"unknown retained stroke ids: {', '.join(sorted(self.ids))}")
