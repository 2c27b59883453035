"""Exception types shared across the toolkit."""


class VizmarkError(Exception):
    """Base class for toolkit-specific failures."""


class ShapeError(VizmarkError, ValueError):
    """Array shape violates an operation's precondition."""


class FormatError(VizmarkError, ValueError):
    """Unsupported or corrupt file format."""


class GeometryError(VizmarkError, ValueError):
    """Coordinates fall outside the target canvas."""


class DivergenceError(VizmarkError, RuntimeError):
    """Training produced a non-finite loss."""


class TransportError(VizmarkError, RuntimeError):
    """Remote backend failed after exhausting retries."""


class PromptParseError(VizmarkError, ValueError):
    """Backend response carries no extractable JSON block."""


class SchemaValidationError(VizmarkError, ValueError):
    """Backend JSON violates the expected schema.

    ``field_path`` names the offending field, e.g.
    ``tampered_regions[0].tampered_component[1]``.
    """

    def __init__(self, message, field_path=""):
        super().__init__(message)
        self.field_path = field_path


class AnalysisError(VizmarkError, RuntimeError):
    """Intent pipeline failed after the single structured re-ask."""
