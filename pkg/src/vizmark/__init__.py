"""vizmark: semi-fragile watermarking for chart images.

Embeds a pre-agreed location map into a chart through an invertible
coupling network, localizes tampering by thresholding the revealed map's
residual, and explains flagged regions with a rule-constrained two-agent
analysis pipeline.
"""

__version__ = "0.1.0"

from .errors import (
    AnalysisError,
    DivergenceError,
    FormatError,
    GeometryError,
    PromptParseError,
    SchemaValidationError,
    ShapeError,
    TransportError,
    VizmarkError,
)

__all__ = [
    "AnalysisError",
    "DivergenceError",
    "FormatError",
    "GeometryError",
    "PromptParseError",
    "SchemaValidationError",
    "ShapeError",
    "TransportError",
    "VizmarkError",
    "__version__",
]
