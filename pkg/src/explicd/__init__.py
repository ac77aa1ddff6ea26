"""Label-wise-attention code assignment with rationale extraction and evaluation."""

from explicd.corpus import CodeLabel, Document, RationaleSpan, Token, load_annotations, load_documents
from explicd.errors import (ConfigError, EvaluationError, ExplicdError, ParseError, ShapeError,
                            TrainingError, ValidationError)

__version__ = "0.1.0"

__all__ = ["CodeLabel", "Document", "RationaleSpan", "Token", "load_annotations", "load_documents",
           "ConfigError", "EvaluationError", "ExplicdError", "ParseError", "ShapeError",
           "TrainingError", "ValidationError", "__version__"]
