"""Exception types shared across the package.

Every error carries a stable ``code`` so the CLI can emit machine-readable
failure records.
"""
from __future__ import annotations


class GCGMError(Exception):
    code = "GCGMError"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> dict:
        return {"error": self.code, "message": self.message, **self.context}


class MissingCell(GCGMError):
    code = "MissingCell"


class NonNumericCell(GCGMError):
    code = "NonNumericCell"


class SchemaMismatch(GCGMError):
    code = "SchemaMismatch"


class DegenerateColumn(GCGMError):
    code = "DegenerateColumn"


class GroupTooSmall(GCGMError):
    code = "GroupTooSmall"


class TooFewRows(GCGMError):
    code = "TooFewRows"


class NotSPD(GCGMError):
    code = "NotSPD"


class CompletionNotConverged(GCGMError):
    code = "CompletionNotConverged"


class NotDecomposable(GCGMError):
    code = "NotDecomposable"


class UnsupportedScale(GCGMError):
    code = "UnsupportedScale"


class UnsupportedDimension(GCGMError):
    code = "UnsupportedDimension"


class ConfigInvalid(GCGMError):
    code = "ConfigInvalid"


class EmptyAccumulator(GCGMError):
    code = "EmptyAccumulator"


class CheckpointError(GCGMError):
    code = "CheckpointError"
