"""
Error types for the Reading-Order Restoration system.
Every failure raised by the library derives from ReadingOrderError so the CLI
can map it to an exit code.
"""

from typing import Optional


class ReadingOrderError(Exception):
    """Base class for all library errors."""


class InvalidPolygonError(ReadingOrderError, ValueError):
    """A polygon has too few vertices or is otherwise unusable."""


class MaskConfigError(ReadingOrderError):
    """A mask operation was asked for an impossible scale or parameter."""


class GenerationError(ReadingOrderError):
    """The synthetic page generator cannot satisfy a spec."""


class EvaluationError(ReadingOrderError):
    """An evaluation protocol received unusable input (e.g. empty ground truth)."""


class ConfigError(ReadingOrderError):
    """A configuration file or override is malformed or invalid."""


class InputError(ReadingOrderError):
    """
    A file could not be read or one of its records is invalid.
    The CLI exits with code 1 on these.
    """

    def __init__(self, message: str, path: Optional[str] = None, index: Optional[int] = None):
        self.path = path
        self.index = index
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if index is not None:
            prefix += f"record {index}: "
        super().__init__(f"{prefix}{message}")


class PipelineError(ReadingOrderError):
    """
    A processing stage failed for one page.
    The CLI exits with code 2 on these.
    """

    def __init__(self, page_id: str, stage: str, message: str):
        self.page_id = page_id
        self.stage = stage
        super().__init__(f"page {page_id}: stage '{stage}' failed: {message}")
