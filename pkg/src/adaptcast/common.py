"""Shared exceptions and artifact I/O helpers.

Every stage writes plain CSV through :func:`write_csv` so that content hashes
are stable: fixed column order, ``\\n`` line endings, and a float format wide
enough to round-trip doubles. Missing values serialize as empty cells, the
Bayes-factor infinity sentinel as the literal ``inf``.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Final, Sequence

import pandas as pd

FLOAT_FORMAT: Final[str] = "%.17g"
PARTIAL_MARKER: Final[str] = ".partial"


class AdaptcastError(Exception):
    """Base for every error raised by the library."""


class ValidationError(AdaptcastError):
    """Raised when input data or arguments violate a precondition."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ParseError(ValidationError):
    """Raised for a malformed row in an input file, carrying the line number."""


class DegenerateInputError(AdaptcastError):
    """Raised when a statistic has no variance to work with."""


class UndefinedStatisticError(AdaptcastError):
    """Raised when a statistic is undefined for the given counts or values."""


class QueryError(AdaptcastError):
    """Raised for an ill-formed hypothesis query (empty or improper subclass)."""


class ConfigError(AdaptcastError):
    """Raised when a run file fails validation."""


class StageError(AdaptcastError):
    """Raised when a pipeline stage fails, naming the stage."""

    def __init__(self, stage: str, cause: BaseException | str):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


# ---------------------------------------------------------------------------
# Artifact helpers
# ---------------------------------------------------------------------------


def write_csv(frame: pd.DataFrame, path: Path, columns: Sequence[str] | None = None) -> Path:
    """Write *frame* to *path* deterministically and return the path."""
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is not None:
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise ValidationError(f"{path.name}: missing columns {missing}")
        frame = frame.loc[:, list(columns)]
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", na_rep="")
    return path


def read_csv(path: Path, required: Sequence[str] = ()) -> pd.DataFrame:
    """Read an artifact written by :func:`write_csv`, checking its header."""
    if not path.exists():
        raise ValidationError(f"artifact not found: {path}")
    frame = pd.read_csv(path, keep_default_na=True)
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ValidationError(f"{path.name}: missing columns {missing}")
    return frame


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
