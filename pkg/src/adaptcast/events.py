"""Lightweight event model used by the pipeline to decouple stages from bookkeeping.

Stages emit typed events; the manifest router turns them into manifest
entries and log lines without the stages knowing about either.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Any, Dict


class Category(Enum):
    """High-level event categories."""

    STAGE = auto()  # stage lifecycle (start, done, failed)
    ARTIFACT = auto()  # a file was written
    WARNING = auto()  # data-quality notices worth keeping in the manifest


@dataclass(slots=True)
class Event:
    """Event emitted by a pipeline stage."""

    category: Category
    type: str  # finer-grained identifier, e.g. "start", "written", "fallback"
    payload: Dict[str, Any] = field(default_factory=dict)
