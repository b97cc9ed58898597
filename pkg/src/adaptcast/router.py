"""Translate pipeline events into manifest entries and log lines.

The router lives *outside* the stages so that bookkeeping rules are declared
in a single place. It is straightforward to unit-test by feeding synthetic
Event objects.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

from .common import sha256_file
from .events import Category, Event

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class ManifestRouter:
    """Run-scoped helper that records artifacts, stages and warnings."""

    def __init__(self, out_dir: Path, config_digest: str = "") -> None:
        self.out_dir = out_dir
        self.config_digest = config_digest
        self.artifacts: dict[str, str] = {}
        self.stages: list[str] = []
        self.warnings: list[dict[str, Any]] = []
        self.failed: str | None = None

    # ------------------------------------------------------------------
    # Public dispatch entry
    # ------------------------------------------------------------------
    def __call__(self, ev: Event) -> None:  # stages call router(event)
        try:
            self.dispatch(ev)
        except Exception:  # noqa: BLE001
            logger.exception("Event routing failed for %s", ev)

    # ------------------------------------------------------------------
    # Internal dispatch
    # ------------------------------------------------------------------
    def dispatch(self, ev: Event) -> None:
        cat = ev.category
        if cat is Category.STAGE:
            self._handle_stage(ev)
        elif cat is Category.ARTIFACT:
            self._handle_artifact(ev)
        elif cat is Category.WARNING:
            self._handle_warning(ev)
        else:  # pragma: no cover – unknown category
            logger.debug("Ignoring event %s", ev)

    # ------------------------------------------------------------------
    # Category handlers
    # ------------------------------------------------------------------
    def _handle_stage(self, ev: Event) -> None:
        stage = ev.payload["stage"]
        t = ev.type
        if t == "start":
            logger.info("Stage %s started", stage)
        elif t == "done":
            if stage not in self.stages:
                self.stages.append(stage)
            logger.info("Stage %s done", stage)
        elif t == "failed":
            self.failed = stage
            logger.error("Stage %s failed: %s", stage, ev.payload.get("error", ""))
        else:
            logger.debug("Unhandled STAGE event: %s", ev)

    def _handle_artifact(self, ev: Event) -> None:
        if ev.type != "written":
            return
        path = Path(ev.payload["path"])
        name = path.relative_to(self.out_dir).as_posix() if path.is_relative_to(self.out_dir) else path.name
        self.artifacts[name] = sha256_file(path)
        logger.debug("Wrote %s", name)

    def _handle_warning(self, ev: Event) -> None:
        self.warnings.append({"type": ev.type, **ev.payload})
        logger.warning("%s: %s", ev.type, ev.payload.get("message", ev.payload))

    # ------------------------------------------------------------------
    # Helpers
    # ------------------------------------------------------------------
    def manifest(self) -> dict[str, Any]:
        return {
            "config_digest": self.config_digest,
            "stages": list(self.stages),
            "artifacts": dict(sorted(self.artifacts.items())),
            "warnings": list(self.warnings),
        }

    def write(self) -> Path:
        path = self.out_dir / MANIFEST_NAME
        path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, out_dir: Path) -> "ManifestRouter":
        """Resume from an existing manifest so that single stages can be re-run."""
        router = cls(out_dir)
        path = out_dir / MANIFEST_NAME
        if path.exists():
            data = json.loads(path.read_text())
            router.config_digest = data.get("config_digest", "")
            router.stages = list(data.get("stages", []))
            router.artifacts = dict(data.get("artifacts", {}))
            router.warnings = list(data.get("warnings", []))
        return router
