"""Export provenance record written next to every produced archive."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import TemplateError

PLACEHOLDER = "[CLASS]"
DEFAULT_TEMPLATE = "a 3D model of a [CLASS]"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class ExportManifest:
    """What produced an archive: model, prompt, classes, tensor names.

    ``template`` is None for image exports, where no prompt is involved;
    when present it must contain the class placeholder exactly once.
    """

    model: str
    classes: list[str]
    items: dict[str, str]  # item id -> tensor name (identity for us)
    template: str | None = None
    created: str = field(default_factory=_now)

    def __post_init__(self):
        if self.template is not None and self.template.count(PLACEHOLDER) != 1:
            raise TemplateError(
                f"template must contain {PLACEHOLDER} exactly once, "
                f"got {self.template!r}"
            )

    def write(self, archive_path: str | Path,
              shapes: dict[str, tuple[int, ...]]) -> None:
        payload = {
            "model": self.model,
            "template": self.template,
            "classes": self.classes,
            "items": self.items,
            "created": self.created,
            "tensors": {name: list(shape) for name, shape in shapes.items()},
        }
        Path(str(archive_path) + ".manifest.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8"
        )
