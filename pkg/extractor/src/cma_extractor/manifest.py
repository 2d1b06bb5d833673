"""Dataset manifests: the JSON description of a raw multimodal dataset.

Schema:

    {
      "source_name": "politifact",
      "items": [
        {"id": "p-001", "text": "...", "images": ["img/a.jpg", ...], "label": 0},
        ...
      ]
    }

Relative image paths resolve against the manifest file's directory.
Items without any image path are dropped on load (and counted), since a
multimodal record needs both modalities.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass


class ManifestError(ValueError):
    """The manifest file is malformed or violates an invariant."""


@dataclass(frozen=True)
class ManifestItem:
    id: str
    text: str
    images: tuple[str, ...]
    label: int


@dataclass
class DatasetManifest:
    source_name: str
    items: list[ManifestItem]
    dropped_no_images: int = 0
    base_dir: str = "."

    def resolve(self, path: str) -> str:
        if os.path.isabs(path):
            return path
        return os.path.join(self.base_dir, path)


def load_manifest(path: str) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "items" not in payload:
        raise ManifestError(f"{path}: expected an object with an 'items' list")
    raw_items = payload["items"]
    if not isinstance(raw_items, list):
        raise ManifestError(f"{path}: 'items' must be a list")
    source_name = payload.get("source_name") or os.path.splitext(os.path.basename(path))[0]

    items: list[ManifestItem] = []
    seen: set[str] = set()
    dropped = 0
    for i, raw in enumerate(raw_items):
        for key in ("id", "text", "label"):
            if key not in raw:
                raise ManifestError(f"{path}: item {i} is missing {key!r}")
        item_id = str(raw["id"])
        if item_id in seen:
            raise ManifestError(f"{path}: duplicate item id {item_id!r}")
        seen.add(item_id)
        label = raw["label"]
        if label not in (0, 1):
            raise ManifestError(f"{path}: item {item_id!r} has label {label!r}, expected 0 or 1")
        images = tuple(str(p) for p in raw.get("images", []))
        if not images:
            dropped += 1
            continue
        items.append(ManifestItem(id=item_id, text=str(raw["text"]),
                                  images=images, label=int(label)))
    return DatasetManifest(
        source_name=source_name,
        items=items,
        dropped_no_images=dropped,
        base_dir=os.path.dirname(os.path.abspath(path)),
    )
