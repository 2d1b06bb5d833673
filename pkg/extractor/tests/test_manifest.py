import json

import pytest

from cma_extractor.manifest import ManifestError, load_manifest


def write_manifest(tmp_path, payload):
    path = tmp_path / "data.json"
    path.write_text(json.dumps(payload))
    return str(path)


def test_basic_load(tmp_path):
    path = write_manifest(tmp_path, {
        "source_name": "demo",
        "items": [
            {"id": "a", "text": "hello", "images": ["a.png"], "label": 0},
            {"id": "b", "text": "world", "images": ["b.png", "c.png"], "label": 1},
        ],
    })
    manifest = load_manifest(path)
    assert manifest.source_name == "demo"
    assert [it.id for it in manifest.items] == ["a", "b"]
    assert manifest.items[1].images == ("b.png", "c.png")
    assert manifest.dropped_no_images == 0


def test_items_without_images_are_dropped_and_counted(tmp_path):
    path = write_manifest(tmp_path, {
        "items": [
            {"id": "a", "text": "x", "images": [], "label": 0},
            {"id": "b", "text": "y", "images": ["b.png"], "label": 1},
            {"id": "c", "text": "z", "label": 0},
        ],
    })
    manifest = load_manifest(path)
    assert [it.id for it in manifest.items] == ["b"]
    assert manifest.dropped_no_images == 2


def test_duplicate_ids_rejected(tmp_path):
    path = write_manifest(tmp_path, {
        "items": [
            {"id": "a", "text": "x", "images": ["a.png"], "label": 0},
            {"id": "a", "text": "y", "images": ["b.png"], "label": 1},
        ],
    })
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_bad_label_rejected(tmp_path):
    path = write_manifest(tmp_path, {
        "items": [{"id": "a", "text": "x", "images": ["a.png"], "label": 3}],
    })
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_missing_field_rejected(tmp_path):
    path = write_manifest(tmp_path, {"items": [{"id": "a", "images": ["x.png"]}]})
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_source_name_defaults_to_stem(tmp_path):
    path = write_manifest(tmp_path, {"items": []})
    assert load_manifest(path).source_name == "data"


def test_relative_paths_resolve_against_manifest_dir(tmp_path):
    path = write_manifest(tmp_path, {
        "items": [{"id": "a", "text": "x", "images": ["img/a.png"], "label": 0}],
    })
    manifest = load_manifest(path)
    assert manifest.resolve("img/a.png") == str(tmp_path / "img" / "a.png")
