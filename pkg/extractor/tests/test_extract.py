"""End-to-end extraction tests, including the consumer-side acceptance
checks: the output must pass the primary toolkit's `validate` command,
image selection must return the cosine argmax on hand-built fixtures,
and the header dimension must equal the encoder width (512)."""
import json
import struct
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from cma_extractor.cli import main
from cma_extractor.extract import cosine_best_index, extract_file


def make_dataset(tmp_path, broken_image=False):
    img_dir = tmp_path / "img"
    img_dir.mkdir(exist_ok=True)
    colors = {
        "a1": (250, 10, 10), "a2": (10, 250, 10), "a3": (10, 10, 250),
        "b1": (200, 200, 0), "b2": (0, 200, 200),
        "c1": (123, 45, 67),
    }
    for name, color in colors.items():
        Image.new("RGB", (8, 8), color).save(img_dir / f"{name}.png")
    if broken_image:
        (img_dir / "a1.png").write_bytes(b"not a png at all")
    manifest = {
        "source_name": "toy-news",
        "items": [
            {"id": "item-a", "text": "a headline about politics",
             "images": ["img/a1.png", "img/a2.png", "img/a3.png"], "label": 0},
            {"id": "item-b", "text": "celebrity gossip story",
             "images": ["img/b1.png", "img/b2.png"], "label": 1},
            {"id": "item-c", "text": "no image for this one", "images": [], "label": 0},
            {"id": "item-d", "text": "one image", "images": ["img/c1.png"], "label": 1},
        ],
    }
    path = tmp_path / "dataset.json"
    path.write_text(json.dumps(manifest))
    return str(path)


class TestCosineSelection:
    def test_argmax_on_hand_built_fixtures(self):
        text = np.array([1.0, 0.0, 0.0])
        candidates = [
            np.array([0.0, 1.0, 0.0]),   # orthogonal
            np.array([0.9, 0.1, 0.0]),   # close
            np.array([-1.0, 0.0, 0.0]),  # opposite
        ]
        assert cosine_best_index(text, candidates) == 1

    def test_scale_invariance(self):
        text = np.array([1.0, 1.0])
        assert cosine_best_index(text, [np.array([5.0, 5.0]), np.array([1.0, 0.0])]) == 0

    def test_tie_breaks_to_lowest_index(self):
        text = np.array([1.0, 0.0])
        same = [np.array([2.0, 0.0]), np.array([4.0, 0.0])]
        assert cosine_best_index(text, same) == 0

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            cosine_best_index(np.zeros(2), [np.ones(2)])


class TestExtractPipeline:
    def test_writes_one_image_per_item(self, tmp_path):
        manifest = make_dataset(tmp_path)
        out = str(tmp_path / "toy.cmaf")
        stats = extract_file(manifest, "hash-64", out)
        assert stats.records_written == 3  # item-c dropped: no images
        assert stats.dropped_no_images == 1
        data = open(out, "rb").read()
        magic, version, dim, count = data[:4], *struct.unpack("<IIQ", data[4:20])
        assert magic == b"CMAF" and version == 1 and dim == 64 and count == 3
        # pooled mode: exactly one image row group per record (L_m = 1)
        sidecar = json.loads(open(f"{out}.json").read())
        assert sidecar["records"] == 3
        assert sidecar["extraction"]["encoder"] == "hash-64"

    def test_header_dimension_matches_encoder_width_512(self, tmp_path):
        manifest = make_dataset(tmp_path)
        out = str(tmp_path / "toy512.cmaf")
        extract_file(manifest, "hash-512", out)
        with open(out, "rb") as fh:
            header = fh.read(12)
        assert struct.unpack("<I", header[8:12])[0] == 512

    def test_undecodable_image_skipped_and_counted(self, tmp_path):
        manifest = make_dataset(tmp_path, broken_image=True)
        out = str(tmp_path / "toy.cmaf")
        stats = extract_file(manifest, "hash-64", out)
        assert stats.images_skipped_undecodable == 1
        assert "img/a1.png" in stats.skipped_image_paths
        assert stats.records_written == 3  # item-a still has 2 usable images
        sidecar = json.loads(open(f"{out}.json").read())
        assert sidecar["extraction"]["images_skipped_undecodable"] == 1

    def test_item_with_no_usable_image_dropped(self, tmp_path):
        img_dir = tmp_path / "img"
        img_dir.mkdir()
        (img_dir / "x.png").write_bytes(b"broken")
        path = tmp_path / "m.json"
        path.write_text(json.dumps({
            "items": [{"id": "only", "text": "t", "images": ["img/x.png"], "label": 0}],
        }))
        out = str(tmp_path / "empty.cmaf")
        stats = extract_file(str(path), "hash-32", out)
        assert stats.records_written == 0
        assert stats.dropped_all_images_unreadable == 1

    def test_deterministic_output_bytes(self, tmp_path):
        manifest = make_dataset(tmp_path)
        out1 = str(tmp_path / "one.cmaf")
        out2 = str(tmp_path / "two.cmaf")
        extract_file(manifest, "hash-64", out1)
        extract_file(manifest, "hash-64", out2)
        assert open(out1, "rb").read() == open(out2, "rb").read()

    def test_token_mode(self, tmp_path):
        manifest = make_dataset(tmp_path)
        out = str(tmp_path / "tokens.cmaf")
        extract_file(manifest, "hash-32", out, pooled=False)
        data = open(out, "rb").read()
        # first record: header 20 + id_len 4 + "item-a" 6 + label 1
        l_t, l_m = struct.unpack("<II", data[31:39])
        assert l_t == 4   # "a headline about politics" -> 4 word tokens
        assert l_m == 4   # 2x2 image patches

    def test_label_texts_in_sidecar(self, tmp_path):
        manifest = make_dataset(tmp_path)
        out = str(tmp_path / "lab.cmaf")
        extract_file(manifest, "hash-64", out, label_texts=("real news", "fake news"))
        sidecar = json.loads(open(f"{out}.json").read())
        aug = sidecar["label_augmentation"]
        assert aug["texts"] == {"real": "real news", "fake": "fake news"}
        assert len(aug["features"]["real"]) == 64
        assert len(aug["features"]["fake"]) == 64


class TestPrimaryInterop:
    """The output is consumed through the primary toolkit's public surfaces."""

    def test_output_passes_primary_validate(self, tmp_path):
        manifest = make_dataset(tmp_path)
        out = str(tmp_path / "interop.cmaf")
        extract_file(manifest, "hash-512", out)
        proc = subprocess.run(
            [sys.executable, "-m", "cma", "validate", out],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert "OK" in proc.stdout
        assert "3 records" in proc.stdout
        assert "dimension 512" in proc.stdout

    def test_token_mode_output_passes_primary_validate(self, tmp_path):
        manifest = make_dataset(tmp_path)
        out = str(tmp_path / "interop-tokens.cmaf")
        extract_file(manifest, "hash-64", out, pooled=False)
        proc = subprocess.run(
            [sys.executable, "-m", "cma", "validate", out],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr


class TestCli:
    def test_cli_roundtrip(self, tmp_path, capsys):
        manifest = make_dataset(tmp_path)
        out = str(tmp_path / "cli.cmaf")
        rc = main([manifest, "--out", out, "--encoder", "hash-64"])
        assert rc == 0
        assert "3 records" in capsys.readouterr().out

    def test_cli_missing_manifest(self, tmp_path):
        assert main([str(tmp_path / "absent.json"), "--out", "x.cmaf",
                     "--encoder", "hash-64"]) == 2

    def test_cli_unknown_encoder(self, tmp_path):
        manifest = make_dataset(tmp_path)
        assert main([manifest, "--out", str(tmp_path / "x.cmaf"),
                     "--encoder", "nope"]) == 2

    def test_cli_bad_label_texts(self, tmp_path):
        manifest = make_dataset(tmp_path)
        assert main([manifest, "--out", str(tmp_path / "x.cmaf"),
                     "--encoder", "hash-64", "--label-texts", "only-one"]) == 1
