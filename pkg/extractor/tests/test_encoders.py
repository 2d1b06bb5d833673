import numpy as np
import pytest
from PIL import Image

from cma_extractor.encoders import EncoderError, HashEncoder, build_encoder, load_image


def make_image(color, size=(8, 8)):
    return Image.new("RGB", size, color)


class TestHashEncoder:
    def test_width_and_shapes(self):
        enc = HashEncoder(512)
        (text,) = enc.encode_texts(["some headline"], pooled=True)
        assert text.shape == (1, 512)
        assert text.dtype == np.float32
        (img,) = enc.encode_images([make_image((10, 20, 30))], pooled=True)
        assert img.shape == (1, 512)

    def test_deterministic(self):
        enc = HashEncoder(64)
        a = enc.encode_texts(["same text"], pooled=True)[0]
        b = enc.encode_texts(["same text"], pooled=True)[0]
        assert np.array_equal(a, b)
        im = make_image((1, 2, 3))
        x = enc.encode_images([im], pooled=True)[0]
        y = enc.encode_images([make_image((1, 2, 3))], pooled=True)[0]
        assert np.array_equal(x, y)

    def test_different_inputs_differ(self):
        enc = HashEncoder(64)
        a = enc.encode_texts(["one"], pooled=True)[0]
        b = enc.encode_texts(["two"], pooled=True)[0]
        assert not np.array_equal(a, b)

    def test_token_mode_shapes(self):
        enc = HashEncoder(32)
        (tokens,) = enc.encode_texts(["three word headline"], pooled=False)
        assert tokens.shape == (3, 32)
        (patches,) = enc.encode_images([make_image((5, 5, 5))], pooled=False)
        assert patches.shape == (4, 32)

    def test_token_cap(self):
        enc = HashEncoder(16)
        long_text = " ".join(f"w{i}" for i in range(100))
        (tokens,) = enc.encode_texts([long_text], pooled=False)
        assert tokens.shape[0] == 16


class TestRegistry:
    def test_hash_names(self):
        assert build_encoder("hash-512").width == 512
        assert build_encoder("hash-64").width == 64

    def test_unknown_encoder(self):
        with pytest.raises(EncoderError):
            build_encoder("word2vec")

    def test_bad_hash_width(self):
        with pytest.raises(EncoderError):
            build_encoder("hash-lots")


class TestLoadImage:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "img.png"
        make_image((200, 100, 0), size=(6, 4)).save(path)
        im = load_image(str(path))
        assert im.size == (6, 4)

    def test_undecodable_raises_oserror(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_bytes(b"this is not a png")
        with pytest.raises(OSError):
            load_image(str(path))
