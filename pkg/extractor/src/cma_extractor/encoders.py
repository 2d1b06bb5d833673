"""Dual text/image encoders behind one small interface.

Two families:

* ``hash-512`` (and ``hash-<d>``): a deterministic stand-in encoder that
  derives unit-scale vectors from content digests. No weights, no
  network, bit-reproducible; meant for tests, demos, and pipeline
  plumbing. Similar content does not map to similar vectors.

* ``clip-vit-b-32`` / ``chinese-clip-vit-b-16``: the real pretrained
  dual encoders (512-wide projection space), loaded lazily through
  ``transformers``. Importing and downloading happens only when one is
  actually requested; a clear error explains what is missing otherwise.

Encoders return one (L, d) float32 matrix per input; pooled mode is
L = 1. Selection between candidate images always uses pooled vectors.
"""
from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

TEXT_TOKEN_CAP = 16
IMAGE_PATCH_GRID = 2  # token mode: 2x2 quadrants


class EncoderError(RuntimeError):
    """The requested encoder cannot be constructed or run."""


class HashEncoder:
    """Deterministic content-keyed vectors (no semantics, no weights)."""

    def __init__(self, width: int = 512):
        if width < 1:
            raise EncoderError(f"encoder width must be positive, got {width}")
        self.width = width
        self.name = f"hash-{width}"

    def _vector(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(payload).digest()
        seed = np.frombuffer(digest[:16], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed.tolist())))
        return rng.normal(size=self.width).astype(np.float32)

    def encode_texts(self, texts, pooled: bool = True) -> list[np.ndarray]:
        out = []
        for text in texts:
            norm = " ".join(str(text).split())
            if pooled:
                out.append(self._vector(b"text\x00" + norm.encode("utf-8"))[None, :])
            else:
                words = norm.split()[:TEXT_TOKEN_CAP] or [""]
                rows = [self._vector(f"text-token\x00{i}\x00{w}".encode("utf-8"))
                        for i, w in enumerate(words)]
                out.append(np.stack(rows))
        return out

    def encode_images(self, images, pooled: bool = True) -> list[np.ndarray]:
        out = []
        for image in images:
            rgb = image.convert("RGB")
            if pooled:
                out.append(self._vector(b"image\x00" + rgb.tobytes())[None, :])
            else:
                w, h = rgb.size
                rows = []
                for gy in range(IMAGE_PATCH_GRID):
                    for gx in range(IMAGE_PATCH_GRID):
                        box = (gx * w // 2, gy * h // 2, (gx + 1) * w // 2, (gy + 1) * h // 2)
                        patch = rgb.crop(box)
                        rows.append(self._vector(
                            f"image-patch\x00{gy}{gx}\x00".encode("ascii") + patch.tobytes()
                        ))
                out.append(np.stack(rows))
        return out


_CLIP_MODELS = {
    "clip-vit-b-32": "openai/clip-vit-base-patch32",
    "chinese-clip-vit-b-16": "OFA-Sys/chinese-clip-vit-base-patch16",
}


class ClipEncoder:
    """Pretrained dual encoder via transformers (512-wide projections)."""

    def __init__(self, name: str):
        try:
            import torch
            from transformers import AutoModel, AutoProcessor
        except ImportError as exc:
            raise EncoderError(
                f"encoder {name!r} needs the optional 'clip' extra "
                f"(pip install cma-extractor[clip]): {exc}"
            ) from exc
        self.name = name
        self._torch = torch
        try:
            self._model = AutoModel.from_pretrained(_CLIP_MODELS[name])
            self._processor = AutoProcessor.from_pretrained(_CLIP_MODELS[name])
        except Exception as exc:
            raise EncoderError(
                f"could not load pretrained weights for {name!r} "
                f"({_CLIP_MODELS[name]}); check network/cache: {exc}"
            ) from exc
        self._model.eval()
        self.width = int(self._model.config.projection_dim)

    def encode_texts(self, texts, pooled: bool = True) -> list[np.ndarray]:
        if not pooled:
            raise EncoderError(f"{self.name}: token-sequence text output is not wired up")
        with self._torch.inference_mode():
            inputs = self._processor(text=list(texts), return_tensors="pt",
                                     padding=True, truncation=True)
            feats = self._model.get_text_features(**inputs)
        return [row[None, :] for row in feats.cpu().numpy().astype(np.float32)]

    def encode_images(self, images, pooled: bool = True) -> list[np.ndarray]:
        if not pooled:
            raise EncoderError(f"{self.name}: token-sequence image output is not wired up")
        with self._torch.inference_mode():
            inputs = self._processor(images=[im.convert("RGB") for im in images],
                                     return_tensors="pt")
            feats = self._model.get_image_features(**inputs)
        return [row[None, :] for row in feats.cpu().numpy().astype(np.float32)]


def build_encoder(name: str):
    """Construct an encoder by registry name."""
    if name in _CLIP_MODELS:
        return ClipEncoder(name)
    if name.startswith("hash-"):
        try:
            width = int(name.split("-", 1)[1])
        except ValueError:
            raise EncoderError(f"bad hash encoder name {name!r}, expected hash-<width>")
        return HashEncoder(width)
    known = ", ".join(sorted([*_CLIP_MODELS, "hash-512"]))
    raise EncoderError(f"unknown encoder {name!r}; known: {known}")


def load_image(path: str) -> Image.Image:
    """Decode an image file; raises OSError subclasses on undecodable input."""
    with Image.open(path) as im:
        im.load()
        return im.copy()
