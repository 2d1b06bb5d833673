"""Writer for the CMAF feature-store format (the primary toolkit's input).

Layout, integers little-endian: magic ``CMAF``, version u32 (= 1),
dimension u32, record count u64; per record: id length u32 + UTF-8 id,
one label byte, text token count u32, image token count u32, then the
text and image token matrices as row-major float32.

This is an independent implementation of the published format; the
consumer side validates it (``cma validate``).
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"CMAF"
VERSION = 1


@dataclass
class OutputRecord:
    id: str
    label: int
    text_tokens: np.ndarray  # (L_t, d) float32
    image_tokens: np.ndarray  # (L_m, d) float32


def write_cmaf(records: list[OutputRecord], dimension: int, path: str) -> None:
    """Write records atomically (temp file + rename)."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, dimension, len(records)))
        for rec in records:
            text = np.ascontiguousarray(rec.text_tokens, dtype="<f4")
            image = np.ascontiguousarray(rec.image_tokens, dtype="<f4")
            if text.ndim != 2 or image.ndim != 2:
                raise ValueError(f"record {rec.id!r}: token matrices must be 2-D")
            if text.shape[1] != dimension or image.shape[1] != dimension:
                raise ValueError(
                    f"record {rec.id!r}: token width does not match dimension {dimension}"
                )
            raw_id = rec.id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_id)))
            fh.write(raw_id)
            fh.write(struct.pack("<BII", rec.label, text.shape[0], image.shape[0]))
            fh.write(text.tobytes())
            fh.write(image.tobytes())
    os.replace(tmp, path)


def write_sidecar(path: str, payload: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
