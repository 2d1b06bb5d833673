"""The extraction pipeline: manifest -> encoder -> best image -> CMAF.

Every item's text is encoded once; every decodable candidate image is
encoded and the one with the highest cosine similarity to the text (in
the encoder's own pooled embedding space) is kept. Features are stored
un-normalized; the consumer owns all normalization. Undecodable images
are skipped with a warning and counted in the sidecar; an item with no
usable image is dropped.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cmaf import OutputRecord, write_cmaf, write_sidecar
from .encoders import build_encoder, load_image
from .manifest import DatasetManifest, load_manifest

log = logging.getLogger("cma_extractor")


def cosine_best_index(text_vec: np.ndarray, candidates: list[np.ndarray]) -> int:
    """Argmax cosine similarity; ties break to the lowest index."""
    t = np.asarray(text_vec, dtype=np.float64).ravel()
    t_norm = float(np.linalg.norm(t))
    if t_norm < 1e-12:
        raise ValueError("text embedding has (near-)zero norm")
    best_idx = 0
    best_sim = -np.inf
    for i, cand in enumerate(candidates):
        c = np.asarray(cand, dtype=np.float64).ravel()
        c_norm = float(np.linalg.norm(c))
        if c_norm < 1e-12:
            raise ValueError(f"candidate {i} has (near-)zero norm")
        sim = float(np.dot(t, c)) / (t_norm * c_norm)
        if sim > best_sim:
            best_sim = sim
            best_idx = i
    return best_idx


@dataclass
class ExtractionStats:
    items_in_manifest: int = 0
    records_written: int = 0
    dropped_no_images: int = 0
    dropped_all_images_unreadable: int = 0
    images_skipped_undecodable: int = 0
    skipped_image_paths: list[str] = field(default_factory=list)


def extract(manifest: DatasetManifest, encoder_name: str, out_path: str,
            pooled: bool = True, label_texts: tuple[str, str] | None = None,
            batch_size: int = 32) -> ExtractionStats:
    """Run the pipeline and write ``out_path`` (plus ``out_path + '.json'``)."""
    encoder = build_encoder(encoder_name)
    stats = ExtractionStats(
        items_in_manifest=len(manifest.items) + manifest.dropped_no_images,
        dropped_no_images=manifest.dropped_no_images,
    )

    records: list[OutputRecord] = []
    kept_items = []
    kept_images = []
    for item in manifest.items:
        decoded = []
        for rel_path in item.images:
            path = manifest.resolve(rel_path)
            try:
                decoded.append(load_image(path))
            except OSError as exc:
                stats.images_skipped_undecodable += 1
                stats.skipped_image_paths.append(rel_path)
                log.warning("item %s: skipping undecodable image %s (%s)",
                            item.id, rel_path, exc)
        if not decoded:
            stats.dropped_all_images_unreadable += 1
            log.warning("item %s: no usable image, dropping item", item.id)
            continue
        kept_items.append(item)
        kept_images.append(decoded)

    # Pooled vectors drive image selection regardless of the output mode.
    selection_text = _batched(encoder.encode_texts,
                              [it.text for it in kept_items], batch_size, pooled=True)
    for item, images, text_vec in zip(kept_items, kept_images, selection_text):
        image_vecs = encoder.encode_images(images, pooled=True)
        best = cosine_best_index(text_vec[0], [v[0] for v in image_vecs])
        if pooled:
            text_tokens = text_vec
            image_tokens = image_vecs[best]
        else:
            text_tokens = encoder.encode_texts([item.text], pooled=False)[0]
            image_tokens = encoder.encode_images([images[best]], pooled=False)[0]
        records.append(OutputRecord(
            id=item.id, label=item.label,
            text_tokens=text_tokens, image_tokens=image_tokens,
        ))
    stats.records_written = len(records)

    write_cmaf(records, encoder.width, out_path)
    sidecar = {
        "format_version": 1,
        "source_name": manifest.source_name,
        "dimension": encoder.width,
        "records": len(records),
        "class_counts": {
            "real": sum(1 for r in records if r.label == 0),
            "fake": sum(1 for r in records if r.label == 1),
        },
        "extraction": {
            "encoder": encoder.name,
            "pooled": pooled,
            "items_in_manifest": stats.items_in_manifest,
            "dropped_no_images": stats.dropped_no_images,
            "dropped_all_images_unreadable": stats.dropped_all_images_unreadable,
            "images_skipped_undecodable": stats.images_skipped_undecodable,
            "skipped_image_paths": stats.skipped_image_paths,
        },
    }
    if label_texts is not None:
        real_text, fake_text = label_texts
        vecs = encoder.encode_texts([real_text, fake_text], pooled=True)
        sidecar["label_augmentation"] = {
            "texts": {"real": real_text, "fake": fake_text},
            "features": {
                "real": vecs[0][0].astype(float).tolist(),
                "fake": vecs[1][0].astype(float).tolist(),
            },
        }
    write_sidecar(f"{out_path}.json", sidecar)
    return stats


def _batched(encode, inputs, batch_size, **kw) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for start in range(0, len(inputs), batch_size):
        out.extend(encode(inputs[start:start + batch_size], **kw))
    return out


def extract_file(manifest_path: str, encoder_name: str, out_path: str,
                 pooled: bool = True, label_texts: tuple[str, str] | None = None,
                 batch_size: int = 32) -> ExtractionStats:
    return extract(load_manifest(manifest_path), encoder_name, out_path,
                   pooled=pooled, label_texts=label_texts, batch_size=batch_size)
