"""Feature stores: the CMAF file format, validation, and episode sampling.

CMAF layout (all integers little-endian):

    magic   4 bytes  b"CMAF"
    version u32      (= 1)
    d       u32      embedding dimension
    count   u64      number of records
    then per record:
        id_len  u32
        id      id_len bytes, UTF-8
        label   1 byte (0 = real news, 1 = fake news)
        L_t     u32  text token count  (>= 1)
        L_m     u32  image token count (>= 1)
        text    L_t * d float32, row-major
        image   L_m * d float32, row-major

Reading validates the magic, version, and every invariant before
returning, and distinguishes these failure classes: BadMagicError,
UnsupportedVersionError, TruncatedPayloadError, StoreDimensionError
(d = 0, empty token sequences), DuplicateIdError, InvalidRecordError
(bad label byte, undecodable id, non-finite values), TrailingDataError.

Stores are immutable after construction. Embeddings are held as float64
but quantized through float32 on construction, which is the storage
precision, so write -> read round-trips are bitwise lossless for every
valid store. ``source_name`` is not part of the binary payload; it
travels in the optional JSON manifest sidecar (``<path>.json``) and
falls back to the file stem when no sidecar is present.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BadMagicError,
    DegenerateVectorError,
    DimensionError,
    DuplicateIdError,
    InsufficientPopulationError,
    InvalidRecordError,
    StoreDimensionError,
    TrailingDataError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

MAGIC = b"CMAF"
FORMAT_VERSION = 1

_SAMPLE_STREAM = 0x534D504C  # "SMPL"

LABEL_REAL = 0
LABEL_FAKE = 1


def _quantize(arr) -> np.ndarray:
    """Round to float32 (the storage precision), then widen to float64."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


@dataclass(frozen=True)
class FeatureRecord:
    """One news item: id, binary label, and the two token matrices."""

    id: str
    label: int
    text_tokens: np.ndarray  # (L_t, d)
    image_tokens: np.ndarray  # (L_m, d)
    synthetic: bool = False  # label-augmentation records, never serialized


def make_record(id: str, label: int, text_tokens, image_tokens,
                synthetic: bool = False) -> FeatureRecord:
    """Validate and quantize raw arrays into a FeatureRecord."""
    if label not in (LABEL_REAL, LABEL_FAKE):
        raise InvalidRecordError(f"record {id!r}: label must be 0 or 1, got {label!r}")
    text = _quantize(text_tokens)
    image = _quantize(image_tokens)
    for name, m in (("text", text), ("image", image)):
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise StoreDimensionError(
                f"record {id!r}: {name} tokens must be a non-empty (L, d) matrix, got {m.shape}"
            )
        if not np.all(np.isfinite(m)):
            raise InvalidRecordError(f"record {id!r}: {name} tokens contain non-finite values")
    if text.shape[1] != image.shape[1]:
        raise StoreDimensionError(
            f"record {id!r}: text width {text.shape[1]} != image width {image.shape[1]}"
        )
    text.flags.writeable = False
    image.flags.writeable = False
    return FeatureRecord(id=id, label=int(label), text_tokens=text,
                         image_tokens=image, synthetic=synthetic)


class FeatureStore:
    """A validated, immutable collection of records of one width."""

    def __init__(self, dimension: int, records, source_name: str = ""):
        if dimension < 1:
            raise StoreDimensionError(f"store dimension must be positive, got {dimension}")
        recs = tuple(records)
        seen: set[str] = set()
        for i, rec in enumerate(recs):
            if rec.id in seen:
                raise DuplicateIdError(f"record {i} reuses id {rec.id!r}")
            seen.add(rec.id)
            if rec.text_tokens.shape[1] != dimension:
                raise StoreDimensionError(
                    f"record {i} ({rec.id!r}): width {rec.text_tokens.shape[1]} "
                    f"!= store dimension {dimension}"
                )
        self.dimension = int(dimension)
        self.records = recs
        self.source_name = source_name
        self._by_id = {rec.id: rec for rec in recs}

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, record_id: str) -> FeatureRecord:
        return self._by_id[record_id]

    def class_ids(self, label: int) -> tuple[str, ...]:
        """Record ids of one class, sorted so sampling ignores memory order."""
        return tuple(sorted(r.id for r in self.records if r.label == label))

    def class_counts(self) -> dict[int, int]:
        counts = {LABEL_REAL: 0, LABEL_FAKE: 0}
        for rec in self.records:
            counts[rec.label] += 1
        return counts


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def write_store(store: FeatureStore, path: str, manifest: bool = True) -> None:
    """Write the CMAF file (atomically) plus the JSON manifest sidecar."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", FORMAT_VERSION, store.dimension, len(store)))
        for rec in store.records:
            raw_id = rec.id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_id)))
            fh.write(raw_id)
            fh.write(struct.pack("<BII", rec.label,
                                 rec.text_tokens.shape[0], rec.image_tokens.shape[0]))
            fh.write(np.ascontiguousarray(rec.text_tokens, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(rec.image_tokens, dtype="<f4").tobytes())
    os.replace(tmp, path)
    if manifest:
        write_manifest(store, manifest_path(path))


def manifest_path(store_path: str) -> str:
    return f"{store_path}.json"


def write_manifest(store: FeatureStore, path: str, extra: dict | None = None) -> None:
    counts = store.class_counts()
    payload = {
        "format_version": FORMAT_VERSION,
        "source_name": store.source_name,
        "dimension": store.dimension,
        "records": len(store),
        "class_counts": {"real": counts[LABEL_REAL], "fake": counts[LABEL_FAKE]},
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


class _Cursor:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int, context: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"{self.path}: truncated payload while reading {context} "
                f"(needed {n} bytes at offset {self.pos}, file has {len(self.data)})"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, context: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), context))


def read_store(path: str) -> FeatureStore:
    """Parse and fully validate a CMAF file."""
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data, path)
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = cur.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: unsupported version {version}, this reader handles {FORMAT_VERSION}"
        )
    (dim,) = cur.unpack("<I", "dimension")
    if dim < 1:
        raise StoreDimensionError(f"{path}: header declares dimension {dim}")
    (count,) = cur.unpack("<Q", "record count")
    records = []
    seen: set[str] = set()
    for i in range(count):
        offset = cur.pos
        (id_len,) = cur.unpack("<I", f"record {i} id length")
        raw_id = cur.take(id_len, f"record {i} id")
        try:
            rec_id = raw_id.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvalidRecordError(
                f"{path}: record {i} at offset {offset}: id is not valid UTF-8"
            ) from exc
        if rec_id in seen:
            raise DuplicateIdError(
                f"{path}: record {i} at offset {offset} reuses id {rec_id!r}"
            )
        seen.add(rec_id)
        label, l_t, l_m = cur.unpack("<BII", f"record {i} ({rec_id!r}) header")
        if label not in (LABEL_REAL, LABEL_FAKE):
            raise InvalidRecordError(
                f"{path}: record {i} ({rec_id!r}): invalid label byte {label}"
            )
        if l_t < 1 or l_m < 1:
            raise StoreDimensionError(
                f"{path}: record {i} ({rec_id!r}): token counts must be >= 1, "
                f"got L_t={l_t} L_m={l_m}"
            )
        text = np.frombuffer(
            cur.take(4 * l_t * dim, f"record {i} ({rec_id!r}) text payload"), dtype="<f4"
        ).astype(np.float64).reshape(l_t, dim)
        image = np.frombuffer(
            cur.take(4 * l_m * dim, f"record {i} ({rec_id!r}) image payload"), dtype="<f4"
        ).astype(np.float64).reshape(l_m, dim)
        if not (np.all(np.isfinite(text)) and np.all(np.isfinite(image))):
            raise InvalidRecordError(
                f"{path}: record {i} ({rec_id!r}): payload contains non-finite values"
            )
        records.append(make_record(rec_id, label, text, image))
    if cur.pos != len(data):
        raise TrailingDataError(
            f"{path}: {len(data) - cur.pos} trailing bytes after the last record"
        )
    source_name = _source_name_for(path)
    return FeatureStore(dimension=dim, records=records, source_name=source_name)


def _source_name_for(path: str) -> str:
    mpath = manifest_path(path)
    if os.path.exists(mpath):
        try:
            with open(mpath, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
            name = manifest.get("source_name")
            if isinstance(name, str) and name:
                return name
        except (OSError, json.JSONDecodeError):
            pass
    stem = os.path.basename(path)
    return stem[:-5] if stem.endswith(".cmaf") else stem


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Episode:
    """A deterministic n-shot split of one store.

    ``train_ids``/``val_ids`` hold exactly n_shot ids per class;
    ``test_ids`` are all remaining records. ``extra_train`` carries
    synthetic label-augmentation records that exist only in memory.
    """

    store: FeatureStore
    n_shot: int
    seed: int
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    extra_train: tuple[FeatureRecord, ...] = ()

    def train_records(self) -> list[FeatureRecord]:
        return [self.store[i] for i in self.train_ids] + list(self.extra_train)

    def val_records(self) -> list[FeatureRecord]:
        return [self.store[i] for i in self.val_ids]

    def test_records(self) -> list[FeatureRecord]:
        return [self.store[i] for i in self.test_ids]


def sample_episode(store: FeatureStore, n_shot: int, seed: int,
                   with_validation: bool = True) -> Episode:
    """Class-stratified sampling without replacement.

    The generator is keyed by (seed, store.source_name) and draws from
    id-sorted class lists, so the result depends only on the store's
    contents, never on in-memory record order.
    """
    if n_shot < 1:
        raise InsufficientPopulationError(f"n_shot must be at least 1, got {n_shot}")
    need = 2 * n_shot if with_validation else n_shot
    name_hash = hashlib.sha256(store.source_name.encode("utf-8")).digest()
    words = struct.unpack("<4Q", name_hash[:32])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(
        [seed & 0xFFFFFFFFFFFFFFFF, _SAMPLE_STREAM, *words]
    )))
    train: list[str] = []
    val: list[str] = []
    chosen: set[str] = set()
    for label in (LABEL_REAL, LABEL_FAKE):
        ids = store.class_ids(label)
        if len(ids) < need:
            raise InsufficientPopulationError(
                f"class {label} has {len(ids)} records in {store.source_name!r}, "
                f"need {need} for a {n_shot}-shot episode"
                + (" with validation" if with_validation else "")
            )
        order = rng.permutation(len(ids))
        picked = [ids[j] for j in order[:need]]
        train.extend(picked[:n_shot])
        val.extend(picked[n_shot:need])
        chosen.update(picked)
    test = tuple(sorted(r.id for r in store.records if r.id not in chosen))
    return Episode(
        store=store,
        n_shot=n_shot,
        seed=seed,
        train_ids=tuple(sorted(train)),
        val_ids=tuple(sorted(val)),
        test_ids=test,
    )


def select_best_image(text_feature, candidates) -> int:
    """Index of the candidate with the highest cosine similarity.

    Ties break to the lowest index; zero-norm inputs are rejected rather
    than silently scored.
    """
    t = np.asarray(text_feature, dtype=np.float64)
    if t.ndim != 1 or t.size == 0:
        raise DimensionError(f"text feature must be a non-empty vector, got shape {t.shape}")
    cands = [np.asarray(c, dtype=np.float64) for c in candidates]
    if not cands:
        raise DimensionError("select_best_image: no candidates")
    t_norm = float(np.linalg.norm(t))
    if t_norm < 1e-12:
        raise DegenerateVectorError("text feature has (near-)zero norm")
    best_idx = 0
    best_sim = -np.inf
    for i, c in enumerate(cands):
        if c.shape != t.shape:
            raise DimensionError(
                f"candidate {i} has shape {c.shape}, text feature has {t.shape}"
            )
        c_norm = float(np.linalg.norm(c))
        if c_norm < 1e-12:
            raise DegenerateVectorError(f"candidate {i} has (near-)zero norm")
        sim = float(np.dot(t, c)) / (t_norm * c_norm)
        if sim > best_sim:
            best_sim = sim
            best_idx = i
    return best_idx


def augment_with_labels(episode: Episode, label_features, enabled: bool = True) -> Episode:
    """Append one synthetic train record per class built from label embeddings.

    ``label_features`` maps each class (0 and 1) to one width-d text
    embedding; the embedding stands in for both modalities. Synthetic
    records never enter validation or test sets. Off by default at every
    call site; pass ``enabled=False`` to get the episode back unchanged.
    """
    if not enabled:
        return episode
    if sorted(label_features) != [LABEL_REAL, LABEL_FAKE]:
        raise DimensionError(
            f"label_features must provide exactly classes 0 and 1, got {sorted(label_features)}"
        )
    extras = []
    for label in (LABEL_REAL, LABEL_FAKE):
        vec = np.asarray(label_features[label], dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] != episode.store.dimension:
            raise DimensionError(
                f"label feature for class {label} has shape {vec.shape}, "
                f"expected ({episode.store.dimension},)"
            )
        tokens = vec[None, :]
        extras.append(make_record(
            id=f"__label_{label}__", label=label,
            text_tokens=tokens, image_tokens=tokens, synthetic=True,
        ))
    return replace(episode, extra_train=episode.extra_train + tuple(extras))
