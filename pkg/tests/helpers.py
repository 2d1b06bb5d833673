"""Shared builders and independent oracles used across test modules."""
from __future__ import annotations

import math
import struct

import numpy as np

from cma.datastore import FeatureStore, make_record

__all__ = [
    "random_record", "random_store", "store_bytes_oracle", "corruption_fixtures",
    "trimmed_mean_oracle", "std_oracle", "scalar_cross_attention_oracle",
]


def random_record(rng: np.random.Generator, d: int, rec_id: str, label: int,
                  l_t: int = 1, l_m: int = 1):
    return make_record(
        rec_id, label,
        rng.normal(size=(l_t, d)).astype(np.float32),
        rng.normal(size=(l_m, d)).astype(np.float32),
    )


def random_store(rng: np.random.Generator, d: int = 8, per_class: int = 5,
                 max_tokens: int = 3, source_name: str = "test-store") -> FeatureStore:
    records = []
    for label in (0, 1):
        for i in range(per_class):
            records.append(random_record(
                rng, d, f"rec-{label}-{i}", label,
                l_t=int(rng.integers(1, max_tokens + 1)),
                l_m=int(rng.integers(1, max_tokens + 1)),
            ))
    return FeatureStore(dimension=d, records=records, source_name=source_name)


def store_bytes_oracle(store: FeatureStore) -> bytes:
    """Byte-level CMAF construction independent of the library writer."""
    out = bytearray()
    out += b"CMAF"
    out += struct.pack("<I", 1)
    out += struct.pack("<I", store.dimension)
    out += struct.pack("<Q", len(store.records))
    for rec in store.records:
        raw = rec.id.encode("utf-8")
        out += struct.pack("<I", len(raw))
        out += raw
        out += struct.pack("<B", rec.label)
        out += struct.pack("<I", rec.text_tokens.shape[0])
        out += struct.pack("<I", rec.image_tokens.shape[0])
        for row in np.asarray(rec.text_tokens, dtype=np.float32):
            out += struct.pack(f"<{len(row)}f", *row)
        for row in np.asarray(rec.image_tokens, dtype=np.float32):
            out += struct.pack(f"<{len(row)}f", *row)
    return bytes(out)


def corruption_fixtures():
    """(name, corrupted bytes, expected error) triples for CMAF parsing.

    Offsets assume the layout produced by ``store_bytes_oracle`` on a
    d=2 store whose first record id is "rec-0-0": 20-byte header, then
    id_len(4) + id(7) + label(1) + L_t(4) + L_m(4) + payload.
    """
    from cma import errors

    rng = np.random.default_rng(9)
    base = store_bytes_oracle(random_store(rng, d=2, per_class=2))
    rec0 = 20
    label_off = rec0 + 4 + 7
    lt_off = label_off + 1
    float_off = lt_off + 8

    def mutate(offset, payload):
        data = bytearray(base)
        data[offset:offset + len(payload)] = payload
        return bytes(data)

    one_rec = store_bytes_oracle(FeatureStore(
        dimension=2,
        records=[make_record("dup", 0, np.ones((1, 2), dtype=np.float32),
                             np.ones((1, 2), dtype=np.float32))],
        source_name="x",
    ))
    duplicated = one_rec[:12] + struct.pack("<Q", 2) + one_rec[20:] + one_rec[20:]

    return [
        ("bad-magic", b"XXXX" + base[4:], errors.BadMagicError),
        ("unsupported-version", mutate(4, struct.pack("<I", 2)), errors.UnsupportedVersionError),
        ("truncated-header", base[:10], errors.TruncatedPayloadError),
        ("truncated-payload", base[:-5], errors.TruncatedPayloadError),
        ("count-overruns-file", mutate(12, struct.pack("<Q", 9)), errors.TruncatedPayloadError),
        ("duplicate-id", duplicated, errors.DuplicateIdError),
        ("invalid-label-byte", mutate(label_off, b"\x07"), errors.InvalidRecordError),
        ("zero-token-count", mutate(lt_off, struct.pack("<I", 0)), errors.StoreDimensionError),
        ("zero-dimension", mutate(8, struct.pack("<I", 0)), errors.StoreDimensionError),
        ("trailing-garbage", base + b"\x00\x01\x02", errors.TrailingDataError),
        ("non-finite-payload", mutate(float_off, struct.pack("<f", float("nan"))),
         errors.InvalidRecordError),
        ("undecodable-id", mutate(rec0 + 4, b"\xff"), errors.InvalidRecordError),
    ]


def trimmed_mean_oracle(scores) -> float:
    """Remove one max and one min instance by explicit index scans."""
    xs = list(float(x) for x in scores)
    assert len(xs) >= 3
    max_i = 0
    min_i = 0
    for i, x in enumerate(xs):
        if x > xs[max_i]:
            max_i = i
        if x < xs[min_i]:
            min_i = i
    if max_i == min_i:  # constant list: drop two distinct positions
        max_i = (min_i + 1) % len(xs)
    kept = [x for i, x in enumerate(xs) if i not in (max_i, min_i)]
    total = 0.0
    for x in kept:
        total += x
    return total / len(kept)


def std_oracle(scores) -> float:
    xs = [float(x) for x in scores]
    mean = sum(xs) / len(xs)
    var = sum((x - mean) ** 2 for x in xs) / len(xs)
    return math.sqrt(var)


def scalar_cross_attention_oracle(x_q, x_kv, w_q, w_k, w_v):
    """Element-by-element evaluation of softmax(Q K^T / sqrt(d)) V."""
    x_q = np.asarray(x_q, dtype=float)
    x_kv = np.asarray(x_kv, dtype=float)
    l_q, d = x_q.shape
    l_kv = x_kv.shape[0]

    def matmul(a, b):
        n, k = len(a), len(b[0])
        out = [[0.0] * k for _ in range(n)]
        for i in range(n):
            for j in range(k):
                s = 0.0
                for t in range(len(b)):
                    s += a[i][t] * b[t][j]
                out[i][j] = s
        return out

    q = matmul(x_q.tolist(), np.asarray(w_q, dtype=float).tolist())
    k = matmul(x_kv.tolist(), np.asarray(w_k, dtype=float).tolist())
    v = matmul(x_kv.tolist(), np.asarray(w_v, dtype=float).tolist())
    out = [[0.0] * d for _ in range(l_q)]
    for i in range(l_q):
        scores = []
        for j in range(l_kv):
            s = 0.0
            for t in range(d):
                s += q[i][t] * k[j][t]
            scores.append(s / math.sqrt(d))
        m = max(scores)
        exps = [math.exp(s - m) for s in scores]
        z = sum(exps)
        weights = [e / z for e in exps]
        for t in range(d):
            acc = 0.0
            for j in range(l_kv):
                acc += weights[j] * v[j][t]
            out[i][t] = acc
    return np.array(out)
