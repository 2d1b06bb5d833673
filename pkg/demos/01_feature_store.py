#!/usr/bin/env python3
"""Feature stores: build one, write it to disk, read it back, break it.

The CMAF file is a flat binary container: magic/version/dimension/count
header, then per record an id, a label byte, and two float32 token
matrices. Everything is validated on read.
"""
import struct
import tempfile
from pathlib import Path

from cma.datastore import read_store, write_store
from cma.errors import StoreFormatError
from cma.synthetic import make_blob_store

workdir = Path(tempfile.mkdtemp(prefix="cma-demo-"))
path = workdir / "blobs.cmaf"

store = make_blob_store(d=32, per_class=50, seed=7, source_name="demo-blobs")
print(f"built a synthetic store: {len(store)} records, dimension {store.dimension}")

write_store(store, str(path))
size = path.stat().st_size
print(f"wrote {path} ({size} bytes) plus the JSON manifest sidecar")

back = read_store(str(path))
print(f"read it back: {len(back)} records, source_name={back.source_name!r}")
counts = back.class_counts()
print(f"class counts: {counts[0]} real / {counts[1]} fake")

rec = back.records[0]
print(f"first record: id={rec.id!r} label={rec.label} "
      f"text {rec.text_tokens.shape} image {rec.image_tokens.shape}")

# Corrupt the version field and watch the reader refuse politely.
broken = workdir / "broken.cmaf"
data = bytearray(path.read_bytes())
data[4:8] = struct.pack("<I", 99)
broken.write_bytes(bytes(data))
try:
    read_store(str(broken))
except StoreFormatError as exc:
    print(f"corrupted file rejected: {exc}")
