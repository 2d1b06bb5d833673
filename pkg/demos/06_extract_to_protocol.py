#!/usr/bin/env python3
"""End to end: raw dataset -> extractor -> CMAF -> episodic protocol.

Builds a tiny image/text dataset on disk, extracts features with the
deterministic stub encoder (install `extractor/` first), validates the
store with the primary CLI, and runs a small protocol sweep on it.
Hash-stub features carry no class signal, so accuracies hover at the
0.5 base rate; the point is the pipeline, not the score.
"""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

try:
    from cma_extractor.extract import extract_file
except ImportError:
    sys.exit("this demo needs the extractor package: pip install -e extractor/")

from PIL import Image

from cma.cli import main as cma_main

workdir = Path(tempfile.mkdtemp(prefix="cma-demo-"))
img_dir = workdir / "img"
img_dir.mkdir()

items = []
for i in range(24):
    label = i % 2
    paths = []
    for j in range(2):  # two candidate images per article
        p = img_dir / f"item{i}-{j}.png"
        Image.new("RGB", (8, 8), (10 * i % 256, 40 * j % 256, label * 200)).save(p)
        paths.append(f"img/{p.name}")
    items.append({"id": f"item-{i:02d}", "text": f"news article number {i}",
                  "images": paths, "label": label})

manifest_path = workdir / "dataset.json"
manifest_path.write_text(json.dumps({"source_name": "demo-news", "items": items}))
print(f"dataset: {len(items)} articles, two candidate images each")

store_path = workdir / "demo-news.cmaf"
stats = extract_file(str(manifest_path), "hash-64", str(store_path))
print(f"extracted {stats.records_written} records "
      f"(best image per article by cosine similarity)")

print("\nprimary-side validation:")
rc = cma_main(["validate", str(store_path)])
assert rc == 0

print("\nsmall protocol sweep on the extracted store:")
report_path = workdir / "report.json"
rc = cma_main(["protocol", "--store", str(store_path), "--shots", "2,4",
               "--seeds", "4", "--out", str(report_path)])
assert rc == 0
rc = cma_main(["report", "--in", str(report_path), "--format", "csv"])
assert rc == 0
