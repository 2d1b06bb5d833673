#!/usr/bin/env python3
"""The five modality features behind every prediction.

Each record yields: the pooled text vector f_t, the pooled image vector
f_m, the unit-norm concatenation f_c, and two cross-attended vectors:
f_mt (image tokens querying the text tokens) and f_tm (text querying
image). With single-token inputs the attention softmax is degenerate,
so this demo uses short token sequences to show real attention weights.
"""
import numpy as np

from cma.datastore import make_record
from cma.fusion import attention_forward, build_bundle
from cma.optim import init_model

rng = np.random.default_rng(0)
d = 8

# three text tokens, two image tokens
rec = make_record("demo", 1, rng.normal(size=(3, d)), rng.normal(size=(2, d)))
model = init_model(d, "full", seed=1)

bundle = build_bundle(rec, model.attn_mt, model.attn_tm)
for name in ("f_t", "f_m", "f_c", "f_mt", "f_tm"):
    vec = getattr(bundle, name)
    print(f"{name}: width {vec.shape[0]:2d} norm {np.linalg.norm(vec):.4f}")

print(f"\nf_c is always unit norm: {np.linalg.norm(bundle.f_c):.12f}")

cache = attention_forward(rec.image_tokens, rec.text_tokens, model.attn_mt)
print("\nimage->text attention weights (rows: image tokens, cols: text tokens):")
print(np.array_str(cache.probs, precision=4))
print(f"every row sums to 1: {cache.probs.sum(axis=1)}")

# The L = 1 degeneracy: with one key/value row, attention is just the
# value projection of that row.
single = make_record("pooled", 0, rng.normal(size=(1, d)), rng.normal(size=(1, d)))
cache1 = attention_forward(single.image_tokens, single.text_tokens, model.attn_mt)
projected = single.text_tokens @ model.attn_mt.w_v
print(f"\nL=1 degeneracy, output == value projection: "
      f"{np.array_equal(cache1.out, projected)}")
