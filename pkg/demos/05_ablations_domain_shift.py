#!/usr/bin/env python3
"""Ablations and domain shift.

The complementary store splits the class signal between the modalities:
each record is informative in exactly one of text/image, so any
single-modality variant is blind on half of the data while the full
ensemble reads whichever branch is confident. Domain shift trains
episodes on one store and scores the entirety of another.
"""
from cma.harness import ProtocolConfig, run_ablation, run_domain_shift
from cma.optim import TrainConfig
from cma.synthetic import make_blob_store, make_complementary_store

store = make_complementary_store(d=64, per_class=128, seed=0)
cfg = ProtocolConfig(shots=(16,), num_seeds=10, variant="full",
                     train_cfg=TrainConfig(), with_validation=False)

print("ablations on the complementary-signal store (16-shot, 10 seeds):")
reports = run_ablation(store, ("full", "-cross", "-meta", "-img", "-txt"), cfg)
for tag in ("full", "-cross", "-meta", "-img", "-txt"):
    summary = reports[tag].summaries[0]
    z = reports[tag].config["num_branches"]
    print(f"  {tag:7s} (z={z}): trimmed mean {summary.trimmed_mean:.4f} "
          f"std {summary.std_dev:.4f}")

print("\nsingle-modality variants are capped near 0.75 here by construction;")
print("the ensemble reads whichever modality carries the record's signal.")

# Domain shift: matched distributions (same class directions, disjoint
# sample draws) and a genuinely different domain (fresh directions).
train_store = make_blob_store(d=32, per_class=60, seed=1, direction_seed=7,
                              source_name="domain-a")
near_store = make_blob_store(d=32, per_class=60, seed=2, direction_seed=7,
                             source_name="domain-b")
far_store = make_blob_store(d=32, per_class=60, seed=3, direction_seed=8,
                            source_name="domain-c")
shift_cfg = ProtocolConfig(shots=(8,), num_seeds=10, variant="full",
                           train_cfg=TrainConfig(), with_validation=False)

in_domain = run_domain_shift(train_store, train_store, shift_cfg)
matched = run_domain_shift(train_store, near_store, shift_cfg)
shifted = run_domain_shift(train_store, far_store, shift_cfg)
print(f"\ndomain shift (train on domain-a, test on the whole target store):")
print(f"  degenerate (a->a):          {in_domain.summaries[0].trimmed_mean:.4f}")
print(f"  matched distribution (a->b): {matched.summaries[0].trimmed_mean:.4f}")
print(f"  different domain (a->c):     {shifted.summaries[0].trimmed_mean:.4f}")
