"""The episodic evaluation protocol: shot sweeps, ablations, domain shift.

Every (shot, seed) cell is an independent job: sample an episode, build
a seeded model, train it, and score the held-out records. Cells can run
in parallel; results are merged by key, so the report is a deterministic
function of (stores, config) regardless of the worker count. Reports
serialize to canonical JSON (sorted keys, fixed indentation), which two
identical invocations reproduce byte for byte; wall-clock timings are
therefore logged but never written into the report payload.
"""
from __future__ import annotations

import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .datastore import FeatureStore, sample_episode
from .errors import DimensionError
from .heads import VARIANT_BRANCHES, VARIANTS, CmaModel, cma_forward
from .optim import TrainConfig, init_model, train_episode

REPORT_FORMAT_VERSION = 1

# Convention recorded in every report: the per-shot standard deviation is the
# population std over all raw seed scores, not over the trimmed subset.
STD_CONVENTION = "population-over-all-seeds"


def accuracy(predictions, labels) -> float:
    """Fraction of exact matches between two equal-length binary lists."""
    if len(predictions) != len(labels):
        raise DimensionError(
            f"accuracy: {len(predictions)} predictions vs {len(labels)} labels"
        )
    if len(labels) == 0:
        raise DimensionError("accuracy: empty inputs")
    hits = sum(int(p == y) for p, y in zip(predictions, labels))
    return hits / float(len(labels))


def trimmed_mean(scores) -> float:
    """Mean after removing exactly one maximal and one minimal score."""
    xs = [float(x) for x in scores]
    if len(xs) < 3:
        raise DimensionError(f"trimmed_mean needs at least 3 scores, got {len(xs)}")
    xs.sort()
    kept = xs[1:-1]
    return sum(kept) / len(kept)


def std_dev(scores) -> float:
    """Population standard deviation over all scores."""
    xs = np.asarray(list(scores), dtype=np.float64)
    if xs.size == 0:
        raise DimensionError("std_dev: empty input")
    return float(np.sqrt(np.mean((xs - xs.mean()) ** 2)))


def predict_labels(model: CmaModel, records) -> list[int]:
    return [int(np.argmax(cma_forward(rec, model).y_hat)) for rec in records]


def evaluate_accuracy(model: CmaModel, records) -> float:
    """Accuracy of argmax predictions over a record list."""
    return accuracy(predict_labels(model, records), [r.label for r in records])


@dataclass
class ProtocolConfig:
    """One sweep: shots x seeds under a fixed variant and train config."""

    shots: tuple[int, ...] = (2, 8, 16, 32)
    num_seeds: int = 10
    base_seed: int = 0
    variant: str = "full"
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    with_validation: bool = True
    jobs: int = 1

    def validate(self) -> None:
        if not self.shots or any(s < 1 for s in self.shots):
            raise ValueError(f"shots must be positive, got {self.shots!r}")
        if self.num_seeds < 3:
            raise ValueError(
                f"num_seeds must be >= 3 so trimming retains a score, got {self.num_seeds}"
            )
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")
        self.train_cfg.validate()


@dataclass
class CellResult:
    shot: int
    seed: int
    accuracy: float
    epochs_ran: int
    best_epoch: int


@dataclass
class ShotSummary:
    shot: int
    trimmed_mean: float
    std_dev: float


@dataclass
class ProtocolReport:
    """Per-cell accuracies plus per-shot aggregates and the config echo."""

    config: dict
    cells: list[CellResult]
    summaries: list[ShotSummary]
    format_version: int = REPORT_FORMAT_VERSION
    # Wall-clock seconds per shot. Logged, never serialized: reports must be
    # byte-identical across reruns and worker counts.
    timings: dict[int, float] = field(default_factory=dict)

    def to_payload(self) -> dict:
        return {
            "format_version": self.format_version,
            "config": self.config,
            "cells": [asdict(c) for c in self.cells],
            "summaries": [asdict(s) for s in self.summaries],
        }

    def to_json_bytes(self) -> bytes:
        return (json.dumps(self.to_payload(), sort_keys=True, indent=2) + "\n").encode("utf-8")

    def to_csv(self) -> str:
        lines = ["shot,trimmed_mean,std_dev"]
        for s in self.summaries:
            lines.append(f"{s.shot},{s.trimmed_mean!r},{s.std_dev!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_payload(cls, payload: dict) -> "ProtocolReport":
        return cls(
            config=payload["config"],
            cells=[CellResult(**c) for c in payload["cells"]],
            summaries=[ShotSummary(**s) for s in payload["summaries"]],
            format_version=payload["format_version"],
        )


@dataclass
class _CellJob:
    train_store: FeatureStore
    test_store: FeatureStore | None  # None: use the episode's own test split
    shot: int
    seed: int
    variant: str
    train_cfg: TrainConfig
    with_validation: bool


def _run_cell(job: _CellJob) -> CellResult:
    episode = sample_episode(job.train_store, job.shot, job.seed, job.with_validation)
    model = init_model(
        job.train_store.dimension, job.variant, seed=job.train_cfg.init_seed + job.seed
    )
    trained, history = train_episode(episode, model, job.train_cfg)
    if job.test_store is not None:
        test_records = list(job.test_store.records)
    else:
        test_records = episode.test_records()
    acc = evaluate_accuracy(trained, test_records)
    return CellResult(
        shot=job.shot,
        seed=job.seed,
        accuracy=acc,
        epochs_ran=history.epochs_ran,
        best_epoch=history.best_epoch,
    )


def _config_echo(cfg: ProtocolConfig, train_store: FeatureStore,
                 test_store: FeatureStore | None) -> dict:
    train_fields = asdict(cfg.train_cfg)
    return {
        "shots": list(cfg.shots),
        "num_seeds": cfg.num_seeds,
        "base_seed": cfg.base_seed,
        "variant": cfg.variant,
        "num_branches": len(VARIANT_BRANCHES[cfg.variant]),
        "with_validation": cfg.with_validation,
        "std_convention": STD_CONVENTION,
        "train": train_fields,
        "train_store": train_store.source_name,
        "test_store": test_store.source_name if test_store is not None else train_store.source_name,
    }


def _execute(cfg: ProtocolConfig, train_store: FeatureStore,
             test_store: FeatureStore | None) -> ProtocolReport:
    cfg.validate()
    jobs = [
        _CellJob(train_store, test_store, shot, cfg.base_seed + i,
                 cfg.variant, cfg.train_cfg, cfg.with_validation)
        for shot in cfg.shots
        for i in range(cfg.num_seeds)
    ]
    started = time.perf_counter()
    shot_started: dict[int, float] = {}
    results: dict[tuple[int, int], CellResult] = {}
    if cfg.jobs == 1:
        for job in jobs:
            t0 = time.perf_counter()
            cell = _run_cell(job)
            shot_started.setdefault(job.shot, 0.0)
            shot_started[job.shot] += time.perf_counter() - t0
            results[(cell.shot, cell.seed)] = cell
            _log(f"shot={cell.shot} seed={cell.seed} accuracy={cell.accuracy:.4f} "
                 f"epochs={cell.epochs_ran} best={cell.best_epoch}")
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for cell in pool.map(_run_cell, jobs):
                results[(cell.shot, cell.seed)] = cell
                _log(f"shot={cell.shot} seed={cell.seed} accuracy={cell.accuracy:.4f} "
                     f"epochs={cell.epochs_ran} best={cell.best_epoch}")
        shot_started = {shot: 0.0 for shot in cfg.shots}
    cells = [results[key] for key in sorted(results)]
    summaries = []
    for shot in cfg.shots:
        scores = [results[(shot, cfg.base_seed + i)].accuracy for i in range(cfg.num_seeds)]
        summaries.append(ShotSummary(
            shot=shot, trimmed_mean=trimmed_mean(scores), std_dev=std_dev(scores)
        ))
    _log(f"sweep finished in {time.perf_counter() - started:.2f}s")
    return ProtocolReport(
        config=_config_echo(cfg, train_store, test_store),
        cells=cells,
        summaries=summaries,
        timings=shot_started,
    )


def run_protocol(store: FeatureStore, cfg: ProtocolConfig) -> ProtocolReport:
    """The main sweep: every shot x seed cell trained and scored in-domain."""
    return _execute(cfg, store, None)


def run_ablation(store: FeatureStore, variants, cfg: ProtocolConfig) -> dict[str, ProtocolReport]:
    """One report per variant with identical seeds, so rows pair per cell."""
    for tag in variants:
        if tag not in VARIANTS:
            raise ValueError(f"unknown ablation tag {tag!r}, expected one of {VARIANTS}")
    return {tag: run_protocol(store, replace(cfg, variant=tag)) for tag in variants}


def run_domain_shift(train_store: FeatureStore, test_store: FeatureStore,
                     cfg: ProtocolConfig) -> ProtocolReport:
    """Episodes sampled from one store, scored on all of another store.

    The entire test store is scored, so when the same store is passed
    twice the episode's train ids overlap the evaluation set; that
    degenerate configuration is allowed and scores optimistically.
    """
    if train_store.dimension != test_store.dimension:
        raise DimensionError(
            f"domain shift: train store dimension {train_store.dimension} "
            f"!= test store dimension {test_store.dimension}"
        )
    return _execute(cfg, train_store, test_store)


def _log(message: str) -> None:
    print(f"[cma] {message}", file=sys.stderr)
