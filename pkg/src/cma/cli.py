"""Command-line entry point.

Verbs: validate, train, eval, protocol, ablate, shift, report. All
randomness flows from explicit --seed/--base-seed flags; there is no
wall-clock-seeded path, so identical invocations produce identical
outputs. Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numeric error.
"""
from __future__ import annotations

import argparse
import json
import sys

from .datastore import read_store, sample_episode
from .errors import (
    CmaError,
    ConfigError,
    DegenerateVectorError,
    DimensionError,
    InsufficientPopulationError,
    NumericError,
    StoreFormatError,
    UsageError,
)
from .harness import (
    ProtocolConfig,
    ProtocolReport,
    evaluate_accuracy,
    run_ablation,
    run_domain_shift,
    run_protocol,
)
from .heads import VARIANTS, load_model, save_model
from .optim import TrainConfig, init_model, load_train_config, train_episode

_DATA_ERRORS = (
    StoreFormatError,
    DimensionError,
    DegenerateVectorError,
    InsufficientPopulationError,
    ConfigError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions, not exit(2)."""

    def error(self, message):
        raise UsageError(message)


def _parse_shots(text: str) -> tuple[int, ...]:
    try:
        shots = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise UsageError(f"--shots expects a comma-separated list of integers, got {text!r}")
    if not shots:
        raise UsageError("--shots list is empty")
    return shots


def _parse_variants(text: str) -> tuple[str, ...]:
    tags = tuple(part.strip() for part in text.split(",") if part.strip())
    if not tags:
        raise UsageError("--variants list is empty")
    for tag in tags:
        if tag not in VARIANTS:
            raise UsageError(f"unknown variant {tag!r}, expected one of {', '.join(VARIANTS)}")
    return tags


def _train_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        return load_train_config(args.config)
    return TrainConfig()


def _write_bytes(path: str | None, data: bytes) -> None:
    if path:
        with open(path, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.buffer.write(data)


def _cmd_validate(args) -> int:
    store = read_store(args.store)
    counts = store.class_counts()
    print(
        f"{args.store}: OK, {len(store)} records "
        f"({counts[0]} real, {counts[1]} fake), dimension {store.dimension}"
    )
    return 0


def _cmd_train(args) -> int:
    store = read_store(args.store)
    cfg = _train_config(args)
    episode = sample_episode(store, args.shots, args.seed,
                             with_validation=not args.no_validation)
    model = init_model(store.dimension, args.variant, seed=cfg.init_seed + args.seed)
    trained, history = train_episode(episode, model, cfg)
    test_acc = evaluate_accuracy(trained, episode.test_records())
    print(
        f"trained {args.variant} on {args.shots}-shot episode (seed {args.seed}): "
        f"epochs={history.epochs_ran} best_epoch={history.best_epoch} "
        f"stop={history.stop_reason} test_accuracy={test_acc:.4f}"
    )
    if args.out:
        save_model(trained, args.out)
        print(f"checkpoint written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = load_model(args.model)
    store = read_store(args.store)
    if store.dimension != model.d:
        raise DimensionError(
            f"store dimension {store.dimension} != model dimension {model.d}"
        )
    acc = evaluate_accuracy(model, store.records)
    print(f"accuracy on {args.store} ({len(store)} records): {acc:.4f}")
    return 0


def _protocol_config(args) -> ProtocolConfig:
    return ProtocolConfig(
        shots=_parse_shots(args.shots),
        num_seeds=args.seeds,
        base_seed=args.base_seed,
        variant=args.variant,
        train_cfg=_train_config(args),
        with_validation=not args.no_validation,
        jobs=args.jobs,
    )


def _cmd_protocol(args) -> int:
    store = read_store(args.store)
    report = run_protocol(store, _protocol_config(args))
    _write_bytes(args.out, report.to_json_bytes())
    return 0


def _cmd_ablate(args) -> int:
    store = read_store(args.store)
    reports = run_ablation(store, _parse_variants(args.variants), _protocol_config(args))
    payload = {
        "format_version": 1,
        "variants": {tag: rep.to_payload() for tag, rep in reports.items()},
    }
    data = (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")
    _write_bytes(args.out, data)
    return 0


def _cmd_shift(args) -> int:
    train_store = read_store(args.train_store)
    test_store = read_store(args.test_store)
    report = run_domain_shift(train_store, test_store, _protocol_config(args))
    _write_bytes(args.out, report.to_json_bytes())
    return 0


def _cmd_report(args) -> int:
    with open(args.in_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if args.format == "json":
        data = (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")
        _write_bytes(args.out, data)
        return 0
    report = ProtocolReport.from_payload(payload)
    csv_text = report.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    return 0


def _add_protocol_flags(p: _Parser) -> None:
    p.add_argument("--shots", default="2,8,16,32",
                   help="comma-separated shot counts (default: 2,8,16,32)")
    p.add_argument("--seeds", type=int, default=10,
                   help="number of seeds per shot (default: 10)")
    p.add_argument("--base-seed", type=int, default=0,
                   help="first seed; cell i uses base-seed + i (default: 0)")
    p.add_argument("--variant", default="full", choices=VARIANTS,
                   help="model variant (default: full)")
    p.add_argument("--config", default=None,
                   help="training config file, key = value per line (default: paper settings)")
    p.add_argument("--no-validation", action="store_true",
                   help="skip the validation episode; keep the last epoch (default: off)")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel (shot, seed) cells (default: 1)")
    p.add_argument("--out", default=None,
                   help="output path for the report JSON (default: stdout)")


def build_parser() -> _Parser:
    parser = _Parser(
        prog="cma",
        description="Few-shot multimodal classification over frozen embeddings "
                    "with cross-modal augmentation.",
    )
    sub = parser.add_subparsers(dest="verb", parser_class=_Parser)

    p = sub.add_parser("validate", help="check a CMAF feature store")
    p.add_argument("store", help="path to a .cmaf file")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("train", help="train one n-shot episode")
    p.add_argument("--store", required=True, help="CMAF feature store")
    p.add_argument("--shots", type=int, required=True, help="samples per class")
    p.add_argument("--seed", type=int, default=0, help="episode seed (default: 0)")
    p.add_argument("--variant", default="full", choices=VARIANTS,
                   help="model variant (default: full)")
    p.add_argument("--config", default=None, help="training config file (default: paper settings)")
    p.add_argument("--no-validation", action="store_true",
                   help="skip the validation episode; keep the last epoch (default: off)")
    p.add_argument("--out", default=None, help="write the trained checkpoint here")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a whole store")
    p.add_argument("--model", required=True, help="CMAM checkpoint")
    p.add_argument("--store", required=True, help="CMAF feature store")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("protocol", help="full shots x seeds sweep with trimmed means")
    p.add_argument("--store", required=True, help="CMAF feature store")
    _add_protocol_flags(p)
    p.set_defaults(func=_cmd_protocol)

    p = sub.add_parser("ablate", help="paired-seed sweeps over model variants")
    p.add_argument("--store", required=True, help="CMAF feature store")
    p.add_argument("--variants", default="full,-cross,-meta,-img,-txt",
                   help="comma-separated variant tags; use --variants=-cross,... "
                        "(default: full,-cross,-meta,-img,-txt)")
    _add_protocol_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("shift", help="train on one store, test on all of another")
    p.add_argument("--train-store", required=True, help="CMAF store supplying episodes")
    p.add_argument("--test-store", required=True, help="CMAF store scored in full")
    _add_protocol_flags(p)
    p.set_defaults(func=_cmd_shift)

    p = sub.add_parser("report", help="convert a report JSON to CSV")
    p.add_argument("--in", dest="in_path", required=True, help="report JSON path")
    p.add_argument("--format", default="csv", choices=("csv", "json"),
                   help="output format (default: csv)")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "verb", None) is None:
            raise UsageError("missing verb; try 'cma --help'")
        return args.func(args)
    except UsageError as exc:
        print(f"cma: usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"cma: numeric error: {exc}", file=sys.stderr)
        return 3
    except _DATA_ERRORS as exc:
        print(f"cma: error: {exc}", file=sys.stderr)
        return 2
    except CmaError as exc:
        print(f"cma: error: {exc}", file=sys.stderr)
        return 2


def entry_point() -> None:
    sys.exit(main())
