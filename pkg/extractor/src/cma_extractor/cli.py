"""cma-extract: turn a dataset manifest into a CMAF feature store."""
from __future__ import annotations

import argparse
import logging
import sys

from .encoders import EncoderError
from .extract import extract_file
from .manifest import ManifestError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cma-extract",
        description="Encode a raw image/text dataset into a CMAF feature store, "
                    "keeping the best-matching image per item by cosine similarity.",
    )
    parser.add_argument("manifest", help="dataset manifest JSON")
    parser.add_argument("--out", required=True, help="output .cmaf path")
    parser.add_argument("--encoder", default="clip-vit-b-32",
                        help="encoder name: clip-vit-b-32, chinese-clip-vit-b-16, "
                             "or hash-<width> for the deterministic stub "
                             "(default: clip-vit-b-32)")
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--pooled", dest="pooled", action="store_true", default=True,
                      help="write one pooled vector per modality (default)")
    mode.add_argument("--tokens", dest="pooled", action="store_false",
                      help="write token sequences instead of pooled vectors")
    parser.add_argument("--batch-size", type=int, default=32,
                        help="encoder batch size (default: 32)")
    parser.add_argument("--label-texts", default=None,
                        help="comma-separated pair 'real text,fake text'; their "
                             "embeddings land in the sidecar for label augmentation")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="[cma-extract] %(message)s",
                        stream=sys.stderr)
    args = build_parser().parse_args(argv)
    label_texts = None
    if args.label_texts is not None:
        parts = args.label_texts.split(",", 1)
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            print("cma-extract: --label-texts expects 'real text,fake text'",
                  file=sys.stderr)
            return 1
        label_texts = (parts[0].strip(), parts[1].strip())
    try:
        stats = extract_file(args.manifest, args.encoder, args.out,
                             pooled=args.pooled, label_texts=label_texts,
                             batch_size=args.batch_size)
    except (ManifestError, EncoderError, FileNotFoundError, ValueError) as exc:
        print(f"cma-extract: error: {exc}", file=sys.stderr)
        return 2
    print(
        f"wrote {args.out}: {stats.records_written} records "
        f"({stats.dropped_no_images} dropped without images, "
        f"{stats.dropped_all_images_unreadable} dropped unreadable, "
        f"{stats.images_skipped_undecodable} images skipped)"
    )
    return 0


def entry_point() -> None:
    sys.exit(main())
