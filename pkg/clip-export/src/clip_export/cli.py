"""Command line wrapper: ``clip-export text`` and ``clip-export images``."""

from __future__ import annotations

import argparse
import sys

from .backends import resolve_backend
from .errors import ExportError
from .export import export_image_embeddings, export_text_prototypes
from .manifest import DEFAULT_TEMPLATE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="clip-export",
        description="Write text prototypes or frozen image embeddings as "
                    "MVHF archives with JSON label sidecars.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("text", help="one prototype row per class name")
    p.add_argument("--classes", required=True,
                   help="comma-separated class names")
    p.add_argument("--out", required=True, help="output archive path")
    p.add_argument("--template", default=DEFAULT_TEMPLATE,
                   help="prompt with the [CLASS] placeholder")
    p.add_argument("--backend", default="hash",
                   help="hash (default), clip, or a CLIP model id")

    p = sub.add_parser("images", help="one embedding row per image file")
    p.add_argument("--dir", required=True, dest="image_dir",
                   help="root directory; one subdirectory per class")
    p.add_argument("--out", required=True, help="output archive path")
    p.add_argument("--backend", default="hash",
                   help="hash (default), clip, or a CLIP model id")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        backend = resolve_backend(args.backend)
        if args.cmd == "text":
            classes = [c for c in args.classes.split(",") if c]
            m = export_text_prototypes(classes, template=args.template,
                                       out=args.out, backend=backend)
            print(f"wrote {len(m.classes)} prototypes to {args.out} "
                  f"({m.model})")
        else:
            m = export_image_embeddings(args.image_dir, out=args.out,
                                        backend=backend)
            print(f"wrote {len(m.items)} image rows to {args.out} "
                  f"({m.model})")
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
