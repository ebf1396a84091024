"""vitdesc-extract: images in, VITD descriptor files out."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExtractConfig
from .models import ModelLoadError, known_models, load_model
from .pipeline import extract_augmented
from .vit import AdapterError, ViTExtractor

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _csv_ints(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _csv_names(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vitdesc-extract",
        description="Extract per-layer ViT facets and CLS attention saliency "
                    "to VITD files.")
    p.add_argument("images", nargs="*", help="image files")
    p.add_argument("--image-dir", help="directory of images (png/jpg)")
    p.add_argument("--model", required=True,
                   help=f"model id; one of: {', '.join(known_models())}")
    p.add_argument("--weights", help="local state-dict file")
    p.add_argument("--pretrained", action="store_true",
                   help="download published weights (torchvision models)")
    p.add_argument("--layers", type=_csv_ints, default=(11,),
                   help="comma-separated block indices (default: 11)")
    p.add_argument("--facets", type=_csv_names, default=("key",),
                   help="comma-separated subset of key,query,value,token")
    p.add_argument("--stride", type=int, default=None,
                   help="extraction stride in px (default: patch size)")
    p.add_argument("--load-size", type=int, default=None,
                   help="resize shorter image side to this before extraction")
    p.add_argument("--saliency", action=argparse.BooleanOptionalAction,
                   default=True, help="also write CLS-attention saliency")
    p.add_argument("--augment", type=int, default=0, metavar="N",
                   help="extra crop/flip descriptor copies per image")
    p.add_argument("--seed", type=int, default=0, help="augmentation seed")
    p.add_argument("--head-subset", type=_csv_ints, default=None,
                   help="attention heads for saliency (default: all)")
    p.add_argument("--out-dir", required=True)
    return p


def _collect_images(args: argparse.Namespace) -> list[Path]:
    paths = [Path(p) for p in args.images]
    if args.image_dir:
        root = Path(args.image_dir)
        if not root.is_dir():
            raise ValueError(f"--image-dir {root} is not a directory")
        paths += sorted(p for p in root.iterdir()
                        if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not paths:
        raise ValueError("no images given (positional paths or --image-dir)")
    missing = [p for p in paths if not p.is_file()]
    if missing:
        raise ValueError(f"missing image files: {', '.join(map(str, missing))}")
    return paths


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExtractConfig(
            model_id=args.model, layers=args.layers, facets=args.facets,
            stride_px=args.stride, image_load_size=args.load_size,
            saliency=args.saliency, n_augment=args.augment,
            augment_seed=args.seed, head_subset=args.head_subset)
        images = _collect_images(args)
        model = load_model(cfg.model_id, weights=args.weights,
                           pretrained=args.pretrained)
        extractor = ViTExtractor(model, stride=cfg.stride_px)
        out_dir = Path(args.out_dir)
        result = extract_augmented(images, cfg, out_dir, extractor=extractor)
    except (ModelLoadError, AdapterError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    report = {
        "command": "extract",
        "config": cfg.to_dict(),
        "images": [str(p) for p in images],
        "files": sorted(p.name for p in result["files"]),
        "augments": result["augments"],
        "patch_size_px": extractor.patch_size,
        "stride_px": extractor.stride,
    }
    (out_dir / "extract_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(result['files'])} fields for {len(images)} images "
          f"to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
