"""Command-line pipeline over VITD descriptor files.

Subcommands: coseg, parts, match, eval, pca.  Option precedence is
profile defaults < --config JSON < explicit flags, and every run writes a
report embedding the fully resolved config so it can be replayed with
``--config report.json``.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from ._blas import single_thread_blas
from .analysis import components_field, pca, render_component_maps
from .binning import BinningConfig, log_bin
from .correspondence import best_buddies, match_keypoints
from .cosegmentation import (
    VotingConfig,
    cosegment,
    refine_mask,
    refine_parts,
    upsample_mask,
)
from .metrics import jaccard, landmark_regression_error, nmi_ari, pck, precision_px
from .parts import part_segment
from .store import (
    DescriptorField,
    FieldMeta,
    LabelMask,
    SaliencyField,
    patch_center_px,
    read_field,
    stack_fields,
    write_field,
)

PROFILES = {
    "coseg": {
        "input_dir": None, "out_dir": None, "image_dir": None,
        "layer": 11, "facet": "key", "k": None, "k_min": 2, "k_max": 12,
        "drop_threshold": 0.05, "tau": 0.2, "vote_fraction": 0.75,
        "summed_voting": False, "seed": 0, "restarts": 1,
        "normalize": True, "refine": True,
    },
    "parts": {
        "input_dir": None, "out_dir": None, "image_dir": None,
        "layer": 11, "facet": "key", "k": None, "k_min": 2, "k_max": 12,
        "drop_threshold": 0.05, "tau": 0.2, "vote_fraction": 0.75,
        "summed_voting": False, "seed": 0, "restarts": 1,
        "normalize": True, "refine": True, "num_parts": None,
    },
    "match": {
        "src": None, "tgt": None, "keypoints": None, "out_dir": None,
        "bins": True, "levels": 2, "dilation_base": 2, "seed": 0,
    },
    "eval": {
        "manifest": None, "out_dir": None, "alpha": 0.1,
    },
    "pca": {
        "input_dir": None, "out_dir": None,
        "layer": 11, "facet": "key", "n_components": 4,
    },
}

# Distinct overlay colors for part labels, cycled when parts exceed the list.
PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
)


def _resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(PROFILES[command])
    if args.config is not None:
        loaded = json.loads(Path(args.config).read_text())
        if "config" in loaded and isinstance(loaded["config"], dict):
            loaded = loaded["config"]
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ValueError(f"missing required options: {', '.join(missing)}")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_directory(input_dir: str, layer: int,
                    facet: str) -> tuple[list[DescriptorField], dict[str, SaliencyField]]:
    """All matching descriptor fields plus saliency fields, in filename order."""
    root = Path(input_dir)
    paths = sorted(root.glob("*.vitd"))
    if not paths:
        raise ValueError(f"no .vitd files in {root}")
    descriptors: list[DescriptorField] = []
    saliencies: dict[str, SaliencyField] = {}
    seen_primary: set[str] = set()
    for path in paths:
        field = read_field(path)
        if isinstance(field, SaliencyField):
            if field.meta.image_id in saliencies:
                raise ValueError(f"duplicate saliency for {field.meta.image_id!r}")
            saliencies[field.meta.image_id] = field
        elif field.meta.layer_index == layer and field.meta.facet == facet:
            if not field.meta.augmented:
                if field.meta.image_id in seen_primary:
                    raise ValueError(
                        f"duplicate descriptor field for {field.meta.image_id!r}")
                seen_primary.add(field.meta.image_id)
            descriptors.append(field)
    if not descriptors:
        raise ValueError(f"no descriptor fields for layer={layer} facet={facet!r}")
    return descriptors, saliencies


def _load_image(image_dir: str, image_id: str, meta: FieldMeta) -> np.ndarray:
    for ext in (".png", ".jpg", ".jpeg"):
        path = Path(image_dir) / f"{image_id}{ext}"
        if path.exists():
            img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
            expected = (meta.image_height_px, meta.image_width_px, 3)
            if img.shape != expected:
                raise ValueError(
                    f"image {path} has shape {img.shape}, expected {expected}")
            return img
    raise ValueError(f"no image found for {image_id!r} in {image_dir}")


def _save_gray(path: Path, values: np.ndarray) -> None:
    Image.fromarray(values.astype(np.uint8), "L").save(path)


def _save_overlay(path: Path, image: np.ndarray, labels: np.ndarray) -> None:
    out = image.copy()
    for part in np.unique(labels):
        if part <= 0:
            continue
        color = PALETTE[(int(part) - 1) % len(PALETTE)]
        member = labels == part
        out[member] = 0.5 * out[member] + 0.5 * np.asarray(color, dtype=np.float64)
    Image.fromarray(out.round().astype(np.uint8), "RGB").save(path)


def _pixel_masks(masks, cfg: dict, refiner) -> list[np.ndarray]:
    """Upsample patch masks to pixels, refining against RGB when available."""
    out = []
    for mask in masks:
        if cfg["refine"] and cfg["image_dir"] is not None:
            image = _load_image(cfg["image_dir"], mask.image_id, mask.meta)
            out.append(refiner(mask, image))
        else:
            out.append(upsample_mask(mask))
    return out


def _run_coseg(cfg: dict):
    fields, saliencies = _load_directory(cfg["input_dir"], cfg["layer"], cfg["facet"])
    voting = VotingConfig(tau=cfg["tau"], vote_fraction=cfg["vote_fraction"],
                          summed_saliency=cfg["summed_voting"])
    return fields, cosegment(
        fields, saliencies, k=cfg["k"], voting=voting, seed=cfg["seed"],
        normalize=cfg["normalize"], k_range=(cfg["k_min"], cfg["k_max"]),
        drop_threshold=cfg["drop_threshold"], restarts=cfg["restarts"])


def _coseg_report(cfg: dict, result) -> dict:
    return {
        "backend": kernels.BACKEND,
        "config": cfg,
        "result": {
            "chosen_k": result.chosen_k,
            "foreground": list(result.foreground),
            "images": list(result.image_ids),
            "inertia": result.model.inertia,
            "segment_saliencies": {
                str(c): list(v) for c, v in sorted(result.saliencies.items())
            },
        },
    }


def cmd_coseg(cfg: dict) -> int:
    _require(cfg, "input_dir", "out_dir")
    _, result = _run_coseg(cfg)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)

    pixel = _pixel_masks(result.masks, cfg, refine_mask)
    for mask, px in zip(result.masks, pixel):
        _save_gray(out / f"{mask.image_id}_mask.png", (px > 0) * np.uint8(255))
        if cfg["image_dir"] is not None:
            image = _load_image(cfg["image_dir"], mask.image_id, mask.meta)
            _save_overlay(out / f"{mask.image_id}_overlay.png", image,
                          (px > 0).astype(np.int32))

    report = _coseg_report(cfg, result)
    report["command"] = "coseg"
    _write_json(out / "report.json", report)
    return 0


def cmd_parts(cfg: dict) -> int:
    _require(cfg, "input_dir", "out_dir", "num_parts")
    fields, result = _run_coseg(cfg)
    primary = [f for f in fields if not f.meta.augmented]
    part_masks = part_segment(primary, list(result.masks),
                              num_parts=cfg["num_parts"], seed=cfg["seed"],
                              normalize=cfg["normalize"],
                              restarts=cfg["restarts"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)

    pixel = _pixel_masks(part_masks, cfg, refine_parts)
    for mask, px in zip(part_masks, pixel):
        _save_gray(out / f"{mask.image_id}_parts.png", px)
        if cfg["image_dir"] is not None:
            image = _load_image(cfg["image_dir"], mask.image_id, mask.meta)
            _save_overlay(out / f"{mask.image_id}_parts_overlay.png", image, px)

    colors = {str(p + 1): list(PALETTE[p % len(PALETTE)])
              for p in range(cfg["num_parts"])}
    _write_json(out / "part_colors.json", {"0": [0, 0, 0], **colors})

    report = _coseg_report(cfg, result)
    report["command"] = "parts"
    report["result"]["num_parts"] = cfg["num_parts"]
    _write_json(out / "report.json", report)
    return 0


def cmd_match(cfg: dict) -> int:
    _require(cfg, "src", "tgt", "out_dir")
    src = read_field(cfg["src"])
    tgt = read_field(cfg["tgt"])
    if not isinstance(src, DescriptorField) or not isinstance(tgt, DescriptorField):
        raise ValueError("match requires two descriptor fields")
    binning = BinningConfig(levels=cfg["levels"] if cfg["bins"] else 0,
                            dilation_base=cfg["dilation_base"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)

    lines = []
    if cfg["keypoints"] is not None:
        kps = [tuple(p) for p in json.loads(Path(cfg["keypoints"]).read_text())]
        matches = match_keypoints(kps, src, tgt, binning, with_similarity=True)
        for (y, x), ((ty, tx), sim) in zip(kps, matches):
            lines.append({"src": [y, x], "tgt": [ty, tx], "sim": sim})
    else:
        src_b = log_bin(src, binning)
        tgt_b = log_bin(tgt, binning)
        for (sr, sc), (tr, tc), sim in best_buddies(src_b, tgt_b).pairs:
            sy, sx = patch_center_px(sr, sc, src.meta)
            ty, tx = patch_center_px(tr, tc, tgt.meta)
            lines.append({"src": [sy, sx], "tgt": [ty, tx], "sim": sim})

    with (out / "matches.jsonl").open("w") as fh:
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    _write_json(out / "report.json", {
        "command": "match",
        "backend": kernels.BACKEND,
        "config": cfg,
        "result": {"num_matches": len(lines)},
    })
    return 0


def _read_mask_png(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"))


def _grid_labels_from_png(png: np.ndarray, meta: FieldMeta) -> LabelMask:
    # Sample the pixel-resolution label image at each patch center.
    half = (meta.patch_size_px - 1) / 2.0
    ys = np.floor(np.arange(meta.grid_h) * meta.stride_px + half).astype(int)
    xs = np.floor(np.arange(meta.grid_w) * meta.stride_px + half).astype(int)
    return LabelMask(meta, png[np.ix_(ys, xs)].astype(np.int32))


def cmd_eval(cfg: dict) -> int:
    _require(cfg, "manifest", "out_dir")
    manifest_path = Path(cfg["manifest"])
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    report: dict = {"command": "eval", "config": cfg}

    if "masks" in manifest:
        per_pair = []
        for entry in manifest["masks"]:
            pred = _read_mask_png(base / entry["pred"]) > 0
            gt = _read_mask_png(base / entry["gt"]) > 0
            per_pair.append({"pred": entry["pred"],
                             "jaccard": jaccard(pred, gt),
                             "precision": precision_px(pred, gt)})
        report["masks"] = {
            "per_pair": per_pair,
            "mean_jaccard": float(np.mean([p["jaccard"] for p in per_pair])),
            "mean_precision": float(np.mean([p["precision"] for p in per_pair])),
        }

    if "labels" in manifest:
        section = manifest["labels"]
        background = section.get("background", 0)
        nmi, ari = nmi_ari(section["pred"], section["gt"])
        fg_nmi, fg_ari = nmi_ari(section["pred"], section["gt"],
                                 foreground_only=True,
                                 background_label=background)
        report["labels"] = {"nmi": nmi, "ari": ari,
                            "fg_nmi": fg_nmi, "fg_ari": fg_ari}

    if "keypoints" in manifest:
        section = manifest["keypoints"]
        report["keypoints"] = {
            "alpha": cfg["alpha"],
            "pck": pck(section["pred"], section["gt"], cfg["alpha"],
                       section["image_h"], section["image_w"]),
        }

    if "landmarks" in manifest:
        section = manifest["landmarks"]
        geo = section["geometry"]
        masks = []
        for rel in section["masks"]:
            png = _read_mask_png(base / rel)
            meta = FieldMeta(
                image_id=Path(rel).stem,
                image_height_px=geo["image_h"], image_width_px=geo["image_w"],
                patch_size_px=geo["patch_size"], stride_px=geo["stride"],
                layer_index=0, facet="key", model_id="eval",
                descriptor_dim=1)
            masks.append(_grid_labels_from_png(png, meta))
        fit = landmark_regression_error(
            masks, [np.asarray(p, dtype=np.float64) for p in section["points"]],
            section["train"], section["test"])
        report["landmarks"] = {"error": fit.error, "used_ridge": fit.used_ridge}

    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", report)
    return 0


def cmd_pca(cfg: dict) -> int:
    _require(cfg, "input_dir", "out_dir")
    fields, _ = _load_directory(cfg["input_dir"], cfg["layer"], cfg["facet"])
    primary = [f for f in fields if not f.meta.augmented]
    matrix = stack_fields(primary)
    result = pca(matrix, cfg["n_components"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    render_component_maps(primary, result, out)
    write_field(components_field(result, primary[0].meta), out / "components.vitd")
    _write_json(out / "report.json", {
        "command": "pca",
        "backend": kernels.BACKEND,
        "config": cfg,
        "result": {
            "explained_variance": [float(v) for v in result.explained_variance],
            "degenerate": result.degenerate,
        },
    })
    return 0


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config or a previous run report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitdesc",
        description="Co-segmentation, part discovery, and point matching "
                    "over dense descriptor files.")
    commands = parser.add_subparsers(dest="command", required=True)
    boolean = argparse.BooleanOptionalAction

    coseg = commands.add_parser("coseg", help="common-foreground segmentation")
    parts = commands.add_parser("parts", help="part co-segmentation")
    for sub in (coseg, parts):
        _add_common(sub)
        sub.add_argument("--input-dir", dest="input_dir")
        sub.add_argument("--out-dir", dest="out_dir")
        sub.add_argument("--image-dir", dest="image_dir",
                         help="RGB images for refinement and overlays")
        sub.add_argument("--layer", type=int)
        sub.add_argument("--facet")
        sub.add_argument("--k", type=int, help="cluster count (default: elbow)")
        sub.add_argument("--k-min", dest="k_min", type=int)
        sub.add_argument("--k-max", dest="k_max", type=int)
        sub.add_argument("--drop-threshold", dest="drop_threshold", type=float)
        sub.add_argument("--tau", type=float)
        sub.add_argument("--vote-fraction", dest="vote_fraction", type=float)
        sub.add_argument("--summed-voting", dest="summed_voting", action=boolean)
        sub.add_argument("--seed", type=int)
        sub.add_argument("--restarts", type=int)
        sub.add_argument("--normalize", action=boolean)
        sub.add_argument("--refine", action=boolean)
    parts.add_argument("--num-parts", dest="num_parts", type=int)

    match = commands.add_parser("match", help="point correspondences")
    _add_common(match)
    match.add_argument("--src", help="source descriptor .vitd file")
    match.add_argument("--tgt", help="target descriptor .vitd file")
    match.add_argument("--keypoints", help="JSON [[y, x], ...] source keypoints")
    match.add_argument("--out-dir", dest="out_dir")
    match.add_argument("--bins", action=boolean)
    match.add_argument("--levels", type=int)
    match.add_argument("--dilation-base", dest="dilation_base", type=int)
    match.add_argument("--seed", type=int)

    evaluate = commands.add_parser("eval", help="score predictions")
    _add_common(evaluate)
    evaluate.add_argument("--manifest", help="JSON evaluation manifest")
    evaluate.add_argument("--out-dir", dest="out_dir")
    evaluate.add_argument("--alpha", type=float)

    pca_cmd = commands.add_parser("pca", help="principal component maps")
    _add_common(pca_cmd)
    pca_cmd.add_argument("--input-dir", dest="input_dir")
    pca_cmd.add_argument("--out-dir", dest="out_dir")
    pca_cmd.add_argument("--layer", type=int)
    pca_cmd.add_argument("--facet")
    pca_cmd.add_argument("--n-components", dest="n_components", type=int)

    return parser


_HANDLERS = {
    "coseg": cmd_coseg,
    "parts": cmd_parts,
    "match": cmd_match,
    "eval": cmd_eval,
    "pca": cmd_pca,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        # BLAS is pinned to one thread for the whole run: reports and output
        # files are bit-identical no matter the machine's thread count.
        with single_thread_blas():
            cfg = _resolve(args.command, args)
            return _HANDLERS[args.command](cfg)
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
