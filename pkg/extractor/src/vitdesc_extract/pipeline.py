"""Image-to-VITD extraction pipeline.

File naming, consumed as-is by the descriptor toolkit:

    {image_id}_{layer}_{facet}.vitd          one per requested (layer, facet)
    {image_id}_saliency.vitd                 when saliency is on
    {image_id}_aug{i}_{layer}_{facet}.vitd   augmented copies, i from 1

Augmented files keep the original image_id in their header and set the
augmented flag; the consumer clusters them but never writes masks for them.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import ExtractConfig
from .models import load_model
from .vit import ViTExtractor

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def load_image(source: str | Path | Image.Image,
               load_size: int | None = None) -> Image.Image:
    """RGB image, shorter side resized to ``load_size`` (aspect kept, no crop)."""
    img = source if isinstance(source, Image.Image) else Image.open(source)
    img = img.convert("RGB")
    if load_size is not None:
        w, h = img.size
        scale = load_size / min(w, h)
        img = img.resize((max(1, round(w * scale)), max(1, round(h * scale))),
                         Image.Resampling.BICUBIC)
    return img


def image_tensor(img: Image.Image) -> torch.Tensor:
    """(1, 3, H, W) float32, ImageNet-normalized."""
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(IMAGENET_MEAN, dtype=np.float32)) / np.asarray(
        IMAGENET_STD, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0)


def _id_of(source: str | Path | Image.Image, image_id: str | None) -> str:
    if image_id is not None:
        return image_id
    if isinstance(source, Image.Image):
        raise ValueError("image_id is required when passing an in-memory image")
    return Path(source).stem


def _build_extractor(cfg: ExtractConfig, model: torch.nn.Module | None,
                     extractor: ViTExtractor | None) -> ViTExtractor:
    if extractor is not None:
        return extractor
    if model is None:
        model = load_model(cfg.model_id)
    return ViTExtractor(model, stride=cfg.stride_px)


def _write_features(img: Image.Image, image_id: str, cfg: ExtractConfig,
                    extractor: ViTExtractor, out_dir: Path,
                    augment_index: int | None,
                    want_saliency: bool) -> list[Path]:
    from .vitd import write_vitd

    w, h = img.size
    feats = extractor.run(image_tensor(img), cfg.layers, cfg.facets,
                          saliency=want_saliency, head_subset=cfg.head_subset)
    tag = "" if augment_index is None else f"_aug{augment_index}"
    written: list[Path] = []
    for (layer, facet), grid in sorted(feats.facets.items()):
        path = out_dir / f"{image_id}{tag}_{layer}_{facet}.vitd"
        write_vitd(path, image_id=image_id, image_h=h, image_w=w,
                   patch=extractor.patch_size, stride=extractor.stride,
                   layer=layer, facet=facet, model_id=cfg.model_id,
                   payload=grid, augmented=augment_index is not None)
        written.append(path)
    if feats.saliency is not None:
        path = out_dir / f"{image_id}_saliency.vitd"
        write_vitd(path, image_id=image_id, image_h=h, image_w=w,
                   patch=extractor.patch_size, stride=extractor.stride,
                   layer=0, facet="key", model_id=cfg.model_id,
                   payload=feats.saliency, kind="saliency")
        written.append(path)
    return written


def extract(image: str | Path | Image.Image, cfg: ExtractConfig,
            out_dir: str | Path, *, model: torch.nn.Module | None = None,
            extractor: ViTExtractor | None = None,
            image_id: str | None = None) -> list[Path]:
    """Extract one image's descriptor (and saliency) fields into ``out_dir``."""
    extractor = _build_extractor(cfg, model, extractor)
    image_id = _id_of(image, image_id)
    img = load_image(image, cfg.image_load_size)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return _write_features(img, image_id, cfg, extractor, out, None, cfg.saliency)


def _augment_rng(cfg: ExtractConfig, image_id: str, copy: int) -> np.random.Generator:
    # Seeded per (image_id, copy) so results don't depend on batch order.
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    entropy = int.from_bytes(digest[:8], "little")
    return np.random.default_rng((cfg.augment_seed, entropy, copy))


def _augment_image(img: Image.Image, rng: np.random.Generator,
                   patch: int) -> tuple[Image.Image, dict]:
    w, h = img.size
    scale = float(rng.uniform(0.8, 1.0))
    ch = min(h, max(patch, round(h * scale)))
    cw = min(w, max(patch, round(w * scale)))
    top = int(rng.integers(0, h - ch, endpoint=True))
    left = int(rng.integers(0, w - cw, endpoint=True))
    flip = bool(rng.random() < 0.5)
    out = img.crop((left, top, left + cw, top + ch))
    if flip:
        out = out.transpose(Image.Transpose.FLIP_LEFT_RIGHT)
    params = {"scale": scale, "top": top, "left": left,
              "height": ch, "width": cw, "flip": flip}
    return out, params


def extract_augmented(images, cfg: ExtractConfig, out_dir: str | Path, *,
                      model: torch.nn.Module | None = None,
                      extractor: ViTExtractor | None = None) -> dict:
    """Extract a batch plus ``cfg.n_augment`` jittered copies per image.

    Returns {"files": [...], "augments": {image_id: [params per copy]}}.
    With n_augment == 0 this is exactly a batched ``extract``.
    """
    extractor = _build_extractor(cfg, model, extractor)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    augments: dict[str, list[dict]] = {}
    for source in images:
        image_id = _id_of(source, None)
        img = load_image(source, cfg.image_load_size)
        files += _write_features(img, image_id, cfg, extractor, out, None,
                                 cfg.saliency)
        if cfg.n_augment:
            copies = []
            for i in range(1, cfg.n_augment + 1):
                rng = _augment_rng(cfg, image_id, i)
                jittered, params = _augment_image(img, rng, extractor.patch_size)
                files += _write_features(jittered, image_id, cfg, extractor,
                                         out, i, False)
                copies.append(params)
            augments[image_id] = copies
    return {"files": files, "augments": augments}
