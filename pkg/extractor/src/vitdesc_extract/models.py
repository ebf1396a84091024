"""Model registry.

Three families:
  - torchvision ViTs by their torchvision names (vit_b_16, ...), randomly
    initialized unless --pretrained (downloads) or a local --weights file
  - DINO self-distilled ViTs via torch.hub (dino_vits8, ...), always
    pretrained, needs network access on first use
  - vit_t_8, a small fixed-seed random ViT for pipeline smoke tests
"""

from __future__ import annotations

from pathlib import Path

import torch

TORCHVISION_VITS = ("vit_b_16", "vit_b_32", "vit_l_16", "vit_l_32", "vit_h_14")
DINO_HUB_VITS = ("dino_vits8", "dino_vits16", "dino_vitb8", "dino_vitb16")
_DINO_REPO = "facebookresearch/dino:main"

# Deliberately tiny and deterministic: four blocks, 32-dim, patch 8.  Useful
# for exercising the full pipeline without weights or a GPU; the features are
# meaningless for real images.
_TINY_CONFIGS = {
    "vit_t_8": dict(image_size=64, patch_size=8, num_layers=4, num_heads=2,
                    hidden_dim=32, mlp_dim=64),
}


class ModelLoadError(RuntimeError):
    """A model id is unknown or its weights cannot be obtained."""


def known_models() -> tuple[str, ...]:
    return tuple(_TINY_CONFIGS) + TORCHVISION_VITS + DINO_HUB_VITS


def load_model(model_id: str, weights: str | Path | None = None,
               pretrained: bool = False) -> torch.nn.Module:
    """Instantiate ``model_id`` and optionally load a local state dict."""
    if model_id in _TINY_CONFIGS:
        from torchvision.models.vision_transformer import VisionTransformer

        # Fixed-seed init so repeated runs (and separate processes) agree.
        gen_state = torch.random.get_rng_state()
        try:
            torch.manual_seed(0)
            model = VisionTransformer(**_TINY_CONFIGS[model_id])
        finally:
            torch.random.set_rng_state(gen_state)
    elif model_id in TORCHVISION_VITS:
        import torchvision.models

        ctor = getattr(torchvision.models, model_id)
        try:
            model = ctor(weights="DEFAULT" if pretrained else None)
        except Exception as exc:
            raise ModelLoadError(f"cannot build {model_id}: {exc}") from exc
    elif model_id in DINO_HUB_VITS:
        try:
            model = torch.hub.load(_DINO_REPO, model_id)
        except Exception as exc:
            raise ModelLoadError(
                f"cannot fetch {model_id} from torch.hub: {exc}") from exc
    else:
        raise ModelLoadError(
            f"unknown model id {model_id!r}; known: {', '.join(known_models())}")

    if weights is not None:
        try:
            state = torch.load(weights, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        except Exception as exc:
            raise ModelLoadError(f"cannot load weights {weights}: {exc}") from exc
    model.eval()
    return model
