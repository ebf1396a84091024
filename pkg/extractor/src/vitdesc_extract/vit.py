"""Facet and attention extraction from ViT encoders at configurable stride.

The extractor never calls a model's own ``forward``.  It rebuilds the token
path itself: patch embedding with the requested stride, positional embedding
resampled to the denser grid, then the model's encoder blocks run one by one
so every block's input is in hand.  Facets come from those inputs:

    query/key/value   projections of the block's pre-attention layernorm
    token             the block's output hidden state

Multi-head facets stay head-concatenated, i.e. one hidden_dim vector per
patch.  Saliency is the last block's CLS-to-patch attention averaged over
heads (or a chosen subset), min-max normalized per image.

Two module layouts are supported through small adapters: torchvision's
VisionTransformer and the timm-style layout used by the DINO hub models
(fused qkv linear, ``blocks``/``norm1``/``attn`` naming).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F


class AdapterError(ValueError):
    """The module does not look like a supported ViT layout."""


class _TorchvisionAdapter:
    """torchvision.models.vision_transformer.VisionTransformer."""

    def __init__(self, module: torch.nn.Module) -> None:
        self.module = module
        conv = module.conv_proj
        self.patch_size = int(conv.kernel_size[0])
        self.hidden_dim = int(module.hidden_dim)
        self.blocks = list(module.encoder.layers)
        self.num_heads = int(self.blocks[0].self_attention.num_heads)
        g0 = int(module.image_size) // self.patch_size
        self.native_grid = (g0, g0)

    def embed_patches(self, img: torch.Tensor, stride: int) -> torch.Tensor:
        conv = self.module.conv_proj
        return F.conv2d(img, conv.weight, conv.bias, stride=(stride, stride))

    def cls_token(self) -> torch.Tensor:
        return self.module.class_token

    def pos_tokens(self) -> torch.Tensor:
        return self.module.encoder.pos_embedding

    def pre_blocks(self, x: torch.Tensor) -> torch.Tensor:
        return self.module.encoder.dropout(x)

    def attn_norm(self, block: torch.nn.Module, x: torch.Tensor) -> torch.Tensor:
        return block.ln_1(x)

    def qkv(self, block: torch.nn.Module,
            normed: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        att = block.self_attention
        fused = F.linear(normed, att.in_proj_weight, att.in_proj_bias)
        q, k, v = fused.chunk(3, dim=-1)
        return q, k, v


class _TimmAdapter:
    """timm-style ViT (DINO hub models): patch_embed.proj, blocks[i].attn.qkv."""

    def __init__(self, module: torch.nn.Module) -> None:
        self.module = module
        conv = module.patch_embed.proj
        self.patch_size = int(conv.kernel_size[0])
        self.hidden_dim = int(conv.out_channels)
        self.blocks = list(module.blocks)
        self.num_heads = int(self.blocks[0].attn.num_heads)
        n = module.pos_embed.shape[1] - 1
        g0 = math.isqrt(n)
        if g0 * g0 != n:
            raise AdapterError(f"non-square positional grid of {n} tokens")
        self.native_grid = (g0, g0)

    def embed_patches(self, img: torch.Tensor, stride: int) -> torch.Tensor:
        conv = self.module.patch_embed.proj
        return F.conv2d(img, conv.weight, conv.bias, stride=(stride, stride))

    def cls_token(self) -> torch.Tensor:
        return self.module.cls_token

    def pos_tokens(self) -> torch.Tensor:
        return self.module.pos_embed

    def pre_blocks(self, x: torch.Tensor) -> torch.Tensor:
        drop = getattr(self.module, "pos_drop", None)
        return x if drop is None else drop(x)

    def attn_norm(self, block: torch.nn.Module, x: torch.Tensor) -> torch.Tensor:
        return block.norm1(x)

    def qkv(self, block: torch.nn.Module,
            normed: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        fused = block.attn.qkv(normed)
        q, k, v = fused.chunk(3, dim=-1)
        return q, k, v


def wrap_model(module: torch.nn.Module):
    """Pick the adapter matching the module's layout."""
    if hasattr(module, "conv_proj") and hasattr(module, "encoder"):
        return _TorchvisionAdapter(module)
    if (hasattr(module, "patch_embed") and hasattr(module, "blocks")
            and hasattr(module, "cls_token") and hasattr(module, "pos_embed")):
        return _TimmAdapter(module)
    raise AdapterError(
        f"unsupported module layout {type(module).__name__}; expected a "
        "torchvision VisionTransformer or a timm-style ViT")


def resample_pos_embedding(pos: torch.Tensor, native_grid: tuple[int, int],
                           grid: tuple[int, int]) -> torch.Tensor:
    """Positional embedding for an arbitrary patch grid.

    Bicubic resampling of the per-patch part; the CLS slot passes through.
    The native grid returns the stored tensor itself, untouched, so extraction
    at the model's own geometry is bit-equal to the unmodified forward pass.
    """
    if grid == native_grid:
        return pos
    g0h, g0w = native_grid
    gh, gw = grid
    cls_pos = pos[:, :1]
    patch_pos = pos[:, 1:].reshape(1, g0h, g0w, -1).permute(0, 3, 1, 2)
    patch_pos = F.interpolate(patch_pos, size=(gh, gw), mode="bicubic",
                              align_corners=False)
    patch_pos = patch_pos.permute(0, 2, 3, 1).reshape(1, gh * gw, -1)
    return torch.cat([cls_pos, patch_pos], dim=1)


@dataclass(frozen=True)
class ExtractedFeatures:
    """One image's features: per-(layer, facet) grids plus optional saliency."""

    grid_h: int
    grid_w: int
    facets: dict[tuple[int, str], np.ndarray]
    saliency: np.ndarray | None


class ViTExtractor:
    """Runs one wrapped model at a fixed stride.

    The module is put in eval mode and frozen; every ``run`` is a single
    no-grad forward.
    """

    def __init__(self, model: torch.nn.Module, stride: int | None = None) -> None:
        self.adapter = wrap_model(model)
        self.patch_size = self.adapter.patch_size
        self.num_layers = len(self.adapter.blocks)
        self.num_heads = self.adapter.num_heads
        self.stride = self.patch_size if stride is None else int(stride)
        if not (1 <= self.stride <= self.patch_size):
            raise ValueError(
                f"stride must be in [1, {self.patch_size}], got {self.stride}")
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)

    def grid_for(self, image_h: int, image_w: int) -> tuple[int, int]:
        if image_h < self.patch_size or image_w < self.patch_size:
            raise ValueError(
                f"image {image_h}x{image_w} smaller than patch {self.patch_size}")
        return ((image_h - self.patch_size) // self.stride + 1,
                (image_w - self.patch_size) // self.stride + 1)

    @torch.no_grad()
    def run(self, img: torch.Tensor, layers: tuple[int, ...],
            facets: tuple[str, ...], saliency: bool = False,
            head_subset: tuple[int, ...] | None = None) -> ExtractedFeatures:
        """Extract the requested facets (and saliency) from one image tensor.

        ``img`` is (1, 3, H, W) float32.  Layers index encoder blocks from 0.
        """
        if img.ndim != 4 or img.shape[0] != 1:
            raise ValueError(f"expected a (1, 3, H, W) tensor, got {tuple(img.shape)}")
        bad = [x for x in layers if not 0 <= x < self.num_layers]
        if bad:
            raise ValueError(
                f"layer indices {bad} out of range for a {self.num_layers}-block model")
        if head_subset is not None:
            bad_heads = [h for h in head_subset if not 0 <= h < self.num_heads]
            if bad_heads:
                raise ValueError(
                    f"head indices {bad_heads} out of range for {self.num_heads} heads")
        gh, gw = self.grid_for(int(img.shape[2]), int(img.shape[3]))

        adapter = self.adapter
        x = adapter.embed_patches(img, self.stride)
        x = x.reshape(1, adapter.hidden_dim, gh * gw).permute(0, 2, 1)
        x = torch.cat([adapter.cls_token().expand(1, -1, -1), x], dim=1)
        x = x + resample_pos_embedding(adapter.pos_tokens(), adapter.native_grid,
                                       (gh, gw))
        x = adapter.pre_blocks(x)

        block_inputs: list[torch.Tensor] = []
        for block in adapter.blocks:
            block_inputs.append(x)
            x = block(x)
        final = x

        def to_grid(tokens: torch.Tensor) -> np.ndarray:
            # drop CLS, keep head-concatenated hidden_dim per patch
            arr = tokens[0, 1:].reshape(gh, gw, -1)
            return np.ascontiguousarray(arr.numpy(), dtype=np.float32)

        out: dict[tuple[int, str], np.ndarray] = {}
        for layer in layers:
            block = adapter.blocks[layer]
            if any(f in facets for f in ("query", "key", "value")):
                normed = adapter.attn_norm(block, block_inputs[layer])
                q, k, v = adapter.qkv(block, normed)
                for name, tensor in (("query", q), ("key", k), ("value", v)):
                    if name in facets:
                        out[(layer, name)] = to_grid(tensor)
            if "token" in facets:
                token = (block_inputs[layer + 1]
                         if layer + 1 < self.num_layers else final)
                out[(layer, "token")] = to_grid(token)

        sal = None
        if saliency:
            sal = self._cls_attention(block_inputs[-1], gh, gw, head_subset)
        return ExtractedFeatures(grid_h=gh, grid_w=gw, facets=out, saliency=sal)

    def _cls_attention(self, last_input: torch.Tensor, gh: int, gw: int,
                       head_subset: tuple[int, ...] | None) -> np.ndarray:
        adapter = self.adapter
        block = adapter.blocks[-1]
        normed = adapter.attn_norm(block, last_input)
        q, k, _ = adapter.qkv(block, normed)
        n = q.shape[1]
        dh = adapter.hidden_dim // self.num_heads
        q = q.reshape(1, n, self.num_heads, dh).permute(0, 2, 1, 3)
        k = k.reshape(1, n, self.num_heads, dh).permute(0, 2, 1, 3)
        # CLS row only: (1, heads, 1, n) after softmax over the token axis
        logits = torch.matmul(q[:, :, :1], k.transpose(-2, -1)) * dh ** -0.5
        attn = torch.softmax(logits, dim=-1)[0, :, 0, 1:]
        if head_subset is not None:
            attn = attn[list(head_subset)]
        sal = attn.mean(dim=0).numpy().astype(np.float64)
        lo, hi = float(sal.min()), float(sal.max())
        if hi > lo:
            sal = (sal - lo) / (hi - lo)
        else:
            sal = np.zeros_like(sal)
        return np.ascontiguousarray(sal.reshape(gh, gw), dtype=np.float32)
