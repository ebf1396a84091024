"""Shared fixtures: tiny models in both supported layouts, image helpers,
and an independent VITD re-reader used to check written bytes."""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest
import torch
import torch.nn as nn
from PIL import Image
from torchvision.models.vision_transformer import VisionTransformer


def tiny_tv(seed: int = 0) -> VisionTransformer:
    """Small torchvision ViT: 64px, patch 8, 4 blocks, 2 heads, 32-dim."""
    gen_state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        model = VisionTransformer(image_size=64, patch_size=8, num_layers=4,
                                  num_heads=2, hidden_dim=32, mlp_dim=64)
    finally:
        torch.random.set_rng_state(gen_state)
    return model.eval()


class _PatchEmbed(nn.Module):
    def __init__(self, patch: int, dim: int) -> None:
        super().__init__()
        self.proj = nn.Conv2d(3, dim, kernel_size=patch, stride=patch)

    def forward(self, x):
        return self.proj(x).flatten(2).transpose(1, 2)


class _Attention(nn.Module):
    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        self.num_heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, c // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1) * self.scale).softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class _Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_dim: int) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = _Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_dim), nn.GELU(),
                                 nn.Linear(mlp_dim, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class MiniDino(nn.Module):
    """timm-style layout (what the DINO hub models use): patch_embed.proj,
    cls_token, pos_embed, pos_drop, blocks[i].norm1/attn.qkv."""

    def __init__(self, image_size: int = 64, patch: int = 8, dim: int = 24,
                 heads: int = 3, depth: int = 3, mlp_dim: int = 48) -> None:
        super().__init__()
        g = image_size // patch
        self.patch_embed = _PatchEmbed(patch, dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, 1 + g * g, dim))
        self.pos_drop = nn.Dropout(0.0)
        self.blocks = nn.ModuleList(_Block(dim, heads, mlp_dim)
                                    for _ in range(depth))
        self.norm = nn.LayerNorm(dim)
        nn.init.normal_(self.cls_token, std=0.5)
        nn.init.normal_(self.pos_embed, std=0.5)

    def forward(self, x):
        x = self.patch_embed(x)
        x = torch.cat([self.cls_token.expand(x.shape[0], -1, -1), x], dim=1)
        x = self.pos_drop(x + self.pos_embed)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


def tiny_dino(seed: int = 1) -> MiniDino:
    gen_state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        model = MiniDino()
    finally:
        torch.random.set_rng_state(gen_state)
    return model.eval()


def make_image(h: int, w: int, seed: int = 0) -> Image.Image:
    rng = np.random.default_rng(seed)
    return Image.fromarray(rng.integers(0, 255, (h, w, 3), dtype=np.uint8))


def read_vitd(path) -> tuple[dict, np.ndarray]:
    """Minimal independent reader: (header dict, float32 payload array)."""
    raw = open(path, "rb").read()
    magic, version, hlen = struct.unpack_from("<4sII", raw)
    assert magic == b"VITD" and version == 1
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    payload = np.frombuffer(raw[12 + hlen:], dtype="<f4").reshape(
        header["grid_h"], header["grid_w"], header["descriptor_dim"])
    return header, payload


@pytest.fixture()
def tv_model():
    return tiny_tv()


@pytest.fixture()
def dino_model():
    return tiny_dino()
