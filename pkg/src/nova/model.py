"""Model components: vision transformer encoder, MLP predictor with batch
normalization, and a frozen text-anchor encoder with a learnable projection.

The text backbone is a deterministic table of per-token embeddings drawn
once from a seeded standard normal and mean-pooled; it stands in for a
pretrained clinical language model at desk scale while preserving the
architectural contract (frozen backbone, learnable projection head,
zero gradient into the table).
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

GLOBAL_SIZE = 224
LOCAL_SIZE = 96

_PRESETS = {
    "tiny": (64, 2, 2),
    "small": (384, 12, 6),
    "base": (768, 12, 12),
}


@dataclass(frozen=True)
class ViTConfig:
    width: int
    depth: int
    heads: int
    patch_size: int = 16
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if GLOBAL_SIZE % self.patch_size != 0 or LOCAL_SIZE % self.patch_size != 0:
            raise ValueError(
                f"patch size {self.patch_size} must divide both {GLOBAL_SIZE} and {LOCAL_SIZE}"
            )

    @classmethod
    def preset(cls, name: str, patch_size: int = 16) -> "ViTConfig":
        if name not in _PRESETS:
            raise ValueError(f"unknown preset {name!r}, choose from {sorted(_PRESETS)}")
        width, depth, heads = _PRESETS[name]
        return cls(width=width, depth=depth, heads=heads, patch_size=patch_size)


@dataclass(frozen=True)
class PredictorConfig:
    in_dim: int
    hidden: int = 2048
    out_dim: int = 64

    def __post_init__(self):
        if self.in_dim < 1 or self.hidden < 1 or self.out_dim < 1:
            raise ValueError("all predictor dimensions must be >= 1")


def interpolate_pos_embed(pos: torch.Tensor, target_tokens: int) -> torch.Tensor:
    """Resize a square positional grid to a new square token count by
    bicubic 2-D interpolation; identity when the count already matches."""
    if pos.ndim != 2:
        raise ValueError(f"expected (tokens, width) positional grid, got shape {tuple(pos.shape)}")
    n0, width = pos.shape
    g = math.isqrt(target_tokens)
    if g * g != target_tokens or target_tokens < 1:
        raise ValueError(f"target token count {target_tokens} is not a perfect square")
    if target_tokens == n0:
        return pos
    g0 = math.isqrt(n0)
    if g0 * g0 != n0:
        raise ValueError(f"source grid of {n0} tokens is not square")
    grid = pos.T.reshape(1, width, g0, g0)
    out = F.interpolate(grid, size=(g, g), mode="bicubic", align_corners=False)
    return out.reshape(width, target_tokens).T


def _init_module(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Conv2d)):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class SelfAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.scale = self.head_dim**-0.5
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, l, c = x.shape
        qkv = self.qkv(x).reshape(n, l, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(n, l, c)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, width: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = SelfAttention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, mlp_ratio * width),
            nn.GELU(),
            nn.Linear(mlp_ratio * width, width),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class VisionTransformer(nn.Module):
    """ViT over square inputs whose side is divisible by the patch size.

    The positional grid is sized for 224-pixel input and bicubically
    interpolated for other resolutions (96-pixel local crops). Patch tokens
    are mean-pooled; there is no class token.
    """

    def __init__(self, cfg: ViTConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Conv2d(3, cfg.width, kernel_size=cfg.patch_size, stride=cfg.patch_size)
        base_grid = GLOBAL_SIZE // cfg.patch_size
        self.pos_embed = nn.Parameter(torch.empty(base_grid * base_grid, cfg.width))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(Block(cfg.width, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.width)
        self.apply(_init_module)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) input, got shape {tuple(x.shape)}")
        h, w = x.shape[2], x.shape[3]
        if h != w or h % self.cfg.patch_size != 0:
            raise ValueError(
                f"input size {h}x{w} must be square and divisible by patch size {self.cfg.patch_size}"
            )
        tokens = self.patch_embed(x).flatten(2).transpose(1, 2)  # (N, L, width)
        tokens = tokens + interpolate_pos_embed(self.pos_embed, tokens.shape[1])
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens).mean(dim=1)


class Predictor(nn.Module):
    """3-layer MLP with batch normalization between layers, mapping encoder
    embeddings into the shared space. GELU keeps the whole loss surface
    smooth for the finite-difference gradient audits. Train mode needs
    batch size >= 2."""

    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        self.cfg = cfg
        self.fc1 = nn.Linear(cfg.in_dim, cfg.hidden)
        self.bn1 = nn.BatchNorm1d(cfg.hidden)
        self.fc2 = nn.Linear(cfg.hidden, cfg.hidden)
        self.bn2 = nn.BatchNorm1d(cfg.hidden)
        self.fc3 = nn.Linear(cfg.hidden, cfg.out_dim)
        self.apply(_init_module)
        # the output layer starts at unit output variance (inputs are
        # batch-normalized then rectified, so E[x^2] ~ 1/2): the embedding
        # distribution then begins at the regularizer's target scale, where
        # its restoring force is strong, instead of deep in the flat
        # near-collapse basin where the test statistic has vanishing gradient
        nn.init.normal_(self.fc3.weight, std=math.sqrt(2.0 / cfg.hidden))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.training and x.shape[0] < 2:
            raise ValueError("train-mode prediction needs batch size >= 2 for batch statistics")
        x = F.gelu(self.bn1(self.fc1(x)))
        x = F.gelu(self.bn2(self.fc2(x)))
        return self.fc3(x)


_TOKEN_RE = re.compile(r"[a-z0-9]+")
_UNKNOWN_KEY = "\x00unknown\x00"  # cannot collide with real tokens
_SEED_MASK = (1 << 64) - 1


def tokenize(text: str) -> list:
    """Lowercase and split on whitespace/punctuation."""
    return _TOKEN_RE.findall(text.lower())


class TextAnchorTable:
    """Frozen map from token to embedding vector.

    Vectors are standard-normal draws keyed by a stable digest of the token,
    so lookups are deterministic across processes and insertion order, and
    entries can never change during training. Texts with no tokens fall back
    to a dedicated frozen unknown-token vector.
    """

    def __init__(self, dim: int = 128, seed: int = 0):
        if dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        self.dim = dim
        self.seed = int(seed)
        self._cache: dict = {}

    def token_vector(self, token: str) -> np.ndarray:
        cached = self._cache.get(token)
        if cached is None:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            key = int.from_bytes(digest, "little")
            rng = np.random.default_rng(np.random.SeedSequence([self.seed & _SEED_MASK, key]))
            cached = rng.standard_normal(self.dim).astype(np.float32)
            cached.setflags(write=False)
            self._cache[token] = cached
        return cached

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            return self.token_vector(_UNKNOWN_KEY)
        return np.mean([self.token_vector(tok) for tok in tokens], axis=0, dtype=np.float32)


class TextEncoder(nn.Module):
    """Frozen anchor table followed by a learnable affine projection into
    the shared space. Gradient flows into the projection only."""

    def __init__(self, table: TextAnchorTable, out_dim: int = 64):
        super().__init__()
        self.table = table
        self.head = nn.Linear(table.dim, out_dim)
        self.apply(_init_module)
        # mean pooling over ~6 unit-variance tokens leaves ~1/6 variance per
        # dimension; scale the projection so anchors also start near unit
        # output variance (see Predictor.fc3)
        nn.init.normal_(self.head.weight, std=math.sqrt(6.0 / table.dim))

    def forward(self, texts) -> torch.Tensor:
        if isinstance(texts, str):
            texts = [texts]
        pooled = np.stack([self.table.embed(t) for t in texts])
        pooled = torch.as_tensor(pooled, dtype=self.head.weight.dtype, device=self.head.weight.device)
        return self.head(pooled)


class ContrastiveHead(nn.Module):
    """Learnable temperature (log-parametrized, hence always positive) and
    bias for the contrastive baseline objectives."""

    def __init__(self, temperature: float = 1.0, bias: float = 0.0):
        super().__init__()
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.log_tau = nn.Parameter(torch.tensor(math.log(temperature)))
        self.bias = nn.Parameter(torch.tensor(float(bias)))

    @property
    def tau(self) -> torch.Tensor:
        return self.log_tau.exp()


class NovaModel(nn.Module):
    """Vision encoder + predictor + frozen-text encoder bundle."""

    def __init__(
        self,
        vit_cfg: ViTConfig,
        predictor_cfg: PredictorConfig | None = None,
        text_dim: int = 128,
        text_seed: int = 0,
        out_dim: int = 64,
        predictor_hidden: int = 2048,
        temperature: float = 1.0,
        bias: float = 0.0,
    ):
        super().__init__()
        if predictor_cfg is None:
            predictor_cfg = PredictorConfig(in_dim=vit_cfg.width, hidden=predictor_hidden, out_dim=out_dim)
        if predictor_cfg.in_dim != vit_cfg.width:
            raise ValueError("predictor input dimension must equal encoder width")
        self.vision = VisionTransformer(vit_cfg)
        self.predictor = Predictor(predictor_cfg)
        self.text = TextEncoder(TextAnchorTable(dim=text_dim, seed=text_seed), out_dim=predictor_cfg.out_dim)
        self.contrastive = ContrastiveHead(temperature=temperature, bias=bias)

    @property
    def out_dim(self) -> int:
        return self.predictor.cfg.out_dim

    def predict_views(self, images: torch.Tensor) -> torch.Tensor:
        return self.predictor(self.vision(images))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
