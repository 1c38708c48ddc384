"""Frozen surrogate of a promptable video segmenter.

A small stand-in with the same interface as a SAM2-style tracker: a
three-level conv encoder, single-head memory attention over a FIFO memory
bank, a point/box/mask prompt encoder, a two-way-transformer mask decoder
with output tokens, and a memory encoder that writes each frame's mask back
into the bank.  All tensors are unbatched; a session processes one frame at
a time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from camsam2.config import ModelConfig
from camsam2.errors import ConfigError, InvariantError, PromptError


@dataclass
class FeaturePyramid:
    f0: torch.Tensor  # [c0, H/4, W/4]
    f1: torch.Tensor  # [c1, H/8, W/8]
    f2: torch.Tensor  # [c2, H/16, W/16]
    strides: tuple[int, int, int] = (4, 8, 16)


@dataclass
class PromptInput:
    """One first-frame prompt; exactly one payload is populated."""

    kind: str
    points: list[tuple[int, int, int]] | None = None
    box: tuple[int, int, int, int] | None = None
    mask: np.ndarray | None = None

    def validate(self, shape: tuple[int, int]) -> None:
        h, w = shape
        payloads = {"point": self.points, "box": self.box, "mask": self.mask}
        if self.kind not in payloads:
            raise PromptError(f"unknown prompt kind {self.kind!r}")
        for kind, payload in payloads.items():
            if (payload is not None) != (kind == self.kind):
                raise PromptError(f"{self.kind} prompt must carry only its own payload")
        if self.kind == "point":
            if not self.points:
                raise PromptError("point prompt has no points")
            for r, c, label in self.points:
                if not (0 <= r < h and 0 <= c < w):
                    raise PromptError(f"point ({r}, {c}) outside {h}x{w} frame")
                if label != 1:
                    raise PromptError("only foreground clicks (label 1) are supported")
        elif self.kind == "box":
            r0, c0, r1, c1 = self.box
            if not (0 <= r0 <= r1 < h and 0 <= c0 <= c1 < w):
                raise PromptError(f"invalid box {self.box} for {h}x{w} frame")
        else:
            m = np.asarray(self.mask)
            if m.shape != (h, w):
                raise PromptError(f"mask prompt shape {m.shape} != frame {(h, w)}")
            if not np.isin(m, (0, 1)).all():
                raise PromptError("mask prompt must be binary")


@dataclass
class PromptEmbedding:
    sparse: torch.Tensor  # [n_pts, d]
    dense: torch.Tensor | None  # [c2, h2, w2]


@dataclass
class DecoderOutput:
    mask_logits: torch.Tensor  # [1, h0, w0]
    mask_feature: torch.Tensor  # [cm, h0, w0]
    tokens_out: torch.Tensor  # [n_tok, d]
    memconditioned: torch.Tensor  # [c2, h2, w2]


@dataclass
class MemoryBank:
    capacity: int = 7
    entries: list[tuple[torch.Tensor, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def frame_indices(self) -> list[int]:
        return [idx for _, idx in self.entries]

    def add(self, feature: torch.Tensor, frame_index: int) -> None:
        if self.entries:
            if frame_index <= self.entries[-1][1]:
                raise InvariantError("memory frame indices must be strictly increasing")
            if feature.shape != self.entries[0][0].shape:
                raise InvariantError("memory entries must share one shape")
        self.entries.append((feature, frame_index))
        while len(self.entries) > self.capacity:
            self.entries.pop(0)


class LayerNorm2d(nn.Module):
    def __init__(self, channels: int, eps: float = 1e-6) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        u = x.mean(-3, keepdim=True)
        s = (x - u).pow(2).mean(-3, keepdim=True)
        x = (x - u) / torch.sqrt(s + self.eps)
        return self.weight[:, None, None] * x + self.bias[:, None, None]


class MLP(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int, layers: int) -> None:
        super().__init__()
        dims = [in_dim] + [hidden] * (layers - 1) + [out_dim]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


class Attention(nn.Module):
    """Multi-head attention with an optional internal width reduction."""

    def __init__(self, dim: int, heads: int, downsample: int = 1) -> None:
        super().__init__()
        inner = dim // downsample
        self.heads = heads
        self.q_proj = nn.Linear(dim, inner)
        self.k_proj = nn.Linear(dim, inner)
        self.v_proj = nn.Linear(dim, inner)
        self.out_proj = nn.Linear(inner, dim)

    def forward(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        q, k, v = self.q_proj(q), self.k_proj(k), self.v_proj(v)
        n, inner = q.shape
        hd = inner // self.heads
        q = q.view(n, self.heads, hd).transpose(0, 1)
        k = k.view(-1, self.heads, hd).transpose(0, 1)
        v = v.view(-1, self.heads, hd).transpose(0, 1)
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(hd), dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(n, inner)
        return self.out_proj(out)


class FourierPositions(nn.Module):
    """Random-Fourier positional encoding of normalized (row, col) coordinates."""

    def __init__(self, features: int) -> None:
        super().__init__()
        gen = torch.Generator().manual_seed(1234)
        self.register_buffer("gaussian", torch.randn(2, features, generator=gen))

    def encode(self, coords: torch.Tensor) -> torch.Tensor:
        # coords [..., 2] in [0, 1]
        c = (2 * coords - 1) @ self.gaussian.to(coords.dtype)
        c = 2 * math.pi * c
        return torch.cat([torch.sin(c), torch.cos(c)], dim=-1)

    def grid(self, h: int, w: int) -> torch.Tensor:
        """[d, h, w] encoding of pixel centres."""
        dtype = self.gaussian.dtype
        ys = (torch.arange(h, dtype=dtype) + 0.5) / h
        xs = (torch.arange(w, dtype=dtype) + 0.5) / w
        yy, xx = torch.meshgrid(ys, xs, indexing="ij")
        return self.encode(torch.stack([yy, xx], dim=-1)).permute(2, 0, 1)


class ImageEncoder(nn.Module):
    """Stem + three (conv3x3, GELU, conv3x3/2) stages giving strides 4/8/16."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.stem = nn.Conv2d(3, cfg.stem_channels, 3, stride=2, padding=1)
        stages = []
        cin = cfg.stem_channels
        for c in cfg.channels:
            stages.append(nn.Sequential(
                nn.Conv2d(cin, c, 3, padding=1), nn.GELU(),
                nn.Conv2d(c, c, 3, stride=2, padding=1),
            ))
            cin = c
        self.stages = nn.ModuleList(stages)

    def forward(self, image: torch.Tensor) -> FeaturePyramid:
        x = F.gelu(self.stem(image))
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
            x = F.gelu(x)
        return FeaturePyramid(*feats)


class MemoryAttention(nn.Module):
    """Single-head cross-attention from current deep features to the bank."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, f2: torch.Tensor, memory: torch.Tensor, pos: torch.Tensor) -> torch.Tensor:
        c, h, w = f2.shape
        x = f2.flatten(1).T
        p = pos.flatten(1).T
        m = memory.flatten(2).transpose(1, 2).reshape(-1, c)
        mp = p.repeat(memory.shape[0], 1)
        q = self.q_proj(x + p)
        k = self.k_proj(m + mp)
        v = self.v_proj(m)
        attn = torch.softmax(q @ k.T / math.sqrt(c), dim=-1)
        out = x + self.out_proj(attn @ v)
        return out.T.reshape(c, h, w)


class MaskDownsampler(nn.Module):
    """Full-resolution mask -> stride-16 embedding."""

    def __init__(self, out_dim: int, hidden: int = 16) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(1, hidden, 4, stride=4)
        self.conv2 = nn.Conv2d(hidden, out_dim, 4, stride=4)

    def forward(self, mask: torch.Tensor) -> torch.Tensor:
        return self.conv2(F.gelu(self.conv1(mask[None])))


class MemoryEncoder(nn.Module):
    def __init__(self, dim: int) -> None:
        super().__init__()
        self.mask_down = MaskDownsampler(dim)
        self.pix_proj = nn.Conv2d(dim, dim, 1)
        self.fuser = nn.Conv2d(dim, dim, 1)

    def forward(self, f2: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.pix_proj(f2) + self.mask_down(mask)
        return self.fuser(F.gelu(x))


class PromptEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, pe: FourierPositions) -> None:
        super().__init__()
        d = cfg.token_dim
        self.pe = pe
        self.point_embed = nn.Parameter(torch.randn(1, d) * 0.1)
        self.corner_embed = nn.Parameter(torch.randn(2, d) * 0.1)
        self.no_mask_embed = nn.Parameter(torch.randn(d) * 0.1)
        self.mask_down = MaskDownsampler(d)

    def forward(self, prompt: PromptInput | None, shape: tuple[int, int]) -> PromptEmbedding:
        h, w = shape
        d = self.point_embed.shape[1]
        dtype = self.point_embed.dtype
        if prompt is None:
            return PromptEmbedding(torch.zeros(0, d, dtype=dtype), None)
        prompt.validate(shape)
        scale = torch.tensor([h, w], dtype=dtype)
        if prompt.kind == "point":
            rc = torch.tensor([[r + 0.5, c + 0.5] for r, c, _ in prompt.points], dtype=dtype)
            sparse = self.pe.encode(rc / scale) + self.point_embed
            return PromptEmbedding(sparse, None)
        if prompt.kind == "box":
            r0, c0, r1, c1 = prompt.box
            rc = torch.tensor([[r0 + 0.5, c0 + 0.5], [r1 + 0.5, c1 + 0.5]], dtype=dtype)
            sparse = self.pe.encode(rc / scale) + self.corner_embed
            return PromptEmbedding(sparse, None)
        mask = torch.as_tensor(np.asarray(prompt.mask), dtype=dtype)
        return PromptEmbedding(torch.zeros(0, d, dtype=dtype), self.mask_down(mask))


class TwoWayBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_dim: int, downsample: int, skip_first_pe: bool) -> None:
        super().__init__()
        self.self_attn = Attention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.cross_t2i = Attention(dim, heads, downsample)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_dim), nn.ReLU(), nn.Linear(mlp_dim, dim))
        self.norm3 = nn.LayerNorm(dim)
        self.cross_i2t = Attention(dim, heads, downsample)
        self.norm4 = nn.LayerNorm(dim)
        self.skip_first_pe = skip_first_pe

    def forward(self, queries, keys, query_pe, key_pe):
        if self.skip_first_pe:
            queries = self.self_attn(queries, queries, queries)
        else:
            q = queries + query_pe
            queries = queries + self.self_attn(q, q, queries)
        queries = self.norm1(queries)
        q = queries + query_pe
        k = keys + key_pe
        queries = self.norm2(queries + self.cross_t2i(q, k, keys))
        queries = self.norm3(queries + self.mlp(queries))
        q = queries + query_pe
        k = keys + key_pe
        keys = self.norm4(keys + self.cross_i2t(k, q, queries))
        return queries, keys


class MaskDecoder(nn.Module):
    """Token-based decoder; base tokens are (iou, occlusion, mask)."""

    n_base_tokens = 3

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        d = cfg.token_dim
        self.base_tokens = nn.Parameter(torch.randn(self.n_base_tokens, d) * 0.1)
        self.blocks = nn.ModuleList(
            TwoWayBlock(d, cfg.decoder_heads, cfg.mlp_dim, cfg.decoder_attn_downsample, i == 0)
            for i in range(cfg.decoder_depth)
        )
        self.final_attn = Attention(d, cfg.decoder_heads, cfg.decoder_attn_downsample)
        self.norm_final = nn.LayerNorm(d)
        mid = max(cfg.mask_channels, d // 4)
        self.up1 = nn.ConvTranspose2d(d, mid, 2, stride=2)
        self.up_norm = LayerNorm2d(mid)
        self.up2 = nn.ConvTranspose2d(mid, cfg.mask_channels, 2, stride=2)
        self.hyper = MLP(d, d, cfg.mask_channels, 3)

    def forward(self, fmem, dense, sparse, extra_tokens, image_pe, no_mask_embed) -> DecoderOutput:
        d = self.base_tokens.shape[1]
        if extra_tokens.shape[-1] != d or sparse.shape[-1] != d:
            raise InvariantError(f"token width must be {d}")
        c, h, w = fmem.shape
        out_tokens = torch.cat([self.base_tokens, extra_tokens], dim=0)
        n_out = out_tokens.shape[0]
        tokens = torch.cat([out_tokens, sparse], dim=0)
        if dense is None:
            dense = no_mask_embed[:, None, None].expand(c, h, w)
        src = (fmem + dense).flatten(1).T
        pos = image_pe.flatten(1).T
        queries, keys = tokens, src
        for block in self.blocks:
            queries, keys = block(queries, keys, tokens, pos)
        q = queries + tokens
        k = keys + pos
        queries = self.norm_final(queries + self.final_attn(q, k, keys))
        img = keys.T.reshape(c, h, w)
        up = F.gelu(self.up_norm(self.up1(img)))
        mask_feature = F.gelu(self.up2(up))
        tokens_out = queries[:n_out]
        weights = self.hyper(tokens_out[2])
        logits = torch.einsum("c,chw->hw", weights, mask_feature)[None]
        return DecoderOutput(logits, mask_feature, tokens_out, fmem)


class SurrogateSegmenter(nn.Module):
    """The frozen host model.  Methods mirror the per-frame tracking loop."""

    def __init__(self, cfg: ModelConfig | None = None) -> None:
        super().__init__()
        self.cfg = cfg or ModelConfig()
        c2 = self.cfg.channels[2]
        self.pe = FourierPositions(self.cfg.pe_features)
        self.encoder = ImageEncoder(self.cfg)
        self.memory_attention = MemoryAttention(c2)
        self.prompt_encoder = PromptEncoder(self.cfg, self.pe)
        self.decoder = MaskDecoder(self.cfg)
        self.memory_encoder = MemoryEncoder(c2)

    # -- per-frame operations -------------------------------------------------
    def encode_frame(self, image: torch.Tensor) -> FeaturePyramid:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ConfigError(f"expected a [3, H, W] image, got {tuple(image.shape)}")
        h, w = image.shape[1:]
        if h % 16 or w % 16:
            raise ConfigError(f"frame size {h}x{w} is not divisible by 16")
        return self.encoder(image)

    def memory_condition(self, f2: torch.Tensor, bank: MemoryBank) -> torch.Tensor:
        if not bank.entries:
            return f2
        feats = [e for e, _ in bank.entries]
        if any(e.shape != f2.shape for e in feats):
            raise InvariantError("memory entry shape does not match the current feature")
        pos = self.pe.grid(*f2.shape[1:]).to(f2.dtype)
        return self.memory_attention(f2, torch.stack(feats), pos)

    def encode_prompt(self, prompt: PromptInput | None, shape: tuple[int, int]) -> PromptEmbedding:
        return self.prompt_encoder(prompt, shape)

    def decode_masks(self, fmem: torch.Tensor, prompt: PromptEmbedding,
                     extra_tokens: torch.Tensor | None = None) -> DecoderOutput:
        d = self.cfg.token_dim
        if extra_tokens is None:
            extra_tokens = fmem.new_zeros(0, d)
        if extra_tokens.ndim != 2 or extra_tokens.shape[1] != d:
            raise InvariantError(f"extra tokens must be [n, {d}]")
        image_pe = self.pe.grid(*fmem.shape[1:]).to(fmem.dtype)
        return self.decoder(fmem, prompt.dense, prompt.sparse, extra_tokens, image_pe,
                            self.prompt_encoder.no_mask_embed)

    def update_memory(self, bank: MemoryBank, f2: torch.Tensor, final_mask: torch.Tensor,
                      frame_index: int, detach: bool = True) -> MemoryBank:
        """Append a memory entry built from ``f2`` and a full-resolution binary mask."""
        if final_mask.ndim != 2:
            raise InvariantError("memory mask must be [H, W]")
        entry = self.memory_encoder(f2, final_mask.to(f2.dtype))
        bank.add(entry.detach() if detach else entry, frame_index)
        return bank

    def new_bank(self) -> MemoryBank:
        return MemoryBank(self.cfg.memory_capacity)

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    # -- standalone tracking ---------------------------------------------------
    def track(self, frames: torch.Tensor, prompt: PromptInput) -> list[torch.Tensor]:
        """Run the plain segmenter over ``frames`` [T, 3, H, W]; returns stride-4 logits.

        A mask-prompted first frame yields ``None`` in place of logits because
        its output is the prompt mask itself.
        """
        bank = self.new_bank()
        h, w = frames.shape[-2:]
        out = []
        for t in range(frames.shape[0]):
            pyr = self.encode_frame(frames[t])
            if t == 0 and prompt.kind == "mask":
                prompt.validate((h, w))
                full = torch.as_tensor(prompt.mask, dtype=frames.dtype)
                out.append(None)
            else:
                fmem = self.memory_condition(pyr.f2, bank)
                emb = self.encode_prompt(prompt if t == 0 else None, (h, w))
                dec = self.decode_masks(fmem, emb)
                out.append(dec.mask_logits)
                full = binarize_full(dec.mask_logits, (h, w))
            self.update_memory(bank, pyr.f2, full, t)
        return out


def upsample_logits(logits: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    return F.interpolate(logits[None], size=size, mode="bilinear", align_corners=False)[0]


def binarize_full(logits: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Stride-4 logits -> full-resolution {0,1} mask (logit > 0)."""
    return (upsample_logits(logits, size)[0] > 0).to(logits.dtype)
