"""Explicit object-aware fusion: logit concat, prototype attention, mask-feature
addition and the decamouflaged logits."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from camsam2.errors import InvariantError


@dataclass
class EofState:
    f_eof: torch.Tensor
    f_attn: torch.Tensor
    f_eof_prime: torch.Tensor
    logits_c: torch.Tensor
    attention_bypassed: bool


class PrototypeAttention(nn.Module):
    """Single-head cross-attention, pixels as queries, prototypes as keys/values,
    added back residually.  No prototypes means no attention at all."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def attend(self, f_eof: torch.Tensor, rows: torch.Tensor) -> torch.Tensor:
        """The attention term alone, shaped like ``f_eof``."""
        c, h, w = f_eof.shape
        x = f_eof.flatten(1).T
        q = self.q_proj(x)
        k = self.k_proj(rows)
        v = self.v_proj(rows)
        attn = torch.softmax(q @ k.T / math.sqrt(c), dim=-1)
        return self.out_proj(attn @ v).T.reshape(c, h, w)

    def forward(self, f_eof: torch.Tensor, rows: torch.Tensor) -> torch.Tensor:
        if rows.shape[0] == 0:
            return f_eof
        if rows.shape[-1] != f_eof.shape[0]:
            raise InvariantError(f"prototype width {rows.shape[-1]} != feature width {f_eof.shape[0]}")
        return f_eof + self.attend(f_eof, rows.to(f_eof.dtype))


class ExplicitFusion(nn.Module):
    def __init__(self, c0: int, mask_channels: int) -> None:
        super().__init__()
        self.concat = nn.Conv2d(c0 + 1, c0, 1)
        self.attn = PrototypeAttention(c0)
        self.maskproj = nn.Conv2d(mask_channels, c0, 1)

    def concat_mask_logits(self, f_iof: torch.Tensor, r_logits: torch.Tensor) -> torch.Tensor:
        if f_iof.shape[-2:] != r_logits.shape[-2:] or r_logits.shape[0] != 1:
            raise InvariantError(f"cannot concat {tuple(f_iof.shape)} with logits {tuple(r_logits.shape)}")
        return self.concat(torch.cat([f_iof, r_logits], dim=0))

    def prototype_attention(self, f_eof: torch.Tensor, rows: torch.Tensor) -> torch.Tensor:
        return self.attn(f_eof, rows)

    def add_mask_feature(self, f_attn: torch.Tensor, f_mask: torch.Tensor) -> torch.Tensor:
        if f_attn.shape[-2:] != f_mask.shape[-2:]:
            raise InvariantError("mask feature spatial size differs from the fused feature")
        return f_attn + self.maskproj(f_mask)

    def forward(self, f_iof, r_logits, rows, f_mask, weight_vec) -> EofState:
        f_eof = self.concat_mask_logits(f_iof, r_logits)
        f_attn = self.prototype_attention(f_eof, rows)
        f_prime = self.add_mask_feature(f_attn, f_mask)
        return EofState(f_eof, f_attn, f_prime, decam_logits(weight_vec, f_prime),
                        attention_bypassed=rows.shape[0] == 0)


def decam_logits(weight_vec: torch.Tensor, f_eof_prime: torch.Tensor) -> torch.Tensor:
    """Per-pixel channel contraction: [c0] x [c0, h, w] -> [1, h, w]."""
    if weight_vec.shape[-1] != f_eof_prime.shape[0]:
        raise InvariantError("weight vector width does not match feature channels")
    return torch.einsum("c,chw->hw", weight_vec, f_eof_prime)[None]
