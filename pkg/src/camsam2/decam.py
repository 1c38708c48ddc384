"""The learnable decamouflaged token and its projection head."""
from __future__ import annotations

import torch
from torch import nn

from camsam2.base import MLP
from camsam2.errors import InvariantError


def insert_token(base_tokens: torch.Tensor, token: torch.Tensor) -> torch.Tensor:
    """Append ``token`` [1, d] after ``base_tokens`` [n, d]."""
    if token.ndim != 2 or token.shape[0] != 1:
        raise InvariantError("exactly one decamouflaged token is supported")
    if base_tokens.shape[-1] != token.shape[-1]:
        raise InvariantError(f"token width {token.shape[-1]} != {base_tokens.shape[-1]}")
    return torch.cat([base_tokens, token], dim=0)


def extract_token(tokens_out: torch.Tensor) -> torch.Tensor:
    return tokens_out[-1:]


class DecamHead(nn.Module):
    """Holds the token and the 3-layer MLP mapping its decoded value to a
    per-channel weighting of the fused level-0 feature."""

    def __init__(self, token_dim: int, out_dim: int, init_std: float = 0.02) -> None:
        super().__init__()
        self.token = nn.Parameter(torch.randn(1, token_dim) * init_std)
        self.mlp = MLP(token_dim, token_dim, out_dim, 3)

    def project_token(self, t_prime: torch.Tensor) -> torch.Tensor:
        """[1, d] -> [c0]."""
        if t_prime.shape[-1] != self.token.shape[-1]:
            raise InvariantError("decoded token width mismatch")
        return self.mlp(t_prime.reshape(-1))
