"""Simulated first-frame prompts: seeded clicks, tight boxes, full masks."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from camsam2.base import PromptInput
from camsam2.errors import PromptError


@dataclass(frozen=True)
class PromptProtocol:
    kind_probabilities: tuple[float, float, float] = (0.5, 0.25, 0.25)  # mask, box, point
    eval_seed: int = 42
    n_clicks: int = 1

    def __post_init__(self) -> None:
        if abs(sum(self.kind_probabilities) - 1) > 1e-9 or min(self.kind_probabilities) < 0:
            raise PromptError("prompt kind probabilities must be a distribution")
        if self.n_clicks < 1:
            raise PromptError("n_clicks must be >= 1")


KINDS = ("mask", "box", "point")


def _binary(gt) -> np.ndarray:
    g = np.asarray(gt)
    if g.ndim != 2:
        raise PromptError("ground truth must be a 2-D mask")
    if not np.isin(g, (0, 1)).all():
        raise PromptError("ground truth must be binary")
    if not g.any():
        raise PromptError("no object in the ground truth")
    return g.astype(bool)


def prompt_rng(seed: int, video_id: str = "", click_index: int = 0) -> np.random.Generator:
    """Generator keyed by (seed, video id, click index); stable across processes."""
    vid = zlib.crc32(video_id.encode())
    return np.random.default_rng([seed, vid, click_index])


def sample_clicks(gt, n: int, seed: int = 42, video_id: str = "",
                  rng: np.random.Generator | None = None) -> PromptInput:
    """``n`` distinct foreground clicks (all pixels if the object is smaller)."""
    g = _binary(gt)
    if n < 1:
        raise PromptError("need at least one click")
    fg = np.argwhere(g)
    rng = rng or prompt_rng(seed, video_id)
    picks = rng.choice(len(fg), size=min(n, len(fg)), replace=False)
    return PromptInput("point", points=[(int(fg[i, 0]), int(fg[i, 1]), 1) for i in picks])


def sample_point(gt, seed: int = 42, video_id: str = "",
                 rng: np.random.Generator | None = None) -> PromptInput:
    return sample_clicks(gt, 1, seed, video_id, rng)


def tight_box(gt) -> PromptInput:
    g = _binary(gt)
    rows = np.flatnonzero(g.any(axis=1))
    cols = np.flatnonzero(g.any(axis=0))
    return PromptInput("box", box=(int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])))


def mask_prompt(gt) -> PromptInput:
    return PromptInput("mask", mask=_binary(gt).astype(np.uint8))


def training_prompt(gt, rng: np.random.Generator,
                    protocol: PromptProtocol = PromptProtocol()) -> PromptInput:
    kind = KINDS[rng.choice(3, p=protocol.kind_probabilities)]
    if kind == "mask":
        return mask_prompt(gt)
    if kind == "box":
        return tight_box(gt)
    return sample_point(gt, rng=rng)


def eval_prompt(gt, kind: str, video_id: str, seed: int = 42, clicks: int = 1) -> PromptInput:
    if kind == "point":
        return sample_clicks(gt, clicks, seed, video_id)
    if kind == "box":
        return tight_box(gt)
    if kind == "mask":
        return mask_prompt(gt)
    raise PromptError(f"unknown prompt kind {kind!r}")
