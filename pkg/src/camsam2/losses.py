"""BCE + soft Dice, applied to both logit streams over a clip."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from camsam2.errors import InvariantError

DICE_EPS = 1e-6


def _check(logits: torch.Tensor, gt: torch.Tensor) -> None:
    if logits.shape != gt.shape:
        raise InvariantError(f"logits {tuple(logits.shape)} vs gt {tuple(gt.shape)}")
    if not torch.all((gt == 0) | (gt == 1)):
        raise InvariantError("ground truth must be binary")


def bce(logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    _check(logits, gt)
    return F.binary_cross_entropy_with_logits(logits, gt.to(logits.dtype))


def dice(logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    _check(logits, gt)
    p = torch.sigmoid(logits)
    g = gt.to(logits.dtype)
    return 1 - (2 * (p * g).sum() + DICE_EPS) / (p.sum() + g.sum() + DICE_EPS)


@dataclass
class ClipSupervision:
    """Per-frame stride-4 targets and the two logit streams.

    Entries of ``gt_masks`` may be ``None`` (unlabeled frame); likewise a
    logit entry may be ``None`` when the frame produced no prediction (a
    mask-prompted frame).
    """

    gt_masks: list[torch.Tensor | None]
    base_logits: list[torch.Tensor | None]
    decam_logits: list[torch.Tensor | None]


def clip_loss(sup: ClipSupervision) -> torch.Tensor:
    if not (len(sup.gt_masks) == len(sup.base_logits) == len(sup.decam_logits)):
        raise InvariantError("supervision lists must align")
    total = None
    for gt, r, rc in zip(sup.gt_masks, sup.base_logits, sup.decam_logits):
        if gt is None:
            continue
        for logits in (r, rc):
            if logits is None:
                continue
            term = bce(logits, gt) + dice(logits, gt)
            total = term if total is None else total + term
    if total is None:
        ref = next((x for x in sup.base_logits if x is not None), None)
        return torch.zeros((), dtype=ref.dtype if ref is not None else torch.float32)
    return total


def stream_losses(sup: ClipSupervision) -> tuple[float, float]:
    """BCE + Dice of the base and decamouflaged streams separately (logging only)."""
    out = [0.0, 0.0]
    with torch.no_grad():
        for gt, r, rc in zip(sup.gt_masks, sup.base_logits, sup.decam_logits):
            if gt is None:
                continue
            for i, logits in enumerate((r, rc)):
                if logits is not None:
                    out[i] += (bce(logits, gt) + dice(logits, gt)).item()
    return out[0], out[1]
