"""Base pre-training and adapter training loops."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from camsam2.base import SurrogateSegmenter
from camsam2.config import ModelConfig, OpgConfig, RunConfig
from camsam2.losses import ClipSupervision, clip_loss, stream_losses
from camsam2.model import CamSAM2, FrameResult, frames_tensor
from camsam2.prompts import training_prompt
from camsam2.synthcam import VideoClip

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    streams: list[tuple[float, float]] = field(default_factory=list)  # (base, decam) per step


def logit_targets(masks: list, size: tuple[int, int], dtype=torch.float32) -> list[torch.Tensor | None]:
    """Full-resolution masks -> nearest-neighbour targets at logit resolution."""
    out = []
    for m in masks:
        if m is None:
            out.append(None)
            continue
        t = torch.as_tensor(np.asarray(m), dtype=dtype)[None, None]
        out.append(F.interpolate(t, size=size, mode="nearest")[0])
    return out


def sample_window(clip: VideoClip, length: int, rng: np.random.Generator) -> tuple[np.ndarray, list]:
    """Random ``length``-frame window whose first frame is labeled and nonempty."""
    n = len(clip)
    length = min(length, n)
    starts = [s for s in range(n - length + 1)
              if clip.masks[s] is not None and np.any(clip.masks[s])]
    if not starts:
        raise TrainingError(f"clip {clip.clip_id} has no usable first frame")
    s = int(rng.choice(starts))
    return clip.frames[s:s + length], clip.masks[s:s + length]


def _supervision(results: list[FrameResult], masks: list, dtype) -> ClipSupervision:
    size = next(r for r in results if r.full_mask is not None).full_mask.shape
    size = (size[0] // 4, size[1] // 4)
    return ClipSupervision(logit_targets(masks, size, dtype),
                           [r.base_logits for r in results],
                           [r.decam_logits for r in results])


def _steps(cfg: RunConfig, n_clips: int) -> int:
    if cfg.steps is not None:
        return cfg.steps
    return cfg.epochs * math.ceil(n_clips / cfg.batch_size)


def _dump_and_abort(step: int, loss: torch.Tensor, dump_dir: Path | None, state: dict) -> None:
    path = None
    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)
        path = dump_dir / f"nan_step{step:05d}.pt"
        torch.save(state, path)
    raise TrainingError(f"non-finite loss {loss.item()} at step {step}" + (f"; state dumped to {path}" if path else ""))


def pretrain_base(clips: list[VideoClip], cfg: RunConfig, model_cfg: ModelConfig | None = None,
                  steps: int | None = None, log_: TrainLog | None = None) -> SurrogateSegmenter:
    """Train the whole surrogate on easy clips (base logits only), then freeze it.

    Gradients flow through the memory bank inside a clip so the memory encoder
    and memory attention learn too.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    base = SurrogateSegmenter(model_cfg or ModelConfig())
    model = CamSAM2(base.cfg, base=base)
    opt = torch.optim.Adam(base.parameters(), lr=cfg.pretrain_lr, betas=cfg.betas)
    steps = steps if steps is not None else cfg.pretrain_steps
    log_ = log_ if log_ is not None else TrainLog()
    for step in range(1, steps + 1):
        batch = rng.choice(len(clips), size=min(cfg.batch_size, len(clips)), replace=False)
        total = 0.0
        opt.zero_grad()
        for i in batch:
            frames, masks = sample_window(clips[i], cfg.clip_length, rng)
            prompt = training_prompt(masks[0], rng)
            session = model.new_session()
            results = [model.step(frames_tensor(frames[t]), t, prompt if t == 0 else None,
                                  session, toggle=False, detach_memory=False)
                       for t in range(len(frames))]
            loss = clip_loss(_supervision(results, masks, torch.float32)) / len(batch)
            if not torch.isfinite(loss):
                _dump_and_abort(step, loss, None, {})
            loss.backward()
            total += loss.item()
        opt.step()
        log_.losses.append(total)
        if step % cfg.log_every == 0 or step == 1:
            log.info("pretrain step %d loss %.4f", step, total)
    base.freeze()
    return base


def train_adapter(clips: list[VideoClip], base: SurrogateSegmenter, cfg: RunConfig,
                  opg: OpgConfig | None = None, steps: int | None = None,
                  log_: TrainLog | None = None, dump_dir: Path | None = None,
                  model: CamSAM2 | None = None) -> tuple[CamSAM2, torch.optim.Optimizer]:
    """Train only the adapter on clips prompted at their first frame."""
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    base.freeze()
    model = model or CamSAM2(base.cfg, opg, base=base)
    params = model.adapter_parameters()
    opt = torch.optim.Adam(params, lr=cfg.lr, betas=cfg.betas)
    steps = steps if steps is not None else _steps(cfg, len(clips))
    log_ = log_ if log_ is not None else TrainLog()
    for step in range(1, steps + 1):
        batch = rng.choice(len(clips), size=min(cfg.batch_size, len(clips)), replace=False)
        total = 0.0
        parts = [0.0, 0.0]
        opt.zero_grad()
        for i in batch:
            frames, masks = sample_window(clips[i], cfg.clip_length, rng)
            prompt = training_prompt(masks[0], rng)
            results = model.run_clip(frames_tensor(frames), prompt, toggle=True)
            sup = _supervision(results, masks, torch.float32)
            loss = clip_loss(sup) / len(batch)
            parts = [p_ + q / len(batch) for p_, q in zip(parts, stream_losses(sup))]
            if not torch.isfinite(loss):
                _dump_and_abort(step, loss, dump_dir, {
                    "step": step, "clip": clips[i].clip_id, "prompt_kind": prompt.kind,
                    "adapter": model.adapter_segments()})
            if loss.requires_grad:
                loss.backward()
            total += loss.item()
        opt.step()
        log_.losses.append(total)
        log_.streams.append((parts[0], parts[1]))
        if step % cfg.log_every == 0 or step == 1:
            log.info("adapter step %d loss %.4f (base %.4f, decam %.4f)", step, total, *parts)
    return model, opt
