"""Latency and size accounting for the adapter."""
from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import torch

from camsam2.config import ModelConfig
from camsam2.harness.infer import EvalProtocol, first_prompt
from camsam2.model import CamSAM2, frames_tensor
from camsam2.synthcam import VideoClip


def adapter_param_count(cfg: ModelConfig, n_tokens: int = 1) -> int:
    """Closed-form parameter count of token + MLP + IOF + EOF for ``cfg``."""
    d, c0, cm = cfg.token_dim, cfg.c0, cfg.mask_channels
    token = n_tokens * d
    mlp = 2 * (d * d + d) + (d * c0 + c0)
    iof = sum(9 * c * c0 + c0 + c0 * c0 + c0 for c in cfg.channels)
    concat = (c0 + 1) * c0 + c0
    attn = 4 * (c0 * c0 + c0)
    maskproj = cm * c0 + c0
    return token + mlp + iof + concat + attn + maskproj


def runtime_param_count(model: CamSAM2) -> int:
    return sum(p.numel() for p in model.adapter_parameters())


def enhancement_macs(cfg: ModelConfig, size: tuple[int, int], n_prototypes: int) -> dict[str, int]:
    """Multiply-accumulate estimate of the enhancement path for one frame."""
    d, c0, cm = cfg.token_dim, cfg.c0, cfg.mask_channels
    h0, w0 = size[0] // 4, size[1] // 4
    hw = h0 * w0
    iof = 0
    for j, c in enumerate(cfg.channels):
        hj = (h0 >> j) * (w0 >> j)
        iof += hj * (9 * c * c0 + c0 * c0)
    p = n_prototypes
    attn = 2 * hw * c0 * c0 + 2 * p * c0 * c0 + 2 * hw * p * c0 if p else 0
    macs = {
        "token_mlp": 2 * d * d + d * c0,
        "iof": iof,
        "eof_concat": hw * (c0 + 1) * c0,
        "eof_attention": attn,
        "eof_maskproj": hw * cm * c0,
        "decam_logits": hw * c0,
    }
    macs["total"] = sum(macs.values())
    return macs


@dataclass
class OverheadReport:
    frames: int
    ms_per_frame_off: float
    ms_per_frame_on: float
    stage_ms_per_frame: dict = field(default_factory=dict)
    adapter_params_analytic: int = 0
    adapter_params_runtime: int = 0
    macs: dict = field(default_factory=dict)

    @property
    def delta_ms(self) -> float:
        return self.ms_per_frame_on - self.ms_per_frame_off

    def lines(self) -> list[str]:
        out = [
            f"frames timed: {self.frames}",
            f"toggle off: {self.ms_per_frame_off:.3f} ms/frame",
            f"toggle on: {self.ms_per_frame_on:.3f} ms/frame (+{self.delta_ms:.3f} ms, "
            f"{100 * self.delta_ms / max(self.ms_per_frame_off, 1e-12):.1f}%)",
            f"adapter parameters: {self.adapter_params_analytic} analytic, {self.adapter_params_runtime} runtime",
        ]
        out += [f"  stage {k}: {v:.3f} ms/frame" for k, v in self.stage_ms_per_frame.items()]
        out += [f"  macs {k}: {v}" for k, v in self.macs.items()]
        return out


def _timed_pass(model: CamSAM2, frames: torch.Tensor, prompt, toggle: bool, n_frames: int):
    stages: dict[str, float] = defaultdict(float)
    done = 0
    elapsed = 0.0
    while done < n_frames:
        session = model.new_session()
        t0 = time.perf_counter()
        model.run_clip(frames, prompt, toggle, session)
        elapsed += time.perf_counter() - t0
        done += frames.shape[0]
        for k, v in session.timings.items():
            stages[k] += v
    return elapsed, done, stages


@torch.no_grad()
def measure_overhead(model: CamSAM2, clip: VideoClip, n_frames: int = 100,
                     protocol: EvalProtocol = EvalProtocol()) -> OverheadReport:
    """Wall-clock per frame with the adapter on and off, looping the clip until
    at least ``n_frames`` frames were processed in each mode."""
    model.eval()
    frames = frames_tensor(clip.frames)
    prompt = first_prompt(clip, protocol)
    model.run_clip(frames[:2], prompt, True)  # warm-up
    off, n_off, _ = _timed_pass(model, frames, prompt, False, n_frames)
    on, n_on, stages = _timed_pass(model, frames, prompt, True, n_frames)
    split = {
        "fps": stages["sampling"],
        "clustering": stages["clustering"],
        "opg_total": stages["opg"],
        "eof": stages["eof"],
        "iof": stages["iof"],
    }
    n_proto = model.opg_cfg.k * (min(frames.shape[0], model.opg_cfg.window or frames.shape[0]) - 1)
    return OverheadReport(
        frames=n_on,
        ms_per_frame_off=1e3 * off / n_off,
        ms_per_frame_on=1e3 * on / n_on,
        stage_ms_per_frame={k: 1e3 * v / n_on for k, v in split.items()},
        adapter_params_analytic=adapter_param_count(model.cfg),
        adapter_params_runtime=runtime_param_count(model),
        macs=enhancement_macs(model.cfg, tuple(frames.shape[-2:]), int(np.clip(n_proto, 0, None))),
    )
