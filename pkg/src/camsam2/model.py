"""The surrogate segmenter with the camouflage adapter mounted on it, and the
per-frame tracking loop shared by training and inference."""
from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from camsam2.base import PromptInput, SurrogateSegmenter, binarize_full
from camsam2.config import ModelConfig, OpgConfig
from camsam2.decam import DecamHead, extract_token
from camsam2.eof import ExplicitFusion
from camsam2.errors import PromptError
from camsam2.iof import ImplicitFusion
from camsam2.opg import PrototypeMemory, PrototypeSet, generate_prototypes


@dataclass
class FrameResult:
    """Outputs of one frame.  ``final_logits`` is ``None`` on a mask-prompted
    frame, whose output is the prompt mask itself (``full_mask``)."""

    index: int
    base_logits: torch.Tensor | None
    decam_logits: torch.Tensor | None
    final_logits: torch.Tensor | None
    full_mask: torch.Tensor
    prototypes: PrototypeSet | None = None
    attention_bypassed: bool | None = None
    prototype_sets_before: int = 0


@dataclass
class Session:
    """Per-video state: the memory bank and the prototype memory."""

    bank: object
    prototypes: PrototypeMemory
    timings: dict = field(default_factory=lambda: defaultdict(float))


def _sync_time() -> float:
    return time.perf_counter()


class CamSAM2(nn.Module):
    ADAPTER_SEGMENTS = ("adapter.token", "adapter.mlp", "adapter.iof",
                        "adapter.eof.concat", "adapter.eof.attn", "adapter.eof.maskproj")

    def __init__(self, cfg: ModelConfig | None = None, opg: OpgConfig | None = None,
                 base: SurrogateSegmenter | None = None) -> None:
        super().__init__()
        self.cfg = cfg or (base.cfg if base is not None else ModelConfig())
        self.opg_cfg = opg or OpgConfig()
        self.base = base if base is not None else SurrogateSegmenter(self.cfg)
        c0 = self.cfg.c0
        self.decam = DecamHead(self.cfg.token_dim, c0)
        self.iof = ImplicitFusion(self.cfg.channels)
        self.eof = ExplicitFusion(c0, self.cfg.mask_channels)

    # -- parameter groups ---------------------------------------------------------
    def adapter_segments(self) -> dict[str, dict[str, torch.Tensor]]:
        return {
            "adapter.token": {"token": self.decam.token},
            "adapter.mlp": self.decam.mlp.state_dict(),
            "adapter.iof": self.iof.state_dict(),
            "adapter.eof.concat": self.eof.concat.state_dict(),
            "adapter.eof.attn": self.eof.attn.state_dict(),
            "adapter.eof.maskproj": self.eof.maskproj.state_dict(),
        }

    def adapter_parameters(self) -> list[nn.Parameter]:
        return [self.decam.token, *self.decam.mlp.parameters(), *self.iof.parameters(),
                *self.eof.parameters()]

    def new_session(self) -> Session:
        return Session(self.base.new_bank(), PrototypeMemory(self.cfg.c0, self.opg_cfg.window))

    # -- one frame -----------------------------------------------------------------
    def step(self, frame: torch.Tensor, t: int, prompt: PromptInput | None, session: Session,
             toggle: bool = True, detach_memory: bool = True) -> FrameResult:
        base = self.base
        h, w = frame.shape[-2:]
        if prompt is not None and t != 0:
            raise PromptError("prompts are only accepted on frame 0")
        mask_prompted = prompt is not None and prompt.kind == "mask"
        if prompt is not None:
            prompt.validate((h, w))

        tm = session.timings
        t0 = _sync_time()
        pyr = base.encode_frame(frame)
        fmem = base.memory_condition(pyr.f2, session.bank)
        t1 = _sync_time()
        tm["encode+memory"] += t1 - t0

        if not toggle:
            if mask_prompted:
                full = torch.as_tensor(prompt.mask, dtype=frame.dtype)
                res = FrameResult(t, None, None, None, full)
            else:
                dec = base.decode_masks(fmem, base.encode_prompt(prompt, (h, w)))
                r = dec.mask_logits
                res = FrameResult(t, r, None, r, binarize_full(r, (h, w)))
            t2 = _sync_time()
            tm["decode"] += t2 - t1
            base.update_memory(session.bank, pyr.f2, res.full_mask, t, detach=detach_memory)
            tm["memory_encode"] += _sync_time() - t2
            return res

        dec = base.decode_masks(fmem, base.encode_prompt(prompt, (h, w)), self.decam.token)
        r = dec.mask_logits
        t2 = _sync_time()
        tm["decode"] += t2 - t1
        weight_vec = self.decam.project_token(extract_token(dec.tokens_out))
        f_iof = self.iof(pyr.f0, pyr.f1, fmem)
        t3 = _sync_time()
        tm["iof"] += t3 - t2
        n_before = len(session.prototypes)
        rows = torch.as_tensor(session.prototypes.query(), dtype=frame.dtype)
        state = self.eof(f_iof, r, rows, dec.mask_feature, weight_vec)
        rc = state.logits_c
        t4 = _sync_time()
        tm["eof"] += t4 - t3

        if mask_prompted:
            full = torch.as_tensor(prompt.mask, dtype=frame.dtype)
            # region for prototypes is the prompt mask itself at logit resolution
            small = torch.nn.functional.interpolate(full[None, None], size=r.shape[-2:], mode="nearest")[0]
            region_logits = small * 2 - 1
            final = None
            r_out = rc_out = None
        else:
            final = (r + rc) / 2
            full = binarize_full(final, (h, w))
            region_logits = rc
            r_out, rc_out = r, rc
        pset = generate_prototypes(state.f_eof.detach().numpy(), region_logits.detach().numpy(),
                                   self.opg_cfg, t, timings=tm)
        if pset is not None:
            session.prototypes.store(pset)
        t5 = _sync_time()
        tm["opg"] += t5 - t4
        base.update_memory(session.bank, pyr.f2, full, t, detach=detach_memory)
        tm["memory_encode"] += _sync_time() - t5
        return FrameResult(t, r_out, rc_out, final, full, pset, state.attention_bypassed, n_before)

    def run_clip(self, frames: torch.Tensor, prompt: PromptInput, toggle: bool = True,
                 session: Session | None = None) -> list[FrameResult]:
        session = session or self.new_session()
        return [self.step(frames[t], t, prompt if t == 0 else None, session, toggle)
                for t in range(frames.shape[0])]


def frames_tensor(frames: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.asarray(frames), dtype=dtype)
