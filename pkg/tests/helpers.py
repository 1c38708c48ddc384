"""Shared fixtures-by-function for model-level tests."""
from __future__ import annotations

import copy

import numpy as np
import torch

from camsam2.config import ModelConfig, OpgConfig
from camsam2.losses import ClipSupervision, clip_loss
from camsam2.model import CamSAM2, frames_tensor
from camsam2.prompts import mask_prompt
from camsam2.synthcam import SynthConfig, generate_clip
from camsam2.harness.train import logit_targets


def toy_model(seed: int = 0, opg: OpgConfig | None = None, dtype=torch.float64) -> CamSAM2:
    torch.manual_seed(seed)
    return CamSAM2(ModelConfig.toy(), opg or OpgConfig(k=3)).to(dtype)


def toy_clip(seed: int = 0, size: int = 16, n_frames: int = 3, strength: float = 0.8):
    return generate_clip(SynthConfig(H=size, W=size, n_frames=n_frames, strength=strength,
                                     area_range=(0.15, 0.3), seed=seed), f"toy{seed}")


def gradcheck_setup(model: CamSAM2, clip, dtype=torch.float64):
    """A session holding one remembered frame and its prototypes, plus the
    second frame and its target.  Memory and prototypes are constants."""
    frames = frames_tensor(clip.frames, dtype)
    session = model.new_session()
    with torch.no_grad():
        model.step(frames[0], 0, mask_prompt(clip.masks[0]), session)
    if not len(session.prototypes):
        raise AssertionError("setup produced no prototypes; pick another seed")
    gt = logit_targets([clip.masks[1]], (frames.shape[-2] // 4, frames.shape[-1] // 4), dtype)
    return frames[1], session, gt


def gradcheck_loss(model: CamSAM2, frame, session, gt) -> torch.Tensor:
    s = copy.deepcopy(session)
    res = model.step(frame, 1, None, s)
    return clip_loss(ClipSupervision(gt, [res.base_logits], [res.decam_logits]))


def finite_difference(model, frame, session, gt, param: torch.nn.Parameter, h: float = 1e-6):
    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    gflat = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = gradcheck_loss(model, frame, session, gt).item()
            flat[i] = orig - h
            down = gradcheck_loss(model, frame, session, gt).item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
    return grad


def gradcheck_targets(model: CamSAM2) -> dict[str, torch.nn.Parameter]:
    named = {"token": model.decam.token}
    for j, st in enumerate(model.iof.stages):
        named[f"iof.{j}.conv1.weight"] = st.conv1.weight
        named[f"iof.{j}.conv2.weight"] = st.conv2.weight
    for name in ("q_proj", "k_proj", "v_proj", "out_proj"):
        named[f"eof.attn.{name}.weight"] = getattr(model.eof.attn, name).weight
    named["eof.concat.weight"] = model.eof.concat.weight
    named["eof.concat.bias"] = model.eof.concat.bias
    named["eof.maskproj.weight"] = model.eof.maskproj.weight
    return named


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    den = max(a.norm().item(), b.norm().item(), 1e-30)
    return (a - b).norm().item() / den


def generic_adapter(model: CamSAM2, seed: int = 0, std: float = 0.5) -> None:
    """Move the adapter to a generic point: default init leaves the prototype
    attention nearly uniform, where its q/k gradients sit below the
    finite-difference noise floor."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.adapter_parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64) * std)


def gradient_report(seed: int = 0) -> dict[str, float]:
    model = toy_model(seed)
    generic_adapter(model, seed)
    clip = toy_clip(seed)
    frame, session, gt = gradcheck_setup(model, clip)
    targets = gradcheck_targets(model)
    model.zero_grad()
    gradcheck_loss(model, frame, session, gt).backward()
    out = {}
    for name, p in targets.items():
        out[name] = relative_error(p.grad.detach().clone(), finite_difference(model, frame, session, gt, p))
    return out


def mask_fraction(x: np.ndarray) -> float:
    return float(np.mean(x))
