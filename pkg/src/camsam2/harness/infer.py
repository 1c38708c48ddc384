"""Memory-loop inference and dataset evaluation."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from camsam2.base import PromptInput, upsample_logits
from camsam2.errors import PromptError
from camsam2.metrics import MetricReport, evaluate_sequence, mean_report, write_csv
from camsam2.model import CamSAM2, FrameResult, frames_tensor
from camsam2.prompts import eval_prompt
from camsam2.synthcam import VideoClip


@dataclass
class VideoPrediction:
    masks: list[np.ndarray]  # full-resolution {0,1}
    probabilities: list[np.ndarray]  # full-resolution maps in [0,1]
    logits: list[torch.Tensor | None]  # stride-4 final logits (None on a mask-prompted frame)
    results: list[FrameResult]


@torch.no_grad()
def infer_video(clip: VideoClip, prompt: PromptInput, model: CamSAM2, toggle: bool = True,
                prompt_frame: int = 0) -> VideoPrediction:
    if prompt_frame != 0:
        raise PromptError("the prompt must be given on frame 0")
    frames = frames_tensor(clip.frames)
    size = tuple(frames.shape[-2:])
    results = model.run_clip(frames, prompt, toggle)
    probs, masks = [], []
    for r in results:
        if r.final_logits is None:
            p = r.full_mask.numpy().astype(np.float64)
        else:
            p = torch.sigmoid(upsample_logits(r.final_logits, size))[0].numpy().astype(np.float64)
        probs.append(p)
        masks.append(r.full_mask.numpy().astype(np.uint8))
    return VideoPrediction(masks, probs, [r.final_logits for r in results], results)


@dataclass(frozen=True)
class EvalProtocol:
    prompt: str = "point"
    clicks: int = 1
    seed: int = 42
    toggle: bool = True
    labeled_only: bool = True


def first_prompt(clip: VideoClip, protocol: EvalProtocol) -> PromptInput:
    gt = clip.masks[0]
    if gt is None or not np.any(gt):
        raise PromptError(f"clip {clip.clip_id}: frame 0 has no labeled object to prompt")
    return eval_prompt(gt, protocol.prompt, clip.clip_id, protocol.seed, protocol.clicks)


def evaluate(clips: list[VideoClip], model: CamSAM2, protocol: EvalProtocol = EvalProtocol(),
             csv_path: str | Path | None = None, extra_columns: dict | None = None,
             ) -> tuple[list[tuple[str, MetricReport]], MetricReport]:
    """Per-video reports plus the dataset mean; optionally written as CSV."""
    rows = []
    for clip in clips:
        pred = infer_video(clip, first_prompt(clip, protocol), model, protocol.toggle)
        rows.append((clip.clip_id, evaluate_sequence(pred.probabilities, clip.masks, protocol.labeled_only)))
    overall = mean_report([r for _, r in rows])
    if csv_path is not None:
        write_csv(csv_path, [*rows, ("mean", overall)], extra_columns)
    return rows, overall


def evaluate_ground_truth(clips: list[VideoClip]) -> list[MetricReport]:
    """Score the ground truth against itself (sanity path of the report)."""
    return [evaluate_sequence([None if m is None else m.astype(np.float64) for m in c.masks], c.masks)
            for c in clips]


def save_overlays(clip: VideoClip, pred: VideoPrediction, out_dir: str | Path) -> list[Path]:
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, (frame, mask) in enumerate(zip(clip.frames, pred.masks)):
        img = (frame.transpose(1, 2, 0) * 255).astype(np.float64)
        tint = np.array([255.0, 40.0, 40.0])
        m = mask.astype(bool)
        img[m] = 0.55 * img[m] + 0.45 * tint
        path = out / f"{t:05d}.png"
        Image.fromarray(img.clip(0, 255).astype(np.uint8)).save(path)
        paths.append(path)
    return paths


def plot_curve(per_frame: dict[str, list[float]], path: str | Path) -> None:
    """Per-frame Dice curves, one line per run."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3))
    for label, values in per_frame.items():
        ax.plot(values, label=label)
    ax.set_xlabel("frame")
    ax.set_ylabel("Dice")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
