"""Procedural camouflaged-video clips and their on-disk layout.

Background: multi-octave value noise.  Object: a smoothed star-convex blob
moving on a straight (border-reflected) path whose texture is a blend of an
unrelated texture and a patch of the background texture, both carried along
with the object.  ``strength`` 0 gives a clearly visible object, 1 a texture
drawn from the same field as the background.

Disk layout::

    root/<split>/manifest.tsv                      clip_id, n_frames, label_stride
    root/<split>/<clip_id>/frames/00000.png        8-bit RGB
    root/<split>/<clip_id>/masks/00000.png         0/255, labeled frames only
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import map_coordinates

from camsam2.errors import ConfigError, DataError


@dataclass(frozen=True)
class SynthConfig:
    H: int = 64
    W: int = 64
    n_frames: int = 8
    texture_scale: float = 8.0
    strength: float = 0.8
    area_range: tuple[float, float] = (0.05, 0.15)
    speed_range: tuple[float, float] = (1.0, 3.0)
    label_stride: int = 1
    distractors: int = 0  # unlabeled look-alike objects drawn beneath the target
    seed: int = 0

    def __post_init__(self) -> None:
        if self.distractors < 0:
            raise ConfigError("distractors must be >= 0")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        lo, hi = self.area_range
        if not 0 < lo <= hi < 0.5:
            raise ConfigError("area fractions must satisfy 0 < lo <= hi < 0.5")
        if not 0 <= self.strength <= 1:
            raise ConfigError("camouflage strength must lie in [0, 1]")
        if self.label_stride < 1:
            raise ConfigError("label_stride must be >= 1")
        if self.H % 16 or self.W % 16:
            raise ConfigError("frame size must be divisible by 16")


@dataclass
class VideoClip:
    frames: np.ndarray  # [T, 3, H, W] float32 in [0, 1]
    masks: list[np.ndarray | None]  # [H, W] uint8 {0, 1} or None when unlabeled
    clip_id: str
    label_stride: int = 1
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)


class ValueNoise:
    """Periodic multi-octave value noise; sample anywhere with ``__call__``."""

    def __init__(self, rng: np.random.Generator, scale: float, octaves: int = 3,
                 channels: int = 3, period: int = 64) -> None:
        self.scale = scale
        self.grids = [rng.random((channels, period, period)) for _ in range(octaves)]
        self.amps = [0.5 ** o for o in range(octaves)]

    def __call__(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        out = 0.0
        for o, (grid, amp) in enumerate(zip(self.grids, self.amps)):
            f = (2 ** o) / self.scale
            coords = np.stack([rows * f, cols * f])
            layer = np.stack([map_coordinates(g, coords, order=1, mode="grid-wrap") for g in grid])
            out = out + amp * layer
        return out / sum(self.amps)


def _palette(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    base = rng.uniform(0.25, 0.75, size=3)
    spread = rng.uniform(0.2, 0.45, size=3)
    return base, spread


def _shade(noise: np.ndarray, base: np.ndarray, spread: np.ndarray) -> np.ndarray:
    return base[:, None, None] + spread[:, None, None] * (noise - 0.5) * 2


def _blob_radius(rng: np.random.Generator, area: float, harmonics: int = 4):
    amps = rng.normal(0, 0.18, size=harmonics) / np.arange(1, harmonics + 1)
    phases = rng.uniform(0, 2 * np.pi, size=harmonics)
    r0 = np.sqrt(area / (np.pi * (1 + 0.5 * np.sum(amps ** 2))))

    def radius(theta: np.ndarray) -> np.ndarray:
        n = np.arange(1, harmonics + 1)
        return r0 * (1 + np.sum(amps[:, None] * np.cos(n[:, None] * theta.ravel() + phases[:, None]), axis=0)
                     ).reshape(theta.shape)

    r_max = r0 * (1 + np.abs(amps).sum())
    return radius, r_max


class _Mover:
    """One star-convex textured blob in reflected linear motion."""

    def __init__(self, rng: np.random.Generator, cfg: SynthConfig, bg_base: np.ndarray,
                 bg_noise: ValueNoise) -> None:
        H, W = cfg.H, cfg.W
        self.noise = ValueNoise(rng, cfg.texture_scale * rng.uniform(0.4, 0.8))
        base, self.spread = _palette(rng)
        # independent texture: push its mean colour away from the background
        self.base = np.clip(bg_base + np.sign(base - bg_base + 1e-9) * 0.35, 0.05, 0.95)
        self.area_fraction = rng.uniform(*cfg.area_range)
        self.radius, r_max = _blob_radius(rng, self.area_fraction * H * W)
        margin = np.array([min(r_max, H / 2 - 1), min(r_max, W / 2 - 1)])
        self.lo, self.hi = margin, np.array([H, W]) - margin
        self.centre = rng.uniform(self.lo, self.hi)
        heading = rng.uniform(0, 2 * np.pi)
        self.velocity = rng.uniform(*cfg.speed_range) * np.array([np.sin(heading), np.cos(heading)])
        self.patch_offset = rng.uniform(0, 64, size=2)
        self.bg_noise = bg_noise

    def render(self, rows, cols, strength, bg_base, bg_spread):
        dr, dc = rows - self.centre[0], cols - self.centre[1]
        inside = np.hypot(dr, dc) <= self.radius(np.arctan2(dr, dc))
        # texture coordinates follow the object
        indep = _shade(self.noise(dr, dc), self.base, self.spread)
        camo = _shade(self.bg_noise(dr + self.patch_offset[0], dc + self.patch_offset[1]), bg_base, bg_spread)
        return inside, (1 - strength) * indep + strength * camo

    def advance(self) -> None:
        self.centre = self.centre + self.velocity
        for axis in range(2):
            if self.centre[axis] < self.lo[axis] or self.centre[axis] > self.hi[axis]:
                self.velocity[axis] = -self.velocity[axis]
                self.centre[axis] = np.clip(self.centre[axis], self.lo[axis], self.hi[axis])


def generate_clip(cfg: SynthConfig, clip_id: str = "clip0000") -> VideoClip:
    rng = np.random.default_rng(cfg.seed)
    H, W = cfg.H, cfg.W
    bg_noise = ValueNoise(rng, cfg.texture_scale)
    bg_base, bg_spread = _palette(rng)
    target = _Mover(rng, cfg, bg_base, bg_noise)
    others = [_Mover(rng, cfg, bg_base, bg_noise) for _ in range(cfg.distractors)]

    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    background = _shade(bg_noise(rows, cols), bg_base, bg_spread)
    frames, masks = [], []
    for t in range(cfg.n_frames):
        frame = background
        for obj in [*others, target]:  # the target is painted last, so its mask is exact
            inside, tex = obj.render(rows, cols, cfg.strength, bg_base, bg_spread)
            frame = np.where(inside[None], tex, frame)
        frames.append(np.clip(frame, 0, 1).astype(np.float32))
        labeled = t % cfg.label_stride == 0
        masks.append(inside.astype(np.uint8) if labeled else None)
        for obj in [target, *others]:
            obj.advance()
    return VideoClip(np.stack(frames), masks, clip_id, cfg.label_stride,
                     meta={"area_fraction": target.area_fraction, "strength": cfg.strength})


def generate_dataset(n_clips: int, cfg: SynthConfig, prefix: str = "clip") -> list[VideoClip]:
    """``n_clips`` clips with per-clip seeds derived from ``cfg.seed``."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_clips)
    clips = []
    for i, ss in enumerate(seeds):
        sub = SynthConfig(**{**cfg.__dict__, "seed": int(ss.generate_state(1)[0])})
        clips.append(generate_clip(sub, f"{prefix}{i:04d}"))
    return clips


def boundary_contrast(frame: np.ndarray, mask: np.ndarray) -> float:
    """Mean absolute colour difference over 4-neighbour pairs straddling the mask edge."""
    m = np.asarray(mask).astype(bool)
    diffs = []
    for axis in (1, 2):
        a = np.take(frame, range(frame.shape[axis] - 1), axis=axis)
        b = np.take(frame, range(1, frame.shape[axis]), axis=axis)
        ma = np.take(m, range(m.shape[axis - 1] - 1), axis=axis - 1)
        mb = np.take(m, range(1, m.shape[axis - 1]), axis=axis - 1)
        edge = ma != mb
        if edge.any():
            diffs.append(np.abs(a - b)[:, edge].mean(axis=0))
    if not diffs:
        return 0.0
    return float(np.concatenate(diffs).mean())


# -- I/O --------------------------------------------------------------------------

MANIFEST = "manifest.tsv"


def write_dataset(clips: list[VideoClip], root: str | Path, split: str = "train") -> Path:
    out = Path(root) / split
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for clip in clips:
        fdir = out / clip.clip_id / "frames"
        mdir = out / clip.clip_id / "masks"
        fdir.mkdir(parents=True, exist_ok=True)
        mdir.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(clip.frames):
            img = np.round(np.clip(frame, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
            Image.fromarray(img, "RGB").save(fdir / f"{t:05d}.png")
            if clip.masks[t] is not None:
                Image.fromarray((clip.masks[t] > 0).astype(np.uint8) * 255, "L").save(mdir / f"{t:05d}.png")
        rows.append((clip.clip_id, len(clip.frames), clip.label_stride))
    with open(out / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["clip_id", "n_frames", "label_stride"])
        writer.writerows(rows)
    return out


def read_clip(clip_dir: str | Path, n_frames: int | None = None, label_stride: int = 1) -> VideoClip:
    clip_dir = Path(clip_dir)
    fdir, mdir = clip_dir / "frames", clip_dir / "masks"
    if not fdir.is_dir():
        raise DataError(f"missing frames directory {fdir}")
    names = sorted(p.name for p in fdir.glob("*.png"))
    if n_frames is not None and len(names) != n_frames:
        raise DataError(f"{clip_dir}: manifest lists {n_frames} frames, found {len(names)}")
    if not names:
        raise DataError(f"{clip_dir}: no frames")
    frames, masks = [], []
    for name in names:
        try:
            with Image.open(fdir / name) as im:
                frames.append(np.asarray(im.convert("RGB"), dtype=np.float32).transpose(2, 0, 1) / 255)
            mpath = mdir / name
            if mpath.exists():
                with Image.open(mpath) as im:
                    masks.append((np.asarray(im.convert("L")) > 127).astype(np.uint8))
            else:
                masks.append(None)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read {clip_dir / name}: {exc}") from exc
    return VideoClip(np.stack(frames), masks, clip_dir.name, label_stride)


def read_dataset(root: str | Path, split: str | None = "train") -> list[VideoClip]:
    """Read every clip listed in ``root/<split>/manifest.tsv`` (or ``root`` itself
    when ``split`` is ``None`` or the split dir is absent but a manifest is present)."""
    base = Path(root)
    if split is not None and (base / split / MANIFEST).exists():
        base = base / split
    manifest = base / MANIFEST
    if not manifest.exists():
        raise DataError(f"no {MANIFEST} under {base}")
    clips = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        try:
            for row in reader:
                clips.append(read_clip(base / row["clip_id"], int(row["n_frames"]), int(row["label_stride"])))
        except (KeyError, ValueError) as exc:
            raise DataError(f"corrupt manifest {manifest}: {exc}") from exc
    return clips
