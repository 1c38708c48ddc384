"""Camouflaged-segmentation metrics: S-measure, weighted F, MAE, adaptive F,
adaptive E-measure, Dice and IoU.

``pred`` is a float map in [0, 1], ``gt`` a binary map of the same shape.
Parameterisation follows the usual COD/SOD toolkits (beta^2 = 0.3 for F,
beta^2 = 1 for weighted F, alpha = 0.5 for S, adaptive threshold
``min(2 * mean(pred), 1)``), with two deliberate departures: E-measure is a
true mean over pixels (divides by N, not N - 1) so a perfect map scores
exactly 1, and zero-valued pixels never count as foreground after adaptive
thresholding, so an all-zero map has F = 0.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

EPS = np.spacing(1.0)
BETA2 = 0.3
WF_BETA2 = 1.0
ALPHA = 0.5


def _prep(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt)
    if p.shape != g.shape:
        raise ValueError(f"pred {p.shape} vs gt {g.shape}")
    return p, g.astype(bool)


def mae(pred, gt) -> float:
    p, g = _prep(pred, gt)
    return float(np.abs(p - g).mean())


def dice_iou(pred_bin, gt) -> tuple[float, float]:
    p, g = _prep(pred_bin, gt)
    p = p > 0.5
    inter = np.count_nonzero(p & g)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0, 1.0
    iou = inter / union
    return 2 * iou / (1 + iou), iou


def adaptive_threshold(p: np.ndarray) -> float:
    return min(2 * float(p.mean()), 1.0)


def _adaptive_binary(p: np.ndarray) -> np.ndarray:
    return (p >= adaptive_threshold(p)) & (p > 0)


def f_measure(pred, gt) -> float:
    p, g = _prep(pred, gt)
    b = _adaptive_binary(p)
    tp = np.count_nonzero(b & g)
    if not g.any() and not b.any():
        return 1.0
    if tp == 0:
        return 0.0
    precision = tp / np.count_nonzero(b)
    recall = tp / np.count_nonzero(g)
    return (1 + BETA2) * precision * recall / (BETA2 * precision + recall)


# -- weighted F-measure -----------------------------------------------------------

def gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    """MATLAB ``fspecial('gaussian', size, sigma)``."""
    r = (size - 1) / 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    h = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    h[h < np.finfo(float).eps * h.max()] = 0
    return h / h.sum()


def nearest_foreground(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean distance to, and flat index of, the nearest foreground pixel.

    Ties go to the lowest row-major index (scipy's EDT leaves ties
    unspecified, which would make Et ambiguous).
    """
    h, w = g.shape
    fg = np.flatnonzero(g)
    rr, cc = np.divmod(np.arange(h * w), w)
    fr, fc = np.divmod(fg, w)
    dist = np.empty(h * w)
    idx = np.empty(h * w, dtype=np.int64)
    chunk = max(1, 4_000_000 // max(len(fg), 1))
    for s in range(0, h * w, chunk):
        d2 = (rr[s:s + chunk, None] - fr[None]) ** 2 + (cc[s:s + chunk, None] - fc[None]) ** 2
        j = np.argmin(d2, axis=1)
        idx[s:s + chunk] = fg[j]
        dist[s:s + chunk] = np.sqrt(d2[np.arange(len(j)), j])
    return dist.reshape(h, w), idx.reshape(h, w)


def _correlate_zero_pad(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = k.shape[0] // 2
    padded = np.pad(img, r)
    h, w = img.shape
    out = np.zeros_like(img)
    for dy in range(k.shape[0]):
        for dx in range(k.shape[1]):
            if k[dy, dx]:
                out += k[dy, dx] * padded[dy:dy + h, dx:dx + w]
    return out


def weighted_f(pred, gt) -> float:
    p, g = _prep(pred, gt)
    if not g.any():
        return 1.0 if not p.any() else 0.0
    dist, idx = nearest_foreground(g)
    e = np.abs(p - g)
    et = e.copy()
    bg = ~g
    et[bg] = e.reshape(-1)[idx[bg]]
    ea = _correlate_zero_pad(et, gaussian_kernel())
    min_e_ea = np.where(g & (ea < e), ea, e)
    b = np.where(bg, 2 - np.exp(np.log(0.5) / 5 * dist), 1.0)
    ew = min_e_ea * b
    tpw = g.sum() - ew[g].sum()
    fpw = ew[bg].sum()
    recall = 1 - ew[g].mean()
    precision = tpw / (EPS + tpw + fpw)
    return float((1 + WF_BETA2) * recall * precision / (EPS + recall + WF_BETA2 * precision))


# -- S-measure --------------------------------------------------------------------

def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2 * mu / (mu * mu + 1 + sigma + EPS)


def _s_object(p: np.ndarray, g: np.ndarray) -> float:
    u = g.mean()
    fg = _object_score(p[g])
    bg = _object_score(1 - p[~g])
    return u * fg + (1 - u) * bg


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    gf = g.astype(np.float64)
    x, y = p.mean(), gf.mean()
    denom = n - 1 if n > 1 else 1
    sx = ((p - x) ** 2).sum() / denom
    sy = ((gf - y) ** 2).sum() / denom
    sxy = ((p - x) * (gf - y)).sum() / denom
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def centroid(g: np.ndarray) -> tuple[int, int]:
    """1-based (col, row) split point of the region-level term."""
    h, w = g.shape
    if not g.any():
        return int(round(w / 2)) + 1, int(round(h / 2)) + 1
    rows, cols = np.nonzero(g)
    return int(np.round(cols.mean())) + 1, int(np.round(rows.mean())) + 1


def _s_region(p: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    x, y = centroid(g)
    x, y = min(x, w), min(y, h)
    area = h * w
    weights = (x * y / area, (w - x) * y / area, x * (h - y) / area)
    weights = weights + (1 - sum(weights),)
    blocks = ((slice(0, y), slice(0, x)), (slice(0, y), slice(x, w)),
              (slice(y, h), slice(0, x)), (slice(y, h), slice(x, w)))
    score = 0.0
    for wt, (rs, cs) in zip(weights, blocks):
        if p[rs, cs].size:
            score += wt * _ssim(p[rs, cs], g[rs, cs])
    return score


def s_measure(pred, gt) -> float:
    p, g = _prep(pred, gt)
    u = g.mean()
    if u == 0:
        return float(1 - p.mean())
    if u == 1:
        return float(p.mean())
    return float(max(0.0, ALPHA * _s_object(p, g) + (1 - ALPHA) * _s_region(p, g)))


# -- E-measure --------------------------------------------------------------------

def e_measure(pred, gt) -> float:
    p, g = _prep(pred, gt)
    fm = _adaptive_binary(p).astype(np.float64)
    gf = g.astype(np.float64)
    if not g.any():
        enhanced = 1 - fm
    elif g.all():
        enhanced = fm
    else:
        a = fm - fm.mean()
        b = gf - gf.mean()
        align = 2 * a * b / (a * a + b * b + EPS)
        enhanced = (align + 1) ** 2 / 4
    return float(enhanced.mean())


# -- reports ----------------------------------------------------------------------

CSV_COLUMNS = ("Sm", "Fw", "MAE", "Fb", "Em", "mDice", "mIoU")


@dataclass
class MetricReport:
    s_measure: float
    weighted_f: float
    mae: float
    f_beta: float
    e_measure: float
    m_dice: float
    m_iou: float
    frames_evaluated: int

    def percent_row(self) -> dict[str, str]:
        vals = (self.s_measure, self.weighted_f, self.mae, self.f_beta,
                self.e_measure, self.m_dice, self.m_iou)
        return {k: f"{100 * v:.1f}" for k, v in zip(CSV_COLUMNS, vals)}


def frame_metrics(pred, gt) -> dict[str, float]:
    d, i = dice_iou(pred, gt)
    return {
        "s_measure": s_measure(pred, gt), "weighted_f": weighted_f(pred, gt),
        "mae": mae(pred, gt), "f_beta": f_measure(pred, gt),
        "e_measure": e_measure(pred, gt), "m_dice": d, "m_iou": i,
    }


def evaluate_sequence(preds, gts, labeled_only: bool = True) -> MetricReport:
    """Average per-frame metrics; frames whose gt is ``None`` are skipped
    when ``labeled_only`` (otherwise they are an error)."""
    rows = []
    for pred, gt in zip(preds, gts, strict=True):
        if gt is None:
            if labeled_only:
                continue
            raise ValueError("unlabeled frame in a labeled_only=False evaluation")
        rows.append(frame_metrics(pred, gt))
    if not rows:
        raise ValueError("no labeled frames to evaluate")
    mean = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    return MetricReport(**mean, frames_evaluated=len(rows))


def mean_report(reports: list[MetricReport]) -> MetricReport:
    fields = [k for k in asdict(reports[0]) if k != "frames_evaluated"]
    mean = {k: float(np.mean([getattr(r, k) for r in reports])) for k in fields}
    return MetricReport(**mean, frames_evaluated=sum(r.frames_evaluated for r in reports))


def write_csv(path: str | Path, rows: list[tuple[str, MetricReport]], extra: dict[str, str] | None = None) -> None:
    """One row per named report; percent values, one decimal, plus raw MAE."""
    extra = extra or {}
    header = ["name", *extra, *CSV_COLUMNS, "MAE_raw", "frames"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for name, rep in rows:
            pct = rep.percent_row()
            writer.writerow([name, *extra.values(), *(pct[c] for c in CSV_COLUMNS),
                             f"{rep.mae:.6f}", rep.frames_evaluated])
