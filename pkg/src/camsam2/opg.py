"""Object prototype generation and the per-session prototype memory.

Seeds are picked in pixel-coordinate space (farthest point sampling or a
uniform stride), then every masked pixel is clustered once in feature space.
Everything here is plain numpy on detached features: stored prototypes are
constants to any later frame.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from camsam2.config import OpgConfig
from camsam2.errors import EmptyRegionError, InvariantError

COSINE_EPS = 1e-8


def fps(coords, k: int, start: int = 0) -> list[int]:
    """Greedy max-min farthest point sampling over 2-D coordinates.

    Ties go to the lowest index.  Returns ``min(k, len(coords))`` indices,
    beginning with ``start``.
    """
    pts = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        raise EmptyRegionError("farthest point sampling on an empty region")
    if not 0 <= start < n:
        raise IndexError(f"start index {start} outside {n} points")
    k = min(k, n)
    picks = [start]
    min_d = ((pts - pts[start]) ** 2).sum(axis=1)
    min_d[start] = -1.0
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d))
        picks.append(nxt)
        min_d = np.minimum(min_d, ((pts - pts[nxt]) ** 2).sum(axis=1))
        min_d[picks] = -1.0
    return picks


def average_sample(coords, k: int) -> list[int]:
    """Uniform-stride picks ``floor(i * n / k)`` over row-major coordinates."""
    n = len(coords)
    if n == 0:
        raise EmptyRegionError("average sampling on an empty region")
    k = min(k, n)
    return [(i * n) // k for i in range(k)]


def pairwise_distance(features: np.ndarray, centers: np.ndarray, distance: str) -> np.ndarray:
    """[m, k] distances; squared Euclidean or ``1 - cosine similarity``."""
    if distance == "euclidean":
        return ((features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    if distance == "cosine":
        fn = np.maximum(np.linalg.norm(features, axis=1), COSINE_EPS)
        cn = np.maximum(np.linalg.norm(centers, axis=1), COSINE_EPS)
        return 1.0 - (features @ centers.T) / (fn[:, None] * cn[None, :])
    raise ValueError(f"unknown distance {distance!r}")


def cluster_once(features, center_features, distance: str = "cosine"):
    """One k-means iteration from fixed initial centres.

    Returns ``(assignment [m], prototypes [k, c])``; an empty cluster keeps its
    initial centre.
    """
    x = np.asarray(features, dtype=np.float64)
    c = np.asarray(center_features, dtype=np.float64)
    if x.ndim != 2 or c.ndim != 2 or x.shape[1] != c.shape[1]:
        raise InvariantError("features and centres must be [m, c] and [k, c]")
    assign = np.argmin(pairwise_distance(x, c, distance), axis=1)
    protos = c.copy()
    for j in range(len(c)):
        members = assign == j
        if members.any():
            protos[j] = x[members].mean(axis=0)
    return assign, protos


def gmm_once(features, center_features) -> np.ndarray:
    """One EM step of an equal-prior, unit-variance diagonal Gaussian mixture."""
    x = np.asarray(features, dtype=np.float64)
    c = np.asarray(center_features, dtype=np.float64)
    logp = -0.5 * ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1)
    logp -= logp.max(axis=1, keepdims=True)
    resp = np.exp(logp)
    resp /= resp.sum(axis=1, keepdims=True)
    mass = resp.sum(axis=0)
    protos = c.copy()
    ok = mass > 0
    protos[ok] = (resp.T @ x)[ok] / mass[ok, None]
    return protos


@dataclass
class PrototypeSet:
    vectors: np.ndarray  # [k, c0]
    frame_index: int

    @property
    def k(self) -> int:
        return len(self.vectors)


@dataclass
class PrototypeMemory:
    channels: int
    window: int | None = None
    sets: list[PrototypeSet] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sets)

    def store(self, pset: PrototypeSet) -> None:
        if self.sets and pset.frame_index <= self.sets[-1].frame_index:
            raise InvariantError("prototype sets must arrive in increasing frame order")
        if pset.vectors.shape[1] != self.channels:
            raise InvariantError("prototype width does not match memory width")
        self.sets.append(pset)
        if self.window is not None:
            del self.sets[:-self.window]

    def query(self) -> np.ndarray:
        if not self.sets:
            return np.zeros((0, self.channels))
        return np.concatenate([s.vectors for s in self.sets], axis=0)


def generate_prototypes(f_eof, logits_c, cfg: OpgConfig, frame_index: int = 0,
                        timings: dict | None = None) -> PrototypeSet | None:
    """Prototypes of the predicted region ``logits_c > cfg.mask_threshold``.

    ``f_eof`` is [c0, h, w] and ``logits_c`` [1, h, w] (numpy or detached
    tensors).  Returns ``None`` when the region is empty.
    """
    feats = np.asarray(f_eof, dtype=np.float64)
    logits = np.asarray(logits_c, dtype=np.float64).reshape(feats.shape[1:])
    region = logits > cfg.mask_threshold
    if not region.any():
        return None
    t0 = time.perf_counter()
    coords = np.argwhere(region)
    if cfg.sampling == "fps":
        vals = logits[region]
        seeds = fps(coords, cfg.k, start=int(np.argmax(vals)))
    else:
        seeds = average_sample(coords, cfg.k)
    t1 = time.perf_counter()
    pixel_feats = feats[:, region].T
    centers = pixel_feats[seeds]
    if cfg.clustering == "kmeans":
        _, protos = cluster_once(pixel_feats, centers, cfg.distance)
    else:
        protos = gmm_once(pixel_feats, centers)
    t2 = time.perf_counter()
    if timings is not None:
        timings["sampling"] = timings.get("sampling", 0.0) + (t1 - t0)
        timings["clustering"] = timings.get("clustering", 0.0) + (t2 - t1)
    return PrototypeSet(protos, frame_index)
