"""Texture segmentation: texture residual, EWT local energy and L1 k-means."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import grid, transform
from .demons import DemonsParams, estimate_mappings
from .kernels import KernelSpec
from .partition import partition_image

log = logging.getLogger(__name__)

RESTARTS = 5
MAX_ITER = 300


def cartoon_texture(f, sigma_c: float = 3.0):
    """Split ``f`` into a Gaussian-smoothed cartoon and the residual texture."""
    if not sigma_c > 0:
        raise ValueError("sigma_c must be > 0")
    f = grid.as_image(f, min_size=1)
    cartoon = grid.gaussian_smooth(f, sigma_c)
    return cartoon, f - cartoon


def local_energy(coeffs, w: int = 19) -> np.ndarray:
    """Mean of ``|E(., n)|`` over a ``w x w`` window per band, edge-replicated.

    Accepts a :class:`~ewt.transform.CoefficientSet` or an ``(N, H, W)``
    array; returns features of the same shape.
    """
    w = int(w)
    if w < 1 or w % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {w}")
    c = coeffs.coeffs if isinstance(coeffs, transform.CoefficientSet) else np.asarray(coeffs, dtype=np.float64)
    return ndimage.uniform_filter(np.abs(c), size=(1, w, w), mode="nearest")


def _l1(points, centers):
    return np.abs(points[:, None, :] - centers[None, :, :]).sum(axis=2)


def _seed_centers(points, k, rng):
    """D^2 sampling with L1 distances."""
    n = len(points)
    idx = [int(rng.integers(n))]
    d = np.abs(points - points[idx[0]]).sum(axis=1)
    for _ in range(1, k):
        w = d**2
        total = w.sum()
        if total <= 0:
            # fewer distinct points than clusters so far; pick any unused one
            j = int(rng.integers(n))
        else:
            j = int(rng.choice(n, p=w / total))
        idx.append(j)
        d = np.minimum(d, np.abs(points - points[j]).sum(axis=1))
    return points[idx].copy()


def _lloyd(points, centers, max_iter=MAX_ITER):
    """Lloyd iterations under L1 with median updates; returns labels, centers, cost history."""
    k = len(centers)
    labels = None
    history = []
    for _ in range(max_iter):
        dist = _l1(points, centers)
        new = np.argmin(dist, axis=1)  # first minimum: ties to the lower index
        cost = float(dist[np.arange(len(points)), new].sum())
        if history and cost > history[-1] * (1 + 1e-12) + 1e-12:
            raise RuntimeError("k-means cost increased")
        history.append(cost)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = points[labels == j]
            if len(members):
                centers[j] = np.median(members, axis=0)
            else:
                # empty cluster: re-seed at the point farthest from its own centroid
                own = dist[np.arange(len(points)), labels]
                far = int(np.argmax(own))
                centers[j] = points[far]
                labels[far] = j
    return labels, centers, history


@dataclass
class Segmentation:
    labels: np.ndarray  # values in 1..k
    k: int
    cost: float = 0.0
    history: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)

    @property
    def sizes(self) -> list[int]:
        return [int((self.labels == j).sum()) for j in range(1, self.k + 1)]


def kmeans_l1(features, k: int, seed: int = 0, restarts: int = RESTARTS, max_iter: int = MAX_ITER) -> Segmentation:
    """Cityblock k-means on per-pixel features.

    ``features`` is ``(D, H, W)`` (one image per feature) or ``(N, D)``
    points. Restarts use independent streams spawned from ``seed``; the
    lowest total L1 cost wins, the earlier restart on ties.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 3:
        shape = feats.shape[1:]
        points = feats.reshape(feats.shape[0], -1).T.copy()
    elif feats.ndim == 2:
        shape = (feats.shape[0],)
        points = feats.copy()
    else:
        raise ValueError(f"features must be (D, H, W) or (N, D), got {feats.shape}")
    if not np.all(np.isfinite(points)):
        raise ValueError("features contain non-finite values")
    if k == 1:
        return Segmentation(np.ones(shape, dtype=np.int64), 1, float(np.abs(points - np.median(points, axis=0)).sum()))
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(np.unique(points, axis=0)) < k:
        raise ValueError(f"k={k} exceeds the number of distinct feature vectors")
    best = None
    for ss in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(ss)
        labels, centers, hist = _lloyd(points, _seed_centers(points, k, rng), max_iter)
        if best is None or hist[-1] < best[2][-1]:
            best = (labels, centers, hist)
    labels, centers, hist = best
    seg = Segmentation((labels + 1).reshape(shape), k, hist[-1], hist)
    seg.artifacts["centers"] = centers
    return seg


@dataclass
class SegmentConfig:
    k: int = 2
    method: str = "voronoi"
    kernel: str = "disk"
    tau: float = 0.2
    variant: str = "additive"
    normalized: bool = False
    s0: float = 0.8
    sigma_c: float = 3.0
    window: int = 19
    seed: int = 0
    demons: DemonsParams | None = None
    workers: int = 1


def segment(f, cfg: SegmentConfig | None = None) -> Segmentation:
    """Texture residual, EWT of the texture, local energy, then L1 k-means.

    The Fourier partition is detected on the texture part. Intermediate
    results are kept in ``artifacts``.
    """
    cfg = cfg or SegmentConfig()
    f = grid.as_image(f)
    if cfg.k == 1:
        return Segmentation(np.ones(f.shape, dtype=np.int64), 1)
    cartoon, texture = cartoon_texture(f, cfg.sigma_c)
    part = partition_image(texture, cfg.method, cfg.s0)
    params = cfg.demons or DemonsParams(variant=cfg.variant)
    if params.variant != cfg.variant:
        params = DemonsParams(**{**params.__dict__, "variant": cfg.variant})
    maps = estimate_mappings(part, cfg.kernel, params, workers=cfg.workers)
    bank = transform.build_bank({n: est for n, (_, est) in maps.items()}, KernelSpec(cfg.kernel, cfg.tau), cfg.normalized)
    coeffs = transform.forward(texture, bank)
    feats = local_energy(coeffs, cfg.window)
    log.info("segmenting with %d features", len(bank.labels))
    seg = kmeans_l1(feats, cfg.k, cfg.seed)
    seg.artifacts.update(cartoon=cartoon, texture=texture, partition=part, bank=bank, coeffs=coeffs, features=feats)
    return seg
