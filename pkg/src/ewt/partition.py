"""Harmonic mode detection and symmetric Fourier-domain partitions."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import grid

# FFT round-off on flat spectra must not create maxima
_DIGITS = 12
# visiting order when following a maximum to the next scale: nearest first
_TRACK_OFFSETS = ((0, 0), (0, -1), (0, 1), (-1, 0), (1, 0), (-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass
class ModeSet:
    """Detected modes on the frequency grid.

    ``centers`` holds ``(x, y)`` pixel coordinates ordered as
    ``[origin, c1, -c1, c2, -c2, ...]`` so that center ``2k - 1`` carries label
    ``k`` and center ``2k`` label ``-k``.
    """

    shape: tuple[int, int]
    centers: list[tuple[int, int]]
    persistence: list[float]

    @property
    def labels(self) -> list[int]:
        out = [0]
        for k in range(1, (len(self.centers) - 1) // 2 + 1):
            out += [k, -k]
        return out


@dataclass
class Partition:
    """Integer label map over the frequency grid with the ``n <-> -n`` pairing."""

    labels: np.ndarray
    centers: dict[int, tuple[int, int]]
    method: str = "voronoi"
    s0: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def positive_labels(self) -> list[int]:
        return sorted(n for n in self.centers if n >= 0)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(n, -n) for n in self.positive_labels if n > 0]

    def region(self, n: int) -> np.ndarray:
        return self.labels == n


def log_spectrum(img) -> np.ndarray:
    """``log(1 + |f^|)`` on the center-origin grid, rescaled to [0, 1]."""
    img = grid.as_image(img)
    v = np.log1p(np.abs(grid.dft2(img)))
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def _strict_maxima(a: np.ndarray) -> np.ndarray:
    out = np.ones(a.shape, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy or dx:
                out &= a > np.roll(a, (dy, dx), axis=(0, 1))
    return out


def otsu_threshold(values) -> float:
    """Two-class Otsu threshold on integer-valued samples.

    Returns ``t`` such that the upper class is ``values > t``; when every
    value is equal, returns a threshold below all of them.
    """
    v = np.asarray(values, dtype=np.float64)
    levels = np.unique(v)
    if levels.size < 2:
        return float(levels[0] - 1) if levels.size else 0.0
    counts = np.array([(v == t).sum() for t in levels], dtype=np.float64)
    p = counts / counts.sum()
    w0 = np.cumsum(p)[:-1]
    mu = np.cumsum(p * levels)
    mu0 = mu[:-1] / w0
    mu1 = (mu[-1] - mu[:-1]) / (1.0 - w0)
    between = w0 * (1.0 - w0) * (mu0 - mu1) ** 2
    return float(levels[int(np.argmax(between))])


def scale_space_persistence(logspec: np.ndarray, s0: float, max_sigma: float | None = None):
    """Track the strict local maxima of ``logspec`` through a Gaussian scale space.

    Scale ``k`` smooths with ``sigma = k * s0`` (periodic boundary, the
    spectrum being periodic). A maximum survives to the next scale when a
    maximum exists within one pixel of its current position. Returns the
    ``(row, col)`` positions of the scale-0 maxima and the number of scales
    each one survives.
    """
    if s0 <= 0:
        raise ValueError(f"s0 must be > 0, got {s0}")
    a = np.asarray(logspec, dtype=np.float64)
    h, w = a.shape
    if max_sigma is None:
        max_sigma = min(h, w) / 8.0
    n_scales = max(1, int(math.ceil(max_sigma / s0)))
    maxima = _strict_maxima(np.round(a, _DIGITS))
    rows, cols = np.nonzero(maxima)
    pos = np.stack([rows, cols], axis=1)
    persistence = np.ones(len(pos), dtype=np.int64)
    alive = np.ones(len(pos), dtype=bool)
    spec_hat = np.fft.fft2(a)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    f2 = fx**2 + fy**2
    for k in range(1, n_scales + 1):
        if not alive.any():
            break
        sigma = k * s0
        smooth = np.fft.ifft2(spec_hat * np.exp(-2.0 * np.pi**2 * sigma**2 * f2)).real
        mk = _strict_maxima(np.round(smooth, _DIGITS))
        moved = np.zeros(len(pos), dtype=bool)
        new_pos = pos.copy()
        for dr, dc in _TRACK_OFFSETS:
            cand = alive & ~moved
            if not cand.any():
                break
            r = (pos[:, 0] + dr) % h
            c = (pos[:, 1] + dc) % w
            hit = cand & mk[r, c]
            new_pos[hit, 0] = r[hit]
            new_pos[hit, 1] = c[hit]
            moved |= hit
        alive &= moved
        persistence[alive] += 1
        pos = new_pos
    return np.stack([rows, cols], axis=1), persistence


def _order_pairs(shape, pairs):
    cy, cx = grid.center(shape)

    def key(rc):
        r, c = rc
        return ((r - cy) ** 2 + (c - cx) ** 2, math.atan2(r - cy, c - cx))

    return sorted(pairs, key=lambda pq: key(pq[0]))


def detect_modes(logspec, s0: float = 0.8, max_sigma: float | None = None) -> ModeSet:
    """Detect symmetric harmonic modes of a log spectrum.

    Maxima whose persistence exceeds the Otsu threshold of all persistences
    are kept, the set is intersected with its mirror image, and the origin
    is always added.
    """
    logspec = np.asarray(logspec, dtype=np.float64)
    shape = logspec.shape
    cy, cx = grid.center(shape)
    positions, persistence = scale_space_persistence(logspec, s0, max_sigma)
    origin = (cy, cx)
    if len(positions) == 0:
        return ModeSet(shape, [(cx, cy)], [0.0])
    is_origin = (positions[:, 0] == cy) & (positions[:, 1] == cx)
    # the origin is always kept, so it does not vote on the threshold
    t = otsu_threshold(persistence[~is_origin]) if (~is_origin).any() else 0.0
    keep = {tuple(p): int(q) for p, q in zip(positions.tolist(), persistence) if q > t}
    mr, mc = grid.mirror_index(shape)
    pairs = []
    seen = set()
    for rc in sorted(keep):
        if rc == origin or rc in seen:
            continue
        m = (int(mr[rc]), int(mc[rc]))
        if m == rc or m not in keep:
            # unpaired, or a Nyquist fixed point that cannot carry a +/- pair
            continue
        seen.update((rc, m))
        plus, minus = _signed_order(shape, rc, m)
        pairs.append((plus, minus))
    pairs = _order_pairs(shape, pairs)
    centers = [(cx, cy)]
    pers = [float(keep.get(origin, 0))]
    for plus, minus in pairs:
        centers += [(plus[1], plus[0]), (minus[1], minus[0])]
        pers += [float(keep[plus]), float(keep[minus])]
    return ModeSet(shape, centers, pers)


def _signed_order(shape, a, b):
    """Return ``(positive, negative)`` members of a mirror pair of ``(row, col)`` points."""
    cy, cx = grid.center(shape)
    ka = (a[1] - cx, a[0] - cy)
    kb = (b[1] - cx, b[0] - cy)
    return (a, b) if ka > kb else (b, a)


def symmetrize_labels(labels: np.ndarray) -> np.ndarray:
    """Force ``labels(-xi) == -labels(xi)`` pixelwise.

    Where a pixel disagrees with the negated label of its mirror, the label of
    smaller magnitude wins; a ``n`` versus ``-n`` conflict gives ``+n`` to the
    pixel with the smaller flat index. Self-mirrored pixels keep their label.
    """
    labels = np.asarray(labels)
    mirrored = -grid.mirror(labels)
    bad = labels != mirrored
    if not bad.any():
        return labels.copy()
    out = labels.copy()
    a = labels[bad]
    b = mirrored[bad]
    choice = np.where(np.abs(a) < np.abs(b), a, b)
    tie = np.abs(a) == np.abs(b)
    if tie.any():
        h, w = labels.shape
        mr, mc = grid.mirror_index(labels.shape)
        flat = np.arange(h * w).reshape(h, w)
        first = (flat < mr * w + mc)[bad]
        fixed = (flat == mr * w + mc)[bad]
        mag = np.abs(a)
        choice = np.where(tie & first, mag, choice)
        choice = np.where(tie & ~first, -mag, choice)
        choice = np.where(tie & fixed, a, choice)
    out[bad] = choice
    return out


def _index_to_labels(modes: ModeSet, index_map: np.ndarray) -> np.ndarray:
    table = np.asarray(modes.labels, dtype=np.int64)
    return table[index_map]


def _make_partition(modes: ModeSet, labels: np.ndarray, method: str, s0=None) -> Partition:
    centers = dict(zip(modes.labels, [tuple(map(int, c)) for c in modes.centers]))
    return Partition(labels=labels, centers=centers, method=method, s0=s0)


def voronoi_partition(modes: ModeSet, shape: tuple[int, int] | None = None, s0=None) -> Partition:
    """Label every frequency pixel with its nearest mode center (Euclidean, pixels)."""
    shape = tuple(shape or modes.shape)
    if not modes.centers:
        raise ValueError("need at least one center")
    x, y = grid.pixel_coords(shape)
    best = np.full(shape, np.inf)
    index = np.zeros(shape, dtype=np.int64)
    for i, (cx, cy) in enumerate(modes.centers):
        d = (x - cx) ** 2 + (y - cy) ** 2
        closer = d < best  # strict: ties stay with the earlier center
        best[closer] = d[closer]
        index[closer] = i
    labels = symmetrize_labels(_index_to_labels(modes, index))
    return _make_partition(modes, labels, "voronoi", s0)


def flood(landscape: np.ndarray, markers: list[tuple[int, int]]) -> np.ndarray:
    """Marker-controlled watershed by immersion with a priority queue.

    ``markers`` are ``(x, y)`` pixels; the result holds the marker index per
    pixel. Equal values pop in insertion order and a pixel reached by several
    basins takes the smallest index among its labeled 4-neighbors.
    """
    a = np.asarray(landscape, dtype=np.float64)
    h, w = a.shape
    out = np.full((h, w), -1, dtype=np.int64)
    queued = np.zeros((h, w), dtype=bool)
    heap = []
    counter = 0
    for i, (mx, my) in enumerate(markers):
        out[my, mx] = i
        queued[my, mx] = True
        heap.append((a[my, mx], counter, my, mx))
        counter += 1
    heapq.heapify(heap)
    vals = a.tolist()
    lab = out.tolist()
    q = queued.tolist()
    while heap:
        _, _, r, c = heapq.heappop(heap)
        nbrs = []
        if r > 0:
            nbrs.append((r - 1, c))
        if r < h - 1:
            nbrs.append((r + 1, c))
        if c > 0:
            nbrs.append((r, c - 1))
        if c < w - 1:
            nbrs.append((r, c + 1))
        if lab[r][c] < 0:
            lab[r][c] = min(lab[i][j] for i, j in nbrs if lab[i][j] >= 0)
        for i, j in nbrs:
            if not q[i][j]:
                q[i][j] = True
                heapq.heappush(heap, (vals[i][j], counter, i, j))
                counter += 1
    return np.asarray(lab, dtype=np.int64)


def watershed_partition(logspec, modes: ModeSet, sigma: float = 2.0, s0=None) -> Partition:
    """Watershed partition of the (smoothed, negated) log spectrum seeded at the modes."""
    logspec = np.asarray(logspec, dtype=np.float64)
    if not modes.centers:
        raise ValueError("need at least one center")
    landscape = -grid.gaussian_smooth(logspec, sigma)
    index = flood(landscape, modes.centers)
    labels = symmetrize_labels(_index_to_labels(modes, index))
    return _make_partition(modes, labels, "watershed", s0)


def partition_image(img, method: str = "voronoi", s0: float = 0.8, sigma: float = 2.0) -> Partition:
    """Log spectrum, mode detection and partitioning in one call."""
    spec = log_spectrum(img)
    modes = detect_modes(spec, s0)
    if method == "voronoi":
        part = voronoi_partition(modes, spec.shape, s0=s0)
    elif method == "watershed":
        part = watershed_partition(spec, modes, sigma=sigma, s0=s0)
    else:
        raise ValueError(f"unknown partition method {method!r}")
    part.meta["persistence"] = modes.persistence
    return part
