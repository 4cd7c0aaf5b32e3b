"""Closed-form partitions and mappings used to verify the filter banks.

The annulus partition has a center disk and concentric rings, each ring cut
into four quarter sectors so that a sector and its mirror (the opposite
sector) never touch. Sector maps are polar rectangles: the radius is
scaled affinely onto ``[-1/2, 1/2]`` across the ring and the angle onto
``[-1/2, 1/2]`` across the sector. For the disk kernel the resulting square
is stretched radially onto the disk; the center disk is mapped by an
isotropic scaling (composed with the inverse stretch for the square kernel).
All maps are bi-Lipschitz homeomorphisms onto a neighbourhood of the
enlarged kernel support.
"""

from __future__ import annotations

import math

import numpy as np

from . import grid
from .demons import target_radius
from .partition import Partition, symmetrize_labels

DEFAULT_RADII = (0.06, 0.12, 0.22, 0.38, 0.75)


def square_to_disk(u, v):
    """Radial stretch sending the square ``max(|u|,|v|) <= r`` onto the disk ``|.| <= r``."""
    n2 = np.hypot(u, v)
    ninf = np.maximum(np.abs(u), np.abs(v))
    s = np.divide(ninf, n2, out=np.ones_like(n2), where=n2 > 0)
    return u * s, v * s


def disk_to_square(u, v):
    """Inverse of :func:`square_to_disk`."""
    n2 = np.hypot(u, v)
    ninf = np.maximum(np.abs(u), np.abs(v))
    s = np.divide(n2, ninf, out=np.ones_like(n2), where=ninf > 0)
    return u * s, v * s


def lifted_frequency_grid(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Frequency grid with part of the Nyquist row moved to ``xi_y = +1/2``.

    On an even number of rows the whole first row sits at ``xi_y = -1/2``,
    so a map defined on the upper half-plane never reaches it and its grid
    mirror (the same row) cannot either. Reading the pixels with
    ``xi_x >= 0`` (and the corner) through their periodic alias at
    ``+1/2`` puts half of the row on each side, matching the grid mirror.
    """
    fx, fy = grid.frequency_grid(shape)
    if shape[0] % 2 == 0:
        row = fy[0].copy()
        flip = (fx[0] >= 0) | (fx[0] == -0.5)
        row[flip] = 0.5
        fy = fy.copy()
        fy[0] = row
    return fx, fy


def _check_radii(radii):
    radii = tuple(float(r) for r in radii)
    if len(radii) < 2 or any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] <= 0:
        raise ValueError("radii must be positive and increasing")
    for a, b in zip(radii, radii[1:]):
        # the enlarged support (|u| <= 0.5 + tau < 1) must stay on r > 0
        if (a + b) / 2 <= (b - a):
            raise ValueError(f"ring [{a}, {b}] too wide for its radius")
    return radii


def sector_label(ring: int, quarter: int) -> int:
    """Signed label of quarter ``0..3`` of ring ``1..``; opposite quarters are mirrors."""
    n = 2 * ring - 1 + (quarter % 2)
    return n if quarter < 2 else -n


def annulus_partition(shape: tuple[int, int], radii=DEFAULT_RADII) -> Partition:
    """Label raster of the annulus partition; pixels beyond the last radius join the outer ring."""
    radii = _check_radii(radii)
    fx, fy = lifted_frequency_grid(shape)
    r = np.hypot(fx, fy)
    theta = np.mod(np.arctan2(fy, fx), 2 * np.pi)
    quarter = np.minimum((theta // (np.pi / 2)).astype(int), 3)
    ring = np.clip(np.searchsorted(np.asarray(radii), r, side="right"), 0, len(radii) - 1)
    labels = np.zeros(shape, dtype=np.int64)
    for k in range(1, len(radii)):
        for q in range(4):
            labels[(ring == k) & (quarter == q)] = sector_label(k, q)
    cy, cx = grid.center(shape)
    centers = {0: (cx, cy)}
    for k in range(1, len(radii)):
        rc = 0.5 * (radii[k - 1] + radii[k])
        for q in range(4):
            a = np.pi / 4 + q * np.pi / 2
            centers[sector_label(k, q)] = (
                int(round(cx + rc * shape[1] * math.cos(a))),
                int(round(cy + rc * shape[0] * math.sin(a))),
            )
    return Partition(symmetrize_labels(labels), centers, method="annulus")


def annulus_kernel_coords(shape: tuple[int, int], radii=DEFAULT_RADII, kind: str = "disk") -> dict:
    """Analytic ``gamma_n(xi)`` in kernel units for every label ``n >= 0``."""
    radii = _check_radii(radii)
    fx, fy = lifted_frequency_grid(shape)
    r = np.hypot(fx, fy)
    theta = np.arctan2(fy, fx)
    out = {}
    u, v = fx / (2 * radii[0]), fy / (2 * radii[0])
    out[0] = (u, v) if kind == "disk" else disk_to_square(u, v)
    for k in range(1, len(radii)):
        lo, hi = radii[k - 1], radii[k]
        u = (r - 0.5 * (lo + hi)) / (hi - lo)
        for q in (0, 1):
            a = np.pi / 4 + q * np.pi / 2
            rel = np.angle(np.exp(1j * (theta - a)))
            v = rel / (np.pi / 2)
            out[sector_label(k, q)] = square_to_disk(u, v) if kind == "disk" else (u, v)
    return out


def annulus_mappings(shape: tuple[int, int], radii=DEFAULT_RADII, kind: str = "disk", radius: float | None = None) -> dict:
    """Analytic mappings as total maps in pixels of the rendered kernel support."""
    rt = target_radius(shape) if radius is None else radius
    cy, cx = grid.center(shape)
    return {
        n: np.stack([cx + 2 * rt * zx, cy + 2 * rt * zy])
        for n, (zx, zy) in annulus_kernel_coords(shape, radii, kind).items()
    }


def scaling_mapping(shape: tuple[int, int], scale: float, shift=(0.0, 0.0)) -> np.ndarray:
    """Total map ``p -> center + scale (p - center - shift)`` in pixels."""
    x, y = grid.centered_coords(shape)
    cy, cx = grid.center(shape)
    return np.stack([cx + scale * (x - shift[0]), cy + scale * (y - shift[1])])
