"""Raster infrastructure shared by every stage.

Images are 2D float arrays indexed ``[row, col]``. Displacement fields are
arrays of shape ``(2, H, W)`` holding ``(dx, dy)`` per pixel, where ``x`` is
the column coordinate and ``y`` the row coordinate. Spectra use the
center-origin convention: pixel ``(H // 2, W // 2)`` is the zero frequency.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

MIN_SIZE = 8


def _check_finite(a: np.ndarray, what: str = "input") -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")


def as_image(img, min_size: int = MIN_SIZE) -> np.ndarray:
    """Validate and convert to a float64 2D image."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"image must be 2D, got shape {a.shape}")
    if min(a.shape) < min_size:
        raise ValueError(f"image must be at least {min_size}x{min_size}, got {a.shape}")
    _check_finite(a, "image")
    return a


def center(shape: tuple[int, int]) -> tuple[int, int]:
    """Center pixel ``(row, col)`` of a grid."""
    return shape[0] // 2, shape[1] // 2


def pixel_coords(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates ``(x, y)`` (column, row) as float grids."""
    y, x = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    return x, y


def centered_coords(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Pixel offsets from the grid center, ``(x, y)``."""
    x, y = pixel_coords(shape)
    cy, cx = center(shape)
    return x - cx, y - cy


def frequency_grid(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Normalized frequencies ``(xi_x, xi_y)`` in ``[-1/2, 1/2)`` per pixel."""
    x, y = centered_coords(shape)
    return x / shape[1], y / shape[0]


def mirror_index(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Row and column index of the mirrored frequency ``-xi`` for every pixel.

    Indices wrap modulo the grid size, so on even dimensions the Nyquist
    row/column maps onto itself.
    """
    h, w = shape
    cy, cx = center(shape)
    rows = (2 * cy - np.arange(h)) % h
    cols = (2 * cx - np.arange(w)) % w
    return rows[:, None] * np.ones((1, w), dtype=int), np.ones((h, 1), dtype=int) * cols[None, :]


def mirror(a: np.ndarray) -> np.ndarray:
    """Array values read at the mirrored frequency, ``a(-xi)``."""
    r, c = mirror_index(a.shape[-2:])
    return a[..., r, c]


def dft2(a, direction: str = "forward") -> np.ndarray:
    """Unitary 2D DFT with center-origin spectra.

    ``forward`` takes an image and returns its shifted spectrum; ``inverse``
    takes a shifted spectrum and returns the (complex) spatial array. Callers
    that expect a real image take the real part. Leading axes are batched.
    """
    a = np.asarray(a)
    _check_finite(a)
    if direction == "forward":
        return np.fft.fftshift(np.fft.fft2(a, norm="ortho"), axes=(-2, -1))
    if direction == "inverse":
        return np.fft.ifft2(np.fft.ifftshift(a, axes=(-2, -1)), norm="ortho")
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def bilinear_sample(img: np.ndarray, x, y, boundary: str = "zero"):
    """Bilinear interpolation of ``img`` at continuous points ``(x, y)``.

    With ``boundary="zero"`` the image is zero-padded, so points outside
    the grid read 0. ``boundary="edge"`` clamps coordinates to the grid,
    which is what displacement fields need.
    """
    img = np.asarray(img, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = img.shape
    if boundary == "edge":
        x = np.clip(x, 0.0, w - 1.0)
        y = np.clip(y, 0.0, h - 1.0)
    elif boundary != "zero":
        raise ValueError(f"unknown boundary {boundary!r}")
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros(np.broadcast(x, y).shape)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        yi = y0 + dy
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += np.where(inside, wx * wy * vals, 0.0)
    return out


def warp(img: np.ndarray, field: np.ndarray, boundary: str = "zero") -> np.ndarray:
    """Pull ``img`` back through a displacement field: ``out(p) = img(p + d(p))``."""
    img = np.asarray(img, dtype=np.float64)
    field = np.asarray(field, dtype=np.float64)
    if field.shape != (2,) + img.shape:
        raise ValueError(f"field shape {field.shape} does not match image {img.shape}")
    if not field.any():
        return img.copy()
    x, y = pixel_coords(img.shape)
    return bilinear_sample(img, x + field[0], y + field[1], boundary=boundary)


def warp_field(field: np.ndarray, by: np.ndarray) -> np.ndarray:
    """Sample each component of ``field`` at ``p + by(p)`` with clamped edges."""
    return np.stack([warp(c, by, boundary="edge") for c in field])


def compose(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """Displacement of the map ``p -> G(F(p))`` with ``F = id + inner``, ``G = id + outer``."""
    return inner + warp_field(outer, inner)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at radius ``ceil(3 sigma)``, unit sum."""
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(a: np.ndarray, sigma: float, mode: str = "nearest") -> np.ndarray:
    """Separable Gaussian smoothing of an image or of each field component.

    The default boundary replicates edge values; pass ``mode="wrap"`` for
    periodic data such as spectra.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    a = np.asarray(a, dtype=np.float64)
    if sigma == 0:
        return a.copy()
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(a, k, axis=-1, mode=mode)
    return ndimage.correlate1d(out, k, axis=-2, mode=mode)


def _check_factor(factor: int) -> int:
    f = int(factor)
    if f != factor or f < 1 or f & (f - 1):
        raise ValueError(f"factor must be a power of two, got {factor}")
    return f


def resample(a: np.ndarray, factor: int, direction: str, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Pyramid resampling by a power-of-two factor.

    ``down`` pre-smooths with ``sigma = factor / 2`` and keeps every
    ``factor``-th pixel starting at 0. ``up`` magnifies bilinearly so that
    coarse pixel ``i`` lands on fine pixel ``factor * i``; ``shape`` sets the
    target size (default ``factor`` times the input). Field components are
    resampled like images; rescaling their values is up to the caller.
    """
    f = _check_factor(factor)
    a = np.asarray(a, dtype=np.float64)
    if f == 1:
        return a.copy()
    if direction == "down":
        out = gaussian_smooth(a, f / 2.0)[..., ::f, ::f]
        if min(out.shape[-2:]) < MIN_SIZE:
            raise ValueError(f"downsampling {a.shape[-2:]} by {f} leaves fewer than {MIN_SIZE} pixels")
        return out
    if direction == "up":
        h, w = a.shape[-2:]
        if shape is None:
            shape = (h * f, w * f)
        x, y = pixel_coords(shape)
        x = x / f
        y = y / f
        if a.ndim == 3:
            return np.stack([bilinear_sample(c, x, y, boundary="edge") for c in a])
        return bilinear_sample(a, x, y, boundary="edge")
    raise ValueError(f"direction must be 'down' or 'up', got {direction!r}")


def gradient(img: np.ndarray) -> np.ndarray:
    """Central-difference gradient ``(d/dx, d/dy)`` (one-sided at borders)."""
    gy, gx = np.gradient(np.asarray(img, dtype=np.float64))
    return np.stack([gx, gy])
