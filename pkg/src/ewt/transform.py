"""Empirical wavelet filter banks, forward transform and dual-frame inverse."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .demons import MappingEstimate, support_mask, target_radius
from .kernels import KernelSpec

HOLE_LEVEL = 1e-6
MAX_HOLE_FRACTION = 1e-3
COVERAGE_FLOOR = 1e-12
IMAG_TOLERANCE = 1e-10


class ReconstructionWarning(UserWarning):
    """The bank leaves part of the Fourier domain uncovered."""


def _total_map(mapping) -> np.ndarray:
    if isinstance(mapping, MappingEstimate):
        return mapping.total_map()
    m = np.asarray(mapping, dtype=np.float64)
    if m.ndim != 3 or m.shape[0] != 2:
        raise ValueError(f"expected a (2, H, W) total map, got shape {m.shape}")
    return m


def mirror_mapping(est: MappingEstimate) -> MappingEstimate:
    """Mapping of the mirrored region: ``gamma_{-n}(p) = -gamma_n(-p)`` in centered coordinates.

    The field is sampled at the continuous mirror point ``-p`` with clamped
    bilinear interpolation, so on even grids the Nyquist row/column is only
    approximately mirrored.
    """
    shape = est.shape
    cy, cx = grid.center(shape)
    x, y = grid.pixel_coords(shape)
    total = est.total_map()
    mx, my = 2.0 * cx - x, 2.0 * cy - y
    gx = grid.bilinear_sample(total[0] - cx, mx, my, boundary="edge")
    gy = grid.bilinear_sample(total[1] - cy, mx, my, boundary="edge")
    fld = np.stack([cx - gx - x, cy - gy - y])
    return MappingEstimate(
        fld,
        init_affine=est.init_affine,
        final_energy=est.final_energy,
        iterations=est.iterations,
        rmse=est.rmse,
    )


def jacobian_det(mapping) -> np.ndarray:
    """``|det J|`` of a total map by central differences (one-sided at borders), floored at 1e-8."""
    total = _total_map(mapping)
    dxy, dxx = np.gradient(total[0])
    dyy, dyx = np.gradient(total[1])
    return np.maximum(np.abs(dxx * dyy - dxy * dyx), 1e-8)


def kernel_coords(total: np.ndarray, radius: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Convert target pixel positions to kernel units (``radius`` pixels <-> 1/2)."""
    shape = total.shape[1:]
    r = target_radius(shape) if radius is None else radius
    cy, cx = grid.center(shape)
    return (total[0] - cx) / (2.0 * r), (total[1] - cy) / (2.0 * r)


def build_filter(n: int, mapping, kernel: KernelSpec, normalized: bool = False, radius: float | None = None) -> np.ndarray:
    """Symmetric filter for label ``n >= 0`` from the mapping of region ``n``.

    ``psi_n = psi o gamma_n`` (times ``sqrt|det J|`` when normalized) and the
    mirrored term ``psi_{-n}(xi) = psi_n(-xi)`` is read through the grid
    mirror, which makes every filter exactly mirror-symmetric. For ``n = 0``
    the two terms are averaged; for ``n != 0`` they are added, with the
    ``1/sqrt(2)`` factor in the normalized system.
    """
    total = _total_map(mapping)
    zx, zy = kernel_coords(total, radius)
    psi = kernel(zx, zy)
    if normalized:
        psi = psi * np.sqrt(jacobian_det(total))
    both = psi + grid.mirror(psi)
    if n == 0:
        return 0.5 * both
    return both / math.sqrt(2.0) if normalized else both


@dataclass
class FilterBank:
    labels: list[int]
    filters: np.ndarray  # (N, H, W), one real filter per label n >= 0
    kernel: KernelSpec
    normalized: bool
    coverage: np.ndarray = field(init=False)
    radius: float | None = None

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.float64)
        self.coverage = (self.filters**2).sum(axis=0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.filters.shape[1:]

    @property
    def holes(self) -> np.ndarray:
        return self.coverage < HOLE_LEVEL

    @property
    def hole_fraction(self) -> float:
        return float(self.holes.mean())

    @property
    def reconstruction_safe(self) -> bool:
        return self.hole_fraction <= MAX_HOLE_FRACTION

    def __getitem__(self, n: int) -> np.ndarray:
        return self.filters[self.labels.index(n)]


def build_bank(mappings: dict, kernel: KernelSpec, normalized: bool = False, radius: float | None = None) -> FilterBank:
    """Filter bank over ``n >= 0`` from ``{n: mapping}`` (MappingEstimate or total map)."""
    labels = sorted(n for n in mappings if n >= 0)
    if not labels:
        raise ValueError("no mappings")
    filters = np.stack([build_filter(n, mappings[n], kernel, normalized, radius) for n in labels])
    bank = FilterBank(labels, filters, kernel, normalized, radius=radius)
    if not bank.reconstruction_safe:
        warnings.warn(
            f"filter bank leaves {100 * bank.hole_fraction:.3f}% of the Fourier domain uncovered",
            ReconstructionWarning,
            stacklevel=2,
        )
    return bank


@dataclass
class CoefficientSet:
    labels: list[int]
    coeffs: np.ndarray  # (N, H, W)

    def __getitem__(self, n: int) -> np.ndarray:
        return self.coeffs[self.labels.index(n)]


def forward(img, bank: FilterBank) -> CoefficientSet:
    """``E(., n) = F^-1(f^ . conj(chi_n))`` for every filter of the bank."""
    img = grid.as_image(img, min_size=1)
    if img.shape != bank.shape:
        raise ValueError(f"image {img.shape} does not match bank {bank.shape}")
    spec = grid.dft2(img)
    out = grid.dft2(spec[None] * np.conj(bank.filters), "inverse")
    residue = float(np.abs(out.imag).max()) if out.size else 0.0
    scale = max(1.0, float(np.abs(img).max()))
    if residue >= IMAG_TOLERANCE * scale:
        raise ValueError(f"imaginary residue {residue:.3g} in coefficients: filters are not mirror-symmetric")
    return CoefficientSet(list(bank.labels), out.real.copy())


def inverse(coeffs: CoefficientSet, bank: FilterBank, delta: float = COVERAGE_FLOOR) -> np.ndarray:
    """Dual-frame reconstruction ``sum_n F^-1(E^_n chi_n / max(coverage, delta))``."""
    if list(coeffs.labels) != list(bank.labels):
        raise ValueError("coefficient labels do not match the bank")
    if not bank.reconstruction_safe:
        warnings.warn(
            f"reconstructing with {100 * bank.hole_fraction:.3f}% uncovered frequencies",
            ReconstructionWarning,
            stacklevel=2,
        )
    acc = np.zeros(bank.shape, dtype=np.complex128)
    for c, chi in zip(coeffs.coeffs, bank.filters):
        acc += grid.dft2(c) * chi
    acc /= np.maximum(bank.coverage, delta)
    return grid.dft2(acc, "inverse").real


def energy_ratio(n: int, bank: FilterBank, region=None) -> float:
    """Filter energy over its support regions relative to the kernel energy over ``Lambda``.

    ``region`` is the pixel mask of ``Omega_n`` (union ``Omega_-n``); when
    omitted, both integrals run over the whole grid and the enlarged kernel
    support. Riemann sums with unit pixel area on both sides.
    """
    chi = bank[n]
    shape = bank.shape
    r = target_radius(shape) if bank.radius is None else bank.radius
    x, y = grid.pixel_coords(shape)
    zx, zy = kernel_coords(np.stack([x, y]), r)
    psi = bank.kernel(zx, zy)
    if region is None:
        return float((chi**2).sum() / (psi**2).sum())
    lam = support_mask(bank.kernel.kind, shape, r)
    return float((chi[np.asarray(region, dtype=bool)] ** 2).sum() / (psi[lam] ** 2).sum())
