"""Demons registration of Fourier supports onto the kernel support.

Convention: ``register(fixed, moving)`` returns a displacement ``d`` such
that ``moving(p + d(p)) ~ fixed(p)``. To obtain the mapping of a region
``Omega_n`` onto the kernel support ``Lambda`` on the frequency grid, the
region indicator is the fixed image and the rendered ``Lambda`` the moving
one; the total map ``p + d(p)`` then sends ``Omega_n`` into ``Lambda``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import grid

log = logging.getLogger(__name__)

VARIANTS = ("thirion", "additive", "diffeomorphic")
SIGMA_D_GRID = tuple(round(0.30 + 0.01 * i, 2) for i in range(21))
TARGET_RATIO = 0.35
_STOP_LAG = 5


@dataclass
class DemonsParams:
    sigma_x: float = 5.0
    sigma_i: float = 1.0
    sigma_f: float = 1.0
    sigma_d: float = 0.4
    eps: float = 1e-3
    max_iter: int = 500
    variant: str = "additive"
    n_level: int | None = None  # None: n_P - 1 for the grid

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("sigma_x", "sigma_i", "sigma_f", "sigma_d", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_iter < 5:
            raise ValueError("max_iter must be >= 5")
        if self.n_level is not None and self.n_level < 1:
            raise ValueError("n_level must be >= 1")


@dataclass
class MappingEstimate:
    """Estimated mapping as a total displacement field (affine start included)."""

    field: np.ndarray
    init_affine: tuple[np.ndarray, np.ndarray] = field(
        default_factory=lambda: (np.eye(2), np.zeros(2))
    )
    final_energy: float = 0.0
    iterations: int = 0
    rmse: float = 0.0
    energies: list[float] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.field.shape[1:]

    def total_map(self) -> np.ndarray:
        """Absolute target position ``p + d(p)`` per pixel, shape ``(2, H, W)``."""
        x, y = grid.pixel_coords(self.shape)
        return np.stack([x + self.field[0], y + self.field[1]])


def target_radius(shape: tuple[int, int]) -> float:
    """Radius (disk) or half-side (square) of the rendered kernel support, in pixels."""
    return TARGET_RATIO * min(shape) / 2.0


def indicator(mask: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Smoothed 0/1 raster of a region."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty region")
    return grid.gaussian_smooth(mask.astype(np.float64), sigma)


def support_mask(kind: str, shape: tuple[int, int], radius: float | None = None) -> np.ndarray:
    """Binary raster of the kernel support ``Lambda`` centered on the grid."""
    r = target_radius(shape) if radius is None else radius
    x, y = grid.centered_coords(shape)
    if kind == "disk":
        return x**2 + y**2 <= r**2
    if kind == "square":
        return np.maximum(np.abs(x), np.abs(y)) <= r
    raise ValueError(f"unknown kernel kind {kind!r}")


def support_indicator(kind: str, shape: tuple[int, int], radius: float | None = None) -> np.ndarray:
    return indicator(support_mask(kind, shape, radius))


def affine_field(shape: tuple[int, int], A: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Displacement of ``p -> A p + t`` on a grid (``p`` as ``(x, y)``)."""
    x, y = grid.pixel_coords(shape)
    return np.stack([
        A[0, 0] * x + A[0, 1] * y + t[0] - x,
        A[1, 0] * x + A[1, 1] * y + t[1] - y,
    ])


def init_affine(region: np.ndarray, kind: str, shape: tuple[int, int] | None = None):
    """Similarity sending the region's centroid to the grid center and its area to the area of Lambda.

    Returns ``(A, t)`` with ``A = s I``.
    """
    region = np.asarray(region, dtype=bool)
    shape = shape or region.shape
    area = region.sum()
    if area < 4:
        raise ValueError(f"degenerate region (area {area} < 4 px)")
    target = support_mask(kind, shape).sum()
    s = math.sqrt(target / area)
    ys, xs = np.nonzero(region)
    centroid = np.array([xs.mean(), ys.mean()])
    cy, cx = grid.center(shape)
    A = s * np.eye(2)
    t = np.array([cx, cy], dtype=np.float64) - s * centroid
    return A, t


def demons_force(fixed, moving, field, params: DemonsParams, warped=None) -> np.ndarray:
    """Demons update ``u = D g / (|g|^2 + (sigma_i / sigma_x)^2 D^2)``.

    ``D = fixed - moving o gamma`` and ``g`` is the gradient of the warped
    moving image. Each step is bounded by ``sigma_x / (2 sigma_i)``.
    """
    if warped is None:
        warped = grid.warp(moving, field)
    diff = np.asarray(fixed, dtype=np.float64) - warped
    g = grid.gradient(warped)
    sigma_i = 1.0 if params.variant == "thirion" else params.sigma_i
    denom = g[0] ** 2 + g[1] ** 2 + (sigma_i / params.sigma_x) ** 2 * diff**2
    ok = denom >= 1e-12
    scale = np.where(ok, diff / np.where(ok, denom, 1.0), 0.0)
    return g * scale


def exp_field(u: np.ndarray) -> np.ndarray:
    """Exponential of a stationary velocity field by scaling and squaring."""
    u = np.asarray(u, dtype=np.float64)
    peak = float(np.sqrt((u**2).sum(axis=0)).max()) if u.size else 0.0
    m = 0 if peak <= 0.5 else int(math.ceil(math.log2(peak / 0.5)))
    v = u / 2.0**m
    for _ in range(m):
        v = grid.compose(v, v)
    return v


def _energy(fixed, warped) -> float:
    return float(((fixed - warped) ** 2).sum())


def demons_register(fixed, moving, params: DemonsParams, init=None, base=None, max_iter=None) -> MappingEstimate:
    """Single-resolution demons (Thirion, additive or diffeomorphic).

    Each iteration computes the force, smooths it with ``sigma_f`` (skipped
    for Thirion), updates ``c = gamma + u`` or ``c = gamma o exp(u)`` and
    smooths ``c`` with ``sigma_d``. Diffusion smoothing acts on ``c - base``
    so that an initial affine part is not eroded at the borders.

    Stops after ``max_iter`` iterations or when
    ``|E_k - E_{k-5}| / E_0 <= eps``.
    """
    fixed = np.asarray(fixed, dtype=np.float64)
    moving = np.asarray(moving, dtype=np.float64)
    if fixed.shape != moving.shape:
        raise ValueError(f"shape mismatch {fixed.shape} vs {moving.shape}")
    shape = fixed.shape
    gamma = np.zeros((2,) + shape) if init is None else np.array(init, dtype=np.float64)
    base = np.zeros((2,) + shape) if base is None else np.asarray(base, dtype=np.float64)
    K = params.max_iter if max_iter is None else max_iter
    warped = grid.warp(moving, gamma)
    e0 = _energy(fixed, warped)
    energies = [e0]
    k = 0
    if e0 == 0.0:
        return MappingEstimate(gamma, final_energy=0.0, iterations=0, rmse=0.0, energies=energies)
    fluid = params.variant != "thirion"
    while k < K:
        k += 1
        u = demons_force(fixed, moving, gamma, params, warped=warped)
        if fluid:
            u = grid.gaussian_smooth(u, params.sigma_f)
        if params.variant == "diffeomorphic":
            c = grid.compose(gamma, exp_field(u))
        else:
            c = gamma + u
        gamma = base + grid.gaussian_smooth(c - base, params.sigma_d)
        warped = grid.warp(moving, gamma)
        energies.append(_energy(fixed, warped))
        if k >= _STOP_LAG and abs(energies[k] - energies[k - _STOP_LAG]) / e0 <= params.eps:
            break
    return MappingEstimate(
        gamma,
        final_energy=energies[-1],
        iterations=k,
        rmse=math.sqrt(energies[-1] / fixed.size),
        energies=energies,
    )


def n_pyramid(shape: tuple[int, int]) -> int:
    """Largest ``n`` with ``2**n`` smaller than every image dimension."""
    m = min(shape)
    n = 0
    while 2 ** (n + 1) < m:
        n += 1
    return n


def feasible_levels(shape: tuple[int, int], n_level: int) -> int:
    """Clamp a level count so the coarsest grid keeps at least 8 pixels per side."""
    n = n_level
    while n > 0 and min(shape) // 2**n < grid.MIN_SIZE:
        n -= 1
    return n


def thirion_caps(n_passes: int, n_level: int) -> list[int]:
    """Iteration caps per pass, coarsest first: 2^4, 2^5, ... capped at 2^(n_level + 1)."""
    top = 2 ** max(n_level + 1, 4)
    return [min(2 ** (4 + i), top) for i in range(n_passes)]


def multires_register(fixed, moving, params: DemonsParams, affine=None) -> MappingEstimate:
    """Coarse-to-fine demons.

    Levels ``k = N, ..., 1`` run on images downsampled by ``2**k`` with the
    current field downsampled and divided by ``2**k``; each result is
    upsampled and multiplied back. A final pass runs at full resolution.
    Levels whose grid would drop below 8 pixels are skipped. The optional
    ``affine = (A, t)`` start is carried analytically at every level.
    """
    fixed = np.asarray(fixed, dtype=np.float64)
    moving = np.asarray(moving, dtype=np.float64)
    shape = fixed.shape
    A, t = (np.eye(2), np.zeros(2)) if affine is None else affine
    n_level = params.n_level if params.n_level is not None else max(n_pyramid(shape) - 1, 1)
    top = feasible_levels(shape, n_level)
    caps = thirion_caps(top + 1, n_level) if params.variant == "thirion" else [params.max_iter] * (top + 1)
    refine = np.zeros((2,) + shape)
    iterations = 0
    for i, k in enumerate(range(top, -1, -1)):
        f = 2**k
        base = affine_field(fixed[::f, ::f].shape, A, np.asarray(t) / f)
        if k:
            fk = grid.resample(fixed, f, "down")
            mk = grid.resample(moving, f, "down")
            rk = grid.resample(refine, f, "down") / f
        else:
            fk, mk, rk = fixed, moving, refine
        est = demons_register(fk, mk, params, init=base + rk, base=base, max_iter=min(caps[i], params.max_iter))
        iterations += est.iterations
        # a level that ends worse than it started (typically a tiny coarse
        # grid where the supports blur away) is rolled back
        if est.energies and est.final_energy <= est.energies[0]:
            rk = est.field - base
        refine = grid.resample(rk, f, "up", shape=shape) * f if k else rk
    total = affine_field(shape, A, t) + refine
    warped = grid.warp(moving, total)
    energy = _energy(fixed, warped)
    return MappingEstimate(
        total,
        init_affine=(np.asarray(A, dtype=np.float64), np.asarray(t, dtype=np.float64)),
        final_energy=energy,
        iterations=iterations,
        rmse=math.sqrt(energy / fixed.size),
        energies=est.energies,
    )


def select_params(fixed, moving, template: DemonsParams, affine=None):
    """Grid search of ``(sigma_d, n_level)`` minimizing the final quadratic risk.

    Candidates are ``sigma_d`` in 0.30, 0.31, ..., 0.50 and ``n_level`` in
    ``{n_P - 1, n_P}``; ties go to the smaller ``sigma_d``, then the smaller
    level count. Returns the chosen params and the matching estimate.
    """
    n_p = n_pyramid(np.shape(fixed))
    best = None
    cache = {}
    for sigma_d in SIGMA_D_GRID:
        for n_level in (max(n_p - 1, 1), max(n_p, 1)):
            eff = feasible_levels(np.shape(fixed), n_level)
            p = replace(template, sigma_d=sigma_d, n_level=n_level)
            key = (sigma_d, eff, n_level if template.variant == "thirion" else None)
            if key not in cache:
                cache[key] = multires_register(fixed, moving, p, affine)
            est = cache[key]
            if best is None or est.final_energy < best[1].final_energy:
                best = (p, est)
    return best


def nyquist_lines(shape: tuple[int, int]) -> np.ndarray:
    """Mask of the Nyquist row/column (first row/column on even dimensions)."""
    out = np.zeros(shape, dtype=bool)
    if shape[0] % 2 == 0:
        out[0] = True
    if shape[1] % 2 == 0:
        out[:, 0] = True
    return out


def fold_nyquist(est: MappingEstimate, kind: str, radius: float | None = None) -> MappingEstimate:
    """Read the mapping on the Nyquist lines through their best periodic alias.

    A Nyquist pixel at ``xi = -1/2`` is the same frequency as ``+1/2``, one
    step past the opposite edge. Its alias position is extrapolated linearly
    from the last two rows/columns, and the candidate (own value or alias)
    that lands closest to the kernel center is kept.
    """
    shape = est.shape
    total = est.total_map()
    cy, cx = grid.center(shape)
    c = np.array([cx, cy], dtype=np.float64)[:, None, None]
    even_r, even_c = shape[0] % 2 == 0, shape[1] % 2 == 0
    cands = [total]
    if even_c:
        t = total.copy()
        t[:, :, 0] = 2 * total[:, :, -1] - total[:, :, -2]
        cands.append(t)
    if even_r:
        t = total.copy()
        t[:, 0, :] = 2 * total[:, -1, :] - total[:, -2, :]
        cands.append(t)
    if even_r and even_c:
        t = total.copy()
        t[:, 0, 0] = 4 * total[:, -1, -1] - 2 * total[:, -2, -1] - 2 * total[:, -1, -2] + total[:, -2, -2]
        cands.append(t)
    if len(cands) == 1:
        return est
    stack = np.stack(cands) - c
    if kind == "square":
        dist = np.abs(stack).max(axis=1)
    else:
        dist = np.hypot(stack[:, 0], stack[:, 1])
    best = np.argmin(dist, axis=0)
    lines = nyquist_lines(shape)
    best[~lines] = 0
    chosen = np.take_along_axis(np.stack(cands), best[None, None], axis=0)[0]
    x, y = grid.pixel_coords(shape)
    return replace(est, field=np.stack([chosen[0] - x, chosen[1] - y]))


def _register_one(args):
    n, mask, kind, params, select = args
    # Nyquist pixels are periodic aliases of the far edge; registering them
    # in place would drag a detached strip, so they are folded afterwards
    inner = mask & ~nyquist_lines(mask.shape)
    if inner.sum() >= 4:
        mask = inner
    fixed = indicator(mask)
    moving = support_indicator(kind, mask.shape)
    affine = init_affine(mask, kind)
    if select:
        params, est = select_params(fixed, moving, params, affine)
    else:
        est = multires_register(fixed, moving, params, affine)
    est = fold_nyquist(est, kind)
    log.info("region %d: %d iterations, rmse %.4f", n, est.iterations, est.rmse)
    return n, params, est


def estimate_mappings(partition, kind: str, params: DemonsParams, select: bool = False, workers: int = 1):
    """Register every region ``n >= 0`` of a partition onto the kernel support.

    Returns ``{n: (params, MappingEstimate)}``. Regions are independent, so
    the result does not depend on ``workers``.
    """
    jobs = [(n, partition.region(n), kind, params, select) for n in partition.positive_labels]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_register_one, jobs))
    else:
        results = [_register_one(j) for j in jobs]
    return {n: (p, est) for n, p, est in results}


def params_dict(params: DemonsParams) -> dict:
    return asdict(params)
