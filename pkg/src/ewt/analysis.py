"""Assessment metrics and the reconstruction benchmark driver."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import grid, transform
from .demons import VARIANTS, DemonsParams, estimate_mappings
from .kernels import KINDS, KernelSpec
from .partition import partition_image

log = logging.getLogger(__name__)

METHODS = ("voronoi", "watershed")
TAUS = (0.1, 0.2, 0.3)
CSV_COLUMNS = (
    "variant",
    "partition",
    "kernel",
    "tau",
    "normalized",
    "mean_rmse",
    "min_rmse",
    "max_rmse",
    "psnr",
    "seconds_register",
    "seconds_roundtrip",
)


def rmse_mapping(target, source, field_) -> float:
    """``||target - source o gamma|| / sqrt(N)`` with ``gamma = id + field_``.

    The warp applies to the second argument only, so the metric is not
    symmetric in ``target`` and ``source``.
    """
    target = np.asarray(target, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    if target.shape != source.shape:
        raise ValueError(f"shape mismatch {target.shape} vs {source.shape}")
    diff = target - grid.warp(source, field_)
    return float(np.sqrt((diff**2).sum() / target.size))


def psnr(f, g) -> float:
    """``-10 log10(MSE)`` for images in [0, 1]; ``inf`` when identical."""
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch {f.shape} vs {g.shape}")
    mse = float(np.mean((f - g) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def toy_image(n: int = 256, seed: int = 0, radius: float = 32.0, angles=(10.0, 55.0, 100.0, 145.0)) -> np.ndarray:
    """Synthetic test image: oriented cosine gratings plus a smooth blob, in [0, 1].

    Each grating sits on the integer frequency nearest to ``radius`` at the
    given angle (degrees), so its spectrum is two isolated peaks; phases are
    drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    x, y = grid.pixel_coords((n, n))
    img = np.zeros((n, n))
    for a in angles:
        kx = round(radius * math.cos(math.radians(a)))
        ky = round(radius * math.sin(math.radians(a)))
        img += np.cos(2 * np.pi * (kx * x + ky * y) / n + rng.uniform(0, 2 * np.pi))
    u, v = x / n, y / n
    img += 4.0 * np.exp(-((u - 0.4) ** 2 + (v - 0.6) ** 2) / (2 * 0.1**2))
    return (img - img.min()) / (img.max() - img.min())


@dataclass
class BenchConfig:
    variants: tuple = ("additive",)
    partitions: tuple = ("voronoi",)
    kernels: tuple = ("disk",)
    taus: tuple = TAUS
    normalizations: tuple = (False, True)
    size: int = 256
    seed: int = 0
    s0: float = 0.8
    select_params: bool = False
    demons: DemonsParams = field(default_factory=DemonsParams)
    workers: int = 1

    def __post_init__(self):
        for name, allowed in (("variants", VARIANTS), ("partitions", METHODS), ("kernels", KINDS)):
            vals = tuple(getattr(self, name))
            bad = [v for v in vals if v not in allowed]
            if bad or not vals:
                raise ValueError(f"{name}: invalid entries {bad} (allowed {allowed})")
            setattr(self, name, vals)
        self.taus = tuple(float(t) for t in self.taus)
        for t in self.taus:
            if not 0 < t < 0.5:
                raise ValueError(f"tau must be in (0, 0.5), got {t}")
        self.normalizations = tuple(bool(b) for b in self.normalizations)


@dataclass
class ReportRow:
    variant: str
    partition: str
    kernel: str
    tau: float
    normalized: bool
    rmse: list = field(default_factory=list)
    psnr: float = math.nan
    seconds_register: float = 0.0
    seconds_roundtrip: float = 0.0
    error: str | None = None

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.rmse)) if self.rmse else math.nan

    @property
    def min_rmse(self) -> float:
        return float(np.min(self.rmse)) if self.rmse else math.nan

    @property
    def max_rmse(self) -> float:
        return float(np.max(self.rmse)) if self.rmse else math.nan

    def record(self, timings: bool = True) -> dict:
        out = {
            "variant": self.variant,
            "partition": self.partition,
            "kernel": self.kernel,
            "tau": self.tau,
            "normalized": self.normalized,
            "mean_rmse": self.mean_rmse,
            "min_rmse": self.min_rmse,
            "max_rmse": self.max_rmse,
            "psnr": self.psnr,
        }
        if timings:
            out["seconds_register"] = self.seconds_register
            out["seconds_roundtrip"] = self.seconds_roundtrip
        if self.error:
            out["error"] = self.error
        return out


@dataclass
class AssessmentReport:
    rows: list
    config: dict

    def find(self, **kw) -> ReportRow:
        for r in self.rows:
            if all(getattr(r, k) == v for k, v in kw.items()):
                return r
        raise KeyError(kw)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                rec = r.record()
                w.writerow([_fmt(rec[c]) for c in CSV_COLUMNS])

    def to_dict(self, timings: bool = True) -> dict:
        return {"config": self.config, "rows": [r.record(timings) for r in self.rows]}


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return v


def _register_group(args):
    """Registration of one (variant, partition, kernel) and every round trip built on it."""
    img, part, variant, kind, cfg = args
    rows = [
        ReportRow(variant, part.method, kind, tau, norm)
        for tau in cfg.taus
        for norm in cfg.normalizations
    ]
    try:
        t0 = time.perf_counter()
        params = replace(cfg.demons, variant=variant)
        maps = estimate_mappings(part, kind, params, select=cfg.select_params)
        t_reg = time.perf_counter() - t0
    except Exception as exc:  # recorded per row, the run continues
        for r in rows:
            r.error = f"register: {exc}"
        return rows
    rmse = [est.rmse for _, (_, est) in sorted(maps.items())]
    mappings = {n: est for n, (_, est) in maps.items()}
    for r in rows:
        r.rmse = list(rmse)
        r.seconds_register = t_reg
        try:
            t0 = time.perf_counter()
            bank = transform.build_bank(mappings, KernelSpec(kind, r.tau), r.normalized)
            rec = transform.inverse(transform.forward(img, bank), bank)
            r.psnr = psnr(img, rec)
            r.seconds_roundtrip = time.perf_counter() - t0
        except Exception as exc:
            r.error = f"roundtrip: {exc}"
    return rows


def run_benchmark(cfg: BenchConfig, img=None) -> AssessmentReport:
    """Partition, register, build banks and round-trip over the configured grid.

    Rows come out ordered by variant, partition, kernel, tau, normalization.
    Failures are stored in the row's ``error`` and the run goes on.
    """
    img = toy_image(cfg.size, cfg.seed) if img is None else grid.as_image(img)
    parts = {}
    for method in cfg.partitions:
        parts[method] = partition_image(img, method, cfg.s0)
    jobs = [
        (img, parts[m], v, k, cfg)
        for v in cfg.variants
        for m in cfg.partitions
        for k in cfg.kernels
    ]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            groups = list(pool.map(_register_group, jobs))
    else:
        groups = [_register_group(j) for j in jobs]
    rows = [r for g in groups for r in g]
    conf = asdict(cfg)
    conf.pop("workers")
    return AssessmentReport(rows, conf)
