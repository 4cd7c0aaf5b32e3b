"""``ewt`` command line: one subcommand per pipeline stage, artifacts on disk."""

from __future__ import annotations

import json
import logging
import platform
import time
import warnings
from pathlib import Path

import click
import numpy as np
import scipy

from . import __version__, config, io, transform
from .analysis import psnr, run_benchmark
from .demons import (
    MappingEstimate,
    estimate_mappings,
    params_dict,
    target_radius,
)
from .kernels import KernelSpec
from .partition import partition_image
from .segmentation import SegmentConfig, segment

log = logging.getLogger("ewt")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class NumericFailure(click.ClickException):
    exit_code = EXIT_NUMERIC


class ConfigFailure(click.ClickException):
    exit_code = EXIT_CONFIG


def _overrides(**sections) -> dict:
    """Nested override dict from flag values, skipping unset flags."""
    out = {}
    for section, values in sections.items():
        if isinstance(values, dict):
            vals = {k: v for k, v in values.items() if v is not None}
            if vals:
                out[section] = vals
        elif values is not None:
            out[section] = values
    return out


def _load(cfg_path, **sections) -> dict:
    try:
        return config.load(cfg_path, _overrides(**sections))
    except config.ConfigError as exc:
        raise ConfigFailure(str(exc)) from None


def _input_path(cfg, flag):
    path = flag or cfg.get("input")
    if not path:
        raise ConfigFailure("no input given (use --input or 'input' in the config)")
    if not Path(path).exists():
        raise ConfigFailure(f"input not found: {path}")
    return Path(path)


def _read_image(path):
    try:
        return io.read_image(path)
    except (OSError, ValueError) as exc:
        raise ConfigFailure(f"cannot read {path}: {exc}") from None


def _need_dir(path, what):
    p = Path(path)
    if not p.is_dir():
        raise ConfigFailure(f"{what} directory not found: {p}")
    return p


def _manifest(out_dir, command, cfg, timings, inputs=()):
    ctx = click.get_current_context()
    man = {
        "command": command,
        "version": __version__,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "config": cfg,
        "config_hash": config.config_hash(cfg),
        "threads": ctx.obj["threads"],
        "inputs": [str(p) for p in inputs],
        "timings": timings,
    }
    io.write_json(Path(out_dir) / f"manifest_{command}.json", man)


def _numeric(fn, *args, **kw):
    """Run a numeric stage, mapping numeric failures to exit status 3."""
    try:
        return fn(*args, **kw)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        raise NumericFailure(f"{fn.__name__}: {exc}") from None


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="ewt")
@click.option("--threads", type=click.IntRange(min=1), envvar="EWT_THREADS", default=1, show_default=True,
              help="Worker processes for per-region registration (falls back to EWT_THREADS).")
@click.option("-v", "--verbose", count=True, help="Log progress (-vv for debug).")
@click.pass_context
def main(ctx, threads, verbose):
    """Empirical wavelet transforms with demons-estimated Fourier mappings."""
    ctx.ensure_object(dict)
    ctx.obj["threads"] = threads
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


_config_opt = click.option("--config", "cfg_path", type=click.Path(dir_okay=False), help="TOML configuration file.")


@main.command("partition")
@_config_opt
@click.option("--input", "input_", type=click.Path(dir_okay=False), help="Grayscale PNG or PGM image.")
@click.option("--method", type=click.Choice(["voronoi", "watershed"]))
@click.option("--s0", type=float, help="Scale-space step size.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
def partition_cmd(cfg_path, input_, method, s0, out):
    """Detect Fourier modes and write the partition (labels.png, partition.json)."""
    cfg = _load(cfg_path, input=input_, partition={"method": method, "s0": s0})
    src = _input_path(cfg, input_)
    img = _read_image(src)
    t0 = time.perf_counter()
    p = cfg["partition"]
    part = _numeric(partition_image, img, p["method"], p["s0"], p["sigma"])
    elapsed = time.perf_counter() - t0
    io.write_partition(out, part)
    _manifest(out, "partition", cfg, {"partition": elapsed}, [src])
    click.echo(f"{len(part.centers)} regions written to {out}")


@main.command("register")
@_config_opt
@click.option("--partition", "part_dir", required=True, type=click.Path(file_okay=False))
@click.option("--kernel", type=click.Choice(["disk", "square"]))
@click.option("--variant", type=click.Choice(["thirion", "additive", "diffeomorphic"]))
@click.option("--select-params", is_flag=True, default=False, help="Grid-search sigma_d and the level count.")
@click.option("--sigma-d", type=float)
@click.option("--n-level", type=int)
@click.option("--out", type=click.Path(file_okay=False), help="Output directory (default: <partition>/../bank).")
@click.pass_context
def register_cmd(ctx, cfg_path, part_dir, kernel, variant, select_params, sigma_d, n_level, out):
    """Estimate one mapping per region; writes field_<n>.ewtf and field_<n>.json."""
    demons = {"variant": variant, "sigma_d": "auto" if select_params else sigma_d, "n_level": n_level}
    cfg = _load(cfg_path, kernel={"kind": kernel}, demons=demons)
    part = io.read_partition(_need_dir(part_dir, "partition"))
    out = Path(out) if out else Path(part_dir).parent / "bank"
    out.mkdir(parents=True, exist_ok=True)
    params, select = config.demons_params(cfg)
    kind = cfg["kernel"]["kind"]
    t0 = time.perf_counter()
    maps = _numeric(estimate_mappings, part, kind, params, select=select, workers=ctx.obj["threads"])
    elapsed = time.perf_counter() - t0
    for n, (p, est) in sorted(maps.items()):
        io.write_field(out / f"field_{n}.ewtf", est.field)
        io.write_json(out / f"field_{n}.json", {
            "n": n,
            "variant": p.variant,
            "sigma_d": p.sigma_d,
            "n_level": p.n_level,
            "iterations": est.iterations,
            "final_energy": est.final_energy,
            "rmse": est.rmse,
        })
    io.write_json(out / "bank.json", {
        "kind": kind,
        "labels": sorted(maps),
        "radius": target_radius(part.shape),
        "shape": list(part.shape),
        "demons": params_dict(params),
    })
    _manifest(out, "register", cfg, {"register": elapsed}, [part_dir])
    click.echo(f"{len(maps)} mappings written to {out}")


def _load_bank(bank_dir, tau, normalized):
    d = _need_dir(bank_dir, "bank")
    meta_path = d / "bank.json"
    if not meta_path.exists():
        raise ConfigFailure(f"missing {meta_path}")
    meta = json.loads(meta_path.read_text())
    maps = {n: MappingEstimate(io.read_field(d / f"field_{n}.ewtf")) for n in meta["labels"]}
    kernel = KernelSpec(meta["kind"], tau)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", transform.ReconstructionWarning)
        bank = _numeric(transform.build_bank, maps, kernel, normalized, meta["radius"])
    for w in caught:
        click.echo(f"warning: {w.message}", err=True)
    return bank


@main.command("transform")
@_config_opt
@click.option("--input", "input_", type=click.Path(dir_okay=False))
@click.option("--bank", "bank_dir", required=True, type=click.Path(file_okay=False))
@click.option("--tau", type=float)
@click.option("--normalized/--unnormalized", default=None)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def transform_cmd(cfg_path, input_, bank_dir, tau, normalized, out):
    """Forward transform; writes coeff_<n>.f32 (float32) with PNG previews."""
    cfg = _load(cfg_path, input=input_, kernel={"tau": tau}, normalized=normalized)
    src = _input_path(cfg, input_)
    img = _read_image(src)
    bank = _load_bank(bank_dir, cfg["kernel"]["tau"], cfg["normalized"])
    t0 = time.perf_counter()
    coeffs = _numeric(transform.forward, img, bank)
    elapsed = time.perf_counter() - t0
    io.write_coefficients(out, coeffs, {
        "tau": cfg["kernel"]["tau"],
        "normalized": cfg["normalized"],
        "input": str(src),
    })
    _manifest(out, "transform", cfg, {"transform": elapsed}, [src, bank_dir])
    click.echo(f"{len(coeffs.labels)} bands written to {out}")


@main.command("reconstruct")
@_config_opt
@click.option("--coeffs", "coeff_dir", required=True, type=click.Path(file_okay=False))
@click.option("--bank", "bank_dir", required=True, type=click.Path(file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Reconstructed image (PNG).")
@click.option("--report", type=click.Path(dir_okay=False), help="Report JSON (default: next to --out).")
@click.option("--reference", type=click.Path(dir_okay=False), help="Image for the PSNR (default: the transformed input).")
def reconstruct_cmd(cfg_path, coeff_dir, bank_dir, out, report, reference):
    """Dual-frame inverse transform with a PSNR/coverage report."""
    cfg = _load(cfg_path)
    coeffs, meta = io.read_coefficients(_need_dir(coeff_dir, "coefficient"))
    bank = _load_bank(bank_dir, meta["tau"], meta["normalized"])
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", transform.ReconstructionWarning)
        rec = _numeric(transform.inverse, coeffs, bank)
    elapsed = time.perf_counter() - t0
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_image(out, rec, bits=16)
    ref = reference or meta.get("input")
    rep = {
        "coverage_min": float(bank.coverage.min()),
        "coverage_max": float(bank.coverage.max()),
        "hole_fraction": bank.hole_fraction,
        "tau": meta["tau"],
        "normalized": meta["normalized"],
        "psnr": None,
    }
    if ref and Path(ref).exists():
        value = psnr(_read_image(ref), rec)
        rep["psnr"] = "inf" if np.isinf(value) else value
    report = Path(report) if report else out.with_name("report.json")
    io.write_json(report, rep)
    _manifest(out.parent, "reconstruct", cfg, {"reconstruct": elapsed}, [coeff_dir, bank_dir])
    click.echo(f"PSNR {rep['psnr']} dB" if rep["psnr"] is not None else f"wrote {out}")


@main.command("segment")
@_config_opt
@click.option("--input", "input_", type=click.Path(dir_okay=False))
@click.option("--k", type=int)
@click.option("--method", type=click.Choice(["voronoi", "watershed"]))
@click.option("--kernel", type=click.Choice(["disk", "square"]))
@click.option("--tau", type=float)
@click.option("--variant", type=click.Choice(["thirion", "additive", "diffeomorphic"]))
@click.option("--window", type=int)
@click.option("--seed", type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Label PNG; seg.json is written beside it.")
@click.pass_context
def segment_cmd(ctx, cfg_path, input_, k, method, kernel, tau, variant, window, seed, out):
    """Texture segmentation with EWT local-energy features and L1 k-means."""
    cfg = _load(
        cfg_path,
        input=input_,
        partition={"method": method},
        kernel={"kind": kernel, "tau": tau},
        demons={"variant": variant},
        segmentation={"k": k, "window": window, "seed": seed},
    )
    src = _input_path(cfg, input_)
    img = _read_image(src)
    params, _ = config.demons_params(cfg)
    s = cfg["segmentation"]
    scfg = SegmentConfig(
        k=s["k"],
        method=cfg["partition"]["method"],
        kernel=cfg["kernel"]["kind"],
        tau=cfg["kernel"]["tau"],
        variant=params.variant,
        normalized=cfg["normalized"],
        s0=cfg["partition"]["s0"],
        sigma_c=s["sigma_c"],
        window=s["window"],
        seed=s["seed"],
        demons=params,
        workers=ctx.obj["threads"],
    )
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", transform.ReconstructionWarning)
        seg = _numeric(segment, img, scfg)
    elapsed = time.perf_counter() - t0
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_labels(out, seg.labels)
    io.write_json(out.with_name("seg.json"), {
        "k": seg.k,
        "sizes": seg.sizes,
        "cost": seg.cost,
        "config": cfg,
    })
    _manifest(out.parent, "segment", cfg, {"segment": elapsed}, [src])
    click.echo(f"cluster sizes {seg.sizes}")


@main.command("bench")
@_config_opt
@click.option("--input", "input_", type=click.Path(dir_okay=False), help="Image to use instead of the synthetic toy.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="CSV report.")
@click.pass_context
def bench_cmd(ctx, cfg_path, input_, out):
    """Partition, register and round-trip over a grid of configurations."""
    cfg = _load(cfg_path, input=input_)
    bcfg = config.bench_config(cfg, workers=ctx.obj["threads"])
    img = _read_image(_input_path(cfg, input_)) if cfg.get("input") else None
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", transform.ReconstructionWarning)
        rep = _numeric(run_benchmark, bcfg, img)
    elapsed = time.perf_counter() - t0
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rep.to_csv(out)
    io.write_json(out.with_suffix(".json"), rep.to_dict())
    _manifest(out.parent, "bench", cfg, {"bench": elapsed})
    failed = [r for r in rep.rows if r.error]
    for r in failed:
        click.echo(f"row {r.variant}/{r.partition}/{r.kernel}/tau={r.tau}: {r.error}", err=True)
    click.echo(f"{len(rep.rows)} rows written to {out}")


if __name__ == "__main__":  # pragma: no cover
    main()
