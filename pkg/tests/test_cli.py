import json

import numpy as np
import pytest
from click.testing import CliRunner

from ewt import io
from ewt.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    # binary stripes stored exactly (maxval 1), so no quantization modes appear
    x = np.arange(64)
    img = (np.cos(2 * np.pi * 8 * x / 64)[None, :] * np.ones((64, 1)) > 0).astype(int)
    rows = "\n".join(" ".join(map(str, r)) for r in img)
    (d / "s.pgm").write_text(f"P2\n64 64\n1\n{rows}\n")
    return d


def run(d, *args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


def test_version():
    res = CliRunner().invoke(main, ["--version"])
    assert res.exit_code == 0 and "ewt" in res.output


def test_full_chain(workdir):
    d = workdir
    res = run(d, "partition", "--input", d / "s.pgm", "--out", d / "part")
    assert res.exit_code == 0, res.output
    assert (d / "part" / "labels.png").exists() and (d / "part" / "manifest_partition.json").exists()
    res = run(d, "register", "--partition", d / "part", "--out", d / "bank")
    assert res.exit_code == 0, res.output
    bank = json.loads((d / "bank" / "bank.json").read_text())
    for n in bank["labels"]:
        assert io.read_field(d / "bank" / f"field_{n}.ewtf").shape == (2, 64, 64)
    res = run(d, "transform", "--input", d / "s.pgm", "--bank", d / "bank", "--out", d / "co")
    assert res.exit_code == 0, res.output
    res = run(d, "reconstruct", "--coeffs", d / "co", "--bank", d / "bank", "--out", d / "rec.png")
    assert res.exit_code == 0, res.output
    rep = json.loads((d / "report.json").read_text())
    assert rep["psnr"] > 60 and rep["hole_fraction"] == 0
    man = json.loads((d / "manifest_reconstruct.json").read_text())
    assert man["command"] == "reconstruct" and len(man["config_hash"]) == 64


def test_segment_command(workdir):
    d = workdir
    res = run(d, "segment", "--input", d / "s.pgm", "--k", 2, "--out", d / "seg" / "seg.png")
    assert res.exit_code == 0, res.output
    meta = json.loads((d / "seg" / "seg.json").read_text())
    assert meta["k"] == 2 and sum(meta["sizes"]) == 64 * 64


def test_config_file_and_unknown_key(workdir):
    d = workdir
    (d / "good.toml").write_text('[partition]\nmethod = "watershed"\n')
    res = run(d, "partition", "--config", d / "good.toml", "--input", d / "s.pgm", "--out", d / "pw")
    assert res.exit_code == 0, res.output
    assert json.loads((d / "pw" / "partition.json").read_text())["method"] == "watershed"
    (d / "bad.toml").write_text('[kernel]\nknd = "disk"\n')
    res = CliRunner().invoke(main, ["partition", "--config", str(d / "bad.toml"), "--input", str(d / "s.pgm"), "--out", str(d / "x")])
    assert res.exit_code == 2 and "kernel.knd" in res.output


def test_missing_input_exits_2(workdir):
    res = CliRunner().invoke(main, ["partition", "--input", str(workdir / "nope.png"), "--out", str(workdir / "y")])
    assert res.exit_code == 2 and "not found" in res.output
    res = CliRunner().invoke(main, ["transform", "--input", str(workdir / "s.pgm"), "--bank", str(workdir / "nobank"), "--out", str(workdir / "z")])
    assert res.exit_code == 2


def test_numeric_failure_exits_3(workdir):
    d = workdir
    # a 4x4 image is below the minimum grid size
    (d / "tiny.pgm").write_text("P2\n4 4\n1\n" + "0 1 0 1\n" * 4)
    res = CliRunner().invoke(main, ["partition", "--input", str(d / "tiny.pgm"), "--out", str(d / "t")])
    assert res.exit_code == 3


def test_bench_command(workdir):
    d = workdir
    (d / "bench.toml").write_text(
        "[bench]\nsize = 64\ntaus = [0.2]\nnormalizations = [false]\n[demons]\nmax_iter = 10\n"
    )
    res = run(d, "bench", "--config", d / "bench.toml", "--input", d / "s.pgm", "--out", d / "b" / "bench.csv")
    assert res.exit_code == 0, res.output
    lines = (d / "b" / "bench.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("variant,partition")
