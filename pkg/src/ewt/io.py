"""Artifact persistence: images, displacement fields, partitions, banks and coefficients."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .partition import Partition

FIELD_MAGIC = b"EWTF"
LABEL_OFFSET = 32768
PALETTE = (
    (0, 0, 0),
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
)


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval, with '#' comments
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P2":
        vals = np.array(data[pos:].split()[: w * h], dtype=np.float64)
    elif magic == b"P5":
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        vals = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).astype(np.float64)
    else:
        raise ValueError(f"{path}: not a grayscale PGM (magic {magic!r})")
    if vals.size != w * h:
        raise ValueError(f"{path}: truncated PGM")
    return vals.reshape(h, w) / maxval


def read_image(path) -> np.ndarray:
    """Grayscale 8/16-bit PNG or PGM (P2/P5) mapped linearly to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    if path.suffix.lower() in (".pgm", ".pnm"):
        return _read_pgm(path)
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            a = np.asarray(im, dtype=np.float64)
            return a / 65535.0
        if im.mode not in ("L", "P", "1"):
            raise ValueError(f"{path}: colour images are not supported (mode {im.mode})")
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_image(path, img, bits: int = 8) -> None:
    """Write an image clipped to [0, 1] as an 8- or 16-bit grayscale PNG."""
    a = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if bits == 16:
        Image.fromarray(np.round(a * 65535).astype(np.uint16)).save(path)
    else:
        Image.fromarray(np.round(a * 255).astype(np.uint8)).save(path)


def write_preview(path, a) -> None:
    """Min-max scaled 8-bit preview of any real array."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    write_image(path, (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a))


def write_field(path, fld) -> None:
    """Little-endian ``EWTF`` + u32 width + u32 height + row-major (dx, dy) float64 pairs."""
    fld = np.asarray(fld, dtype=np.float64)
    _, h, w = fld.shape
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC + struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(np.moveaxis(fld, 0, -1)).astype("<f8").tobytes())


def read_field(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FIELD_MAGIC:
        raise ValueError(f"{path}: not a displacement field file")
    w, h = struct.unpack("<II", data[4:12])
    vals = np.frombuffer(data, dtype="<f8", offset=12)
    if vals.size != 2 * w * h:
        raise ValueError(f"{path}: expected {2 * w * h} values, found {vals.size}")
    return np.moveaxis(vals.reshape(h, w, 2), -1, 0).astype(np.float64)


def write_partition(directory, part: Partition) -> None:
    """``labels.png`` (16-bit, label + 32768) and ``partition.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    Image.fromarray((part.labels + LABEL_OFFSET).astype(np.uint16)).save(d / "labels.png")
    labels = sorted(part.centers, key=lambda n: (abs(n), -n))
    meta = {
        "pairs": [[n, -n] for n in part.positive_labels if n > 0],
        "labels": labels,
        "centers": [list(map(int, part.centers[n])) for n in labels],
        "s0": part.s0,
        "method": part.method,
        "label_offset": LABEL_OFFSET,
        "shape": list(part.shape),
    }
    (d / "partition.json").write_text(json.dumps(meta, indent=2))


def read_partition(directory) -> Partition:
    d = Path(directory)
    meta = json.loads((d / "partition.json").read_text())
    with Image.open(d / "labels.png") as im:
        raw = np.asarray(im, dtype=np.int64)
    labels = raw - meta.get("label_offset", LABEL_OFFSET)
    centers = {int(n): tuple(c) for n, c in zip(meta["labels"], meta["centers"])}
    return Partition(labels, centers, method=meta.get("method", "file"), s0=meta.get("s0"))


def write_coefficients(directory, coeffs, meta: dict | None = None) -> None:
    """One little-endian float32 file per band plus an index JSON and previews."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    h, w = coeffs.coeffs.shape[1:]
    for n, c in zip(coeffs.labels, coeffs.coeffs):
        (d / f"coeff_{n}.f32").write_bytes(c.astype("<f4").tobytes())
        write_preview(d / f"coeff_{n}.png", c)
    index = {"labels": list(map(int, coeffs.labels)), "shape": [h, w], "dtype": "<f4"}
    index.update(meta or {})
    (d / "coeffs.json").write_text(json.dumps(index, indent=2))


def read_coefficients(directory):
    """Returns ``(CoefficientSet, index dict)``."""
    from .transform import CoefficientSet

    d = Path(directory)
    meta = json.loads((d / "coeffs.json").read_text())
    h, w = meta["shape"]
    arrs = [
        np.frombuffer((d / f"coeff_{n}.f32").read_bytes(), dtype="<f4").reshape(h, w).astype(np.float64)
        for n in meta["labels"]
    ]
    return CoefficientSet(list(meta["labels"]), np.stack(arrs)), meta


def write_labels(path, labels) -> None:
    """Segmentation labels ``1..8`` as a palette PNG (label ``j`` -> colour ``j - 1``)."""
    labels = np.asarray(labels)
    if labels.min() < 1 or labels.max() > len(PALETTE):
        raise ValueError(f"labels must lie in 1..{len(PALETTE)}")
    im = Image.fromarray((labels - 1).astype(np.uint8), mode="P")
    im.putpalette([v for rgb in PALETTE for v in rgb])
    im.save(path)


def _clean(o):
    # non-finite floats become strings ("inf", "nan") so the output stays valid JSON
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not np.isfinite(o):
        return "nan" if np.isnan(o) else ("inf" if o > 0 else "-inf")
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    return o


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, default=_jsonable))


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)
