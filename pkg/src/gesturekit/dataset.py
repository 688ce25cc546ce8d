"""Mask archives, label manifests and the synthetic gesture-mask generator.

Layout on disk::

    <root>/manifest.csv          path,label (paths relative to <root>)
    <root>/<class>/<id>.pgm      binary P5 masks
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import BinaryMask, ImageFormatError, read_mask, write_image
from .segmentation import detect_hand, extract_input


class DatasetError(ValueError):
    pass


@dataclass
class Manifest:
    entries: list  # [(relative path, label)]
    class_names: list
    root: Path | None = None

    @property
    def labels(self) -> list:
        return [lab for _, lab in self.entries]

    def label_indices(self) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.class_names)}
        return np.array([index[lab] for _, lab in self.entries], dtype=int)


def parse_manifest(text: str, root: Path | None = None, check_files: bool = True) -> Manifest:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError("manifest is empty; expected header 'path,label'") from None
    if [h.strip() for h in header] != ["path", "label"]:
        raise DatasetError(f"row 1: expected header 'path,label', got {','.join(header)!r}")
    entries, seen, classes = [], set(), []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2 or not row[0].strip() or not row[1].strip():
            raise DatasetError(f"row {lineno}: expected 2 non-empty fields, got {row!r}")
        path, label = row[0].strip(), row[1].strip()
        if path in seen:
            raise DatasetError(f"row {lineno}: duplicate path {path!r}")
        if check_files and root is not None and not (root / path).is_file():
            raise DatasetError(f"row {lineno}: file {path!r} does not exist under {root}")
        seen.add(path)
        if label not in classes:
            classes.append(label)
        entries.append((path, label))
    return Manifest(entries=entries, class_names=classes, root=root)


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"manifest {path} not found")
    return parse_manifest(path.read_text(), root=path.parent)


def manifest_text(m: Manifest) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "label"])
    w.writerows(m.entries)
    return buf.getvalue()


def load_mask(path) -> BinaryMask:
    try:
        return read_mask(path)
    except FileNotFoundError:
        raise DatasetError(f"mask file {path} not found") from None
    except ImageFormatError as exc:
        raise DatasetError(str(exc)) from None


def load_masks(manifest: Manifest) -> list[BinaryMask]:
    return [load_mask(manifest.root / p) for p, _ in manifest.entries]


# --- synthetic shapes -----------------------------------------------------------------------
# Each program maps shape-local (u, v) coordinates (pixels, v pointing down) to a
# boolean footprint; the generator places it with jitter on a 64x64 canvas.


def _disk(u, v):
    return u * u + v * v <= 16 ** 2


def _square(u, v):
    return (np.abs(u) <= 20) & (np.abs(v) <= 20)


def _bar(u, v):
    return (np.abs(u) <= 24) & (np.abs(v) <= 6)


def _cross(u, v):
    return _bar(u, v) | _bar(v, u)


def _star(u, v):
    r = np.hypot(u, v)
    phi = np.arctan2(v, u)
    return r <= 9 + 15 * ((1 + np.cos(5 * phi + math.pi / 2)) / 2) ** 2


def _fork(u, v):
    palm = u * u + (v - 8) ** 2 <= 12 ** 2
    fingers = (np.abs(np.abs(u) - 7) <= 3.5) & (v >= -24) & (v <= 4)
    return palm | fingers


SHAPES = {"disk": _disk, "square": _square, "bar": _bar, "cross": _cross,
          "star": _star, "fork": _fork}


@dataclass
class SynthSpec:
    classes: list = field(default_factory=lambda: ["disk", "square", "bar", "cross"])
    per_class: int = 200
    noise: float = 0.01
    shift: float = 4.0        # max translation, pixels
    rotate: float = 15.0      # max rotation, degrees
    scale: tuple = (0.9, 1.1)
    side: int = 64
    seed: int = 0

    def __post_init__(self):
        unknown = [c for c in self.classes if c not in SHAPES]
        if unknown:
            raise DatasetError(f"unknown shape programs {unknown}; known: {sorted(SHAPES)}")
        if self.per_class < 1:
            raise DatasetError("per_class must be >= 1")
        if not 0 <= self.noise < 1:
            raise DatasetError("noise probability must lie in [0, 1)")


def render(shape: str, side: int = 64, dx: float = 0.0, dy: float = 0.0, angle: float = 0.0,
           scale: float = 1.0) -> np.ndarray:
    c = (side - 1) / 2
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    x, y = xx - c - dx, yy - c - dy
    t = math.radians(angle)
    u = (math.cos(t) * x + math.sin(t) * y) / scale
    v = (-math.sin(t) * x + math.cos(t) * y) / scale
    return SHAPES[shape](u, v)


def synth_sample(spec: SynthSpec, class_index: int, i: int) -> BinaryMask:
    rng = np.random.default_rng([spec.seed, class_index, i])
    fg = render(spec.classes[class_index], spec.side,
                dx=rng.uniform(-spec.shift, spec.shift), dy=rng.uniform(-spec.shift, spec.shift),
                angle=rng.uniform(-spec.rotate, spec.rotate), scale=rng.uniform(*spec.scale))
    if spec.noise:
        fg = fg ^ (rng.random(fg.shape) < spec.noise)
    return BinaryMask.from_bool(fg)


def synth_generate(spec: SynthSpec, out_dir=None) -> tuple[Manifest, list[BinaryMask]]:
    """Generate ``per_class`` masks per shape; optionally write them under ``out_dir``."""
    entries, masks = [], []
    for ci, name in enumerate(spec.classes):
        for i in range(spec.per_class):
            masks.append(synth_sample(spec, ci, i))
            entries.append((f"{name}/{i:04d}.pgm", name))
    manifest = Manifest(entries=entries, class_names=list(spec.classes),
                        root=Path(out_dir) if out_dir else None)
    if out_dir is not None:
        root = Path(out_dir)
        for name in spec.classes:
            (root / name).mkdir(parents=True, exist_ok=True)
        for (rel, _), mask in zip(entries, masks):
            write_image(root / rel, mask)
        (root / "manifest.csv").write_text(manifest_text(manifest))
    return manifest, masks


def iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 1.0


def prototype_iou(classes, side: int = 64) -> np.ndarray:
    protos = [render(c, side) for c in classes]
    return np.array([[iou(a, b) for b in protos] for a in protos])


def prepare_inputs(masks, side: int = 64, cut_factor: float = 1.6) -> np.ndarray:
    """Run dataset masks through detect_hand/extract_input → ``(N, side, side)`` in {0, 1}."""
    out = np.zeros((len(masks), side, side), dtype=np.float32)
    for i, mask in enumerate(masks):
        region = detect_hand(mask, cut_factor=cut_factor)
        if region is None:
            raise DatasetError(f"sample {i}: no hand-sized component")
        out[i] = extract_input(region, side).fg
    return out
