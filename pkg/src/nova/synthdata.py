"""Deterministic synthetic image-text datasets.

Classes are visually separable full-field parametric patterns (a blob
lattice, a grating, a ring lattice, chevron wedges) so every crop of an
image carries the class signal. On top of the class pattern each image
gets two full-field overlay textures ("grain": oriented periodic waves;
"stamps": a lattice of small dark marks) whose categories are robust to
cropping, resizing, and small rotations. The caption names the class plus
one descriptor word per overlay texture, so text anchors vary along many
image-predictable directions, the way real reports describe what is
visible in the image. Images go to disk as binary PGM; a CSV manifest
pairs paths, captions, and per-class binary labels. Real data enters
through the same manifest schema.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imageio import read_image, write_pgm

_SEED_MASK = (1 << 64) - 1


def _grid(size: int):
    coords = np.arange(size, dtype=np.float64) + 0.5
    return np.meshgrid(coords, coords, indexing="ij")


def _lattice_offsets(size: int, spacing: float, oy: float, ox: float):
    """Signed distance to the nearest lattice point along each axis."""
    yy, xx = _grid(size)
    dy = (yy - oy + spacing / 2.0) % spacing - spacing / 2.0
    dx = (xx - ox + spacing / 2.0) % spacing - spacing / 2.0
    return dy, dx


def _render_blob(size: int, rng: np.random.Generator) -> np.ndarray:
    spacing = size / 4.0
    sigma = rng.uniform(0.15, 0.19) * spacing
    oy, ox = rng.uniform(-6.0, 6.0, size=2)
    dy, dx = _lattice_offsets(size, spacing, oy, ox)
    return 150.0 * np.exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma))


def _render_grating(size: int, rng: np.random.Generator) -> np.ndarray:
    _, xx = _grid(size)
    freq = rng.uniform(4.6, 5.4)
    phase = rng.uniform(0.0, 0.5)
    return 75.0 * (1.0 + np.sin(2.0 * math.pi * freq * xx / size + phase)) / 2.0


def _render_ring(size: int, rng: np.random.Generator) -> np.ndarray:
    spacing = size / 4.0
    radius = rng.uniform(0.28, 0.33) * spacing
    width = rng.uniform(0.065, 0.085) * spacing
    oy, ox = rng.uniform(-6.0, 6.0, size=2)
    dy, dx = _lattice_offsets(size, spacing, oy, ox)
    r = np.sqrt(dy * dy + dx * dx)
    return 150.0 * np.exp(-((r - radius) ** 2) / (2.0 * width * width))


def _render_wedge(size: int, rng: np.random.Generator) -> np.ndarray:
    # herringbone chevrons: stripe direction alternates between bands
    yy, xx = _grid(size)
    freq = rng.uniform(7.6, 8.4)
    offset = rng.uniform(0.0, 4.0)
    slope = math.tan(math.radians(35.0))
    band = ((yy + offset) // (size / 8.0)) % 2
    u = xx + slope * yy
    v = xx - slope * yy
    phase = np.where(band == 0, u, v)
    return 70.0 * (1.0 + np.sin(2.0 * math.pi * freq * phase / size)) / 2.0


PATTERNS = {
    "blob": _render_blob,
    "grating": _render_grating,
    "ring": _render_ring,
    "wedge": _render_wedge,
}

DEFAULT_CLASSES = (("blob", "blob"), ("grating", "grating"), ("ring", "ring"), ("wedge", "wedge"))

# -- overlay textures: crop/scale/rotation-robust categorical attributes ----

GRAIN_ORIENTATIONS = (0.0, 45.0, 90.0, 135.0)  # 45 deg apart: +-10 deg view rotation cannot cross
GRAIN_FREQS = (8.0, 16.0, 24.0)  # cycles per image; octave-ish gaps beat crop-scale jitter
GRAIN_WAVES = ("sine", "square")
GRAIN_CONTRASTS = (14.0, 30.0)
GRAIN_WORDS = tuple(
    f"grain{o}{f}{w}{c}"
    for o in range(len(GRAIN_ORIENTATIONS))
    for f in range(len(GRAIN_FREQS))
    for w in range(len(GRAIN_WAVES))
    for c in range(len(GRAIN_CONTRASTS))
)

STAMP_SHAPES = ("disc", "ringlet", "cross", "square", "diamond", "hbar")
STAMP_ORIENTATIONS = (0.0, 45.0)  # lattice axis
STAMP_SIZES = (10.0, 14.0)
STAMP_WORDS = tuple(
    f"stamp{s}{o}{z}"
    for s in range(len(STAMP_SHAPES))
    for o in range(len(STAMP_ORIENTATIONS))
    for z in range(len(STAMP_SIZES))
)


def _render_grain(size: int, category: int) -> np.ndarray:
    n_f, n_w, n_c = len(GRAIN_FREQS), len(GRAIN_WAVES), len(GRAIN_CONTRASTS)
    o, rest = divmod(category, n_f * n_w * n_c)
    f, rest = divmod(rest, n_w * n_c)
    w, c = divmod(rest, n_c)
    theta = math.radians(GRAIN_ORIENTATIONS[o])
    yy, xx = _grid(size)
    coord = xx * math.cos(theta) + yy * math.sin(theta)
    wave = np.sin(2.0 * math.pi * GRAIN_FREQS[f] * coord / size)
    if GRAIN_WAVES[w] == "square":
        wave = np.sign(wave)
    return GRAIN_CONTRASTS[c] * wave


def _stamp_mask(dy: np.ndarray, dx: np.ndarray, shape: str, h: float) -> np.ndarray:
    ay, ax = np.abs(dy), np.abs(dx)
    r = np.sqrt(dy * dy + dx * dx)
    if shape == "disc":
        return r < h
    if shape == "ringlet":
        return (r < h) & (r > 0.55 * h)
    if shape == "cross":
        return ((ay < h / 3.0) | (ax < h / 3.0)) & (np.maximum(ay, ax) < h)
    if shape == "square":
        return np.maximum(ay, ax) < 0.8 * h
    if shape == "diamond":
        return (ay + ax) < 1.1 * h
    if shape == "hbar":
        return (ay < h / 3.0) & (ax < h)
    raise ValueError(f"unknown stamp shape {shape!r}")


def _render_stamps(size: int, category: int) -> np.ndarray:
    n_o, n_z = len(STAMP_ORIENTATIONS), len(STAMP_SIZES)
    s, rest = divmod(category, n_o * n_z)
    o, z = divmod(rest, n_z)
    spacing = size / 5.0
    yy, xx = _grid(size)
    if STAMP_ORIENTATIONS[o] == 45.0:
        inv = 1.0 / math.sqrt(2.0)
        yy, xx = (yy + xx) * inv, (xx - yy) * inv
    dy = (yy + spacing / 2.0) % spacing - spacing / 2.0
    dx = (xx + spacing / 2.0) % spacing - spacing / 2.0
    mask = _stamp_mask(dy, dx, STAMP_SHAPES[s], STAMP_SIZES[z])
    return -45.0 * mask.astype(np.float64)


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple = DEFAULT_CLASSES  # (name, pattern) pairs
    samples_per_class: int = 128
    image_size: int = 256
    noise_sigma: float = 8.0
    co_occur_prob: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValueError("need at least 2 classes")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        for name, pattern in self.classes:
            if pattern not in PATTERNS:
                raise ValueError(f"unknown pattern {pattern!r} for class {name!r}")

    @property
    def class_names(self) -> list:
        return [name for name, _ in self.classes]


@dataclass(frozen=True)
class SampleRecord:
    image_path: str  # relative to the manifest directory
    text: str
    labels: dict  # class name -> 0/1


@dataclass
class Manifest:
    records: list
    classes: list
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.records)

    def resolve(self, record: SampleRecord) -> Path:
        return self.root / record.image_path

    def load_image(self, record: SampleRecord) -> np.ndarray:
        return read_image(self.resolve(record))


class ManifestError(ValueError):
    pass


def render_sample(spec: SyntheticSpec, sample_index: int):
    """Render one sample deterministically: (uint8 image, labels, caption).

    The per-sample RNG stream is derived from (spec.seed, sample_index),
    so samples can be generated in parallel and in any order. The caption
    is the class template plus two seeded descriptor tokens naming the
    image's overlay textures, so the text varies only along directions
    that are visible in every crop.
    """
    n_classes = len(spec.classes)
    class_idx = sample_index // spec.samples_per_class
    if class_idx >= n_classes:
        raise ValueError(f"sample index {sample_index} out of range")
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed & _SEED_MASK, int(sample_index)])
    )
    size = spec.image_size
    name, pattern = spec.classes[class_idx]
    canvas = np.full((size, size), 35.0)
    canvas = np.maximum(canvas, PATTERNS[pattern](size, rng))
    labels = {cls: 0 for cls in spec.class_names}
    labels[name] = 1
    caption = f"findings consistent with {name}"
    if n_classes > 1 and rng.uniform() < spec.co_occur_prob:
        other_idx = int(rng.integers(0, n_classes - 1))
        if other_idx >= class_idx:
            other_idx += 1
        other_name, other_pattern = spec.classes[other_idx]
        canvas = np.maximum(canvas, PATTERNS[other_pattern](size, rng))
        labels[other_name] = 1
        caption += f" and {other_name}"
    grain_cat = int(rng.integers(len(GRAIN_WORDS)))
    stamp_cat = int(rng.integers(len(STAMP_WORDS)))
    canvas = canvas + _render_grain(size, grain_cat) + _render_stamps(size, stamp_cat)
    caption += f" {GRAIN_WORDS[grain_cat]} {STAMP_WORDS[stamp_cat]}"
    if spec.noise_sigma > 0:
        canvas = canvas + rng.normal(0.0, spec.noise_sigma, canvas.shape)
    image = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    return image, labels, caption


def generate_dataset(spec: SyntheticSpec, out_dir) -> Manifest:
    """Render the full dataset to ``out_dir`` and write manifest.csv."""
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    try:
        image_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    classes = spec.class_names
    total = len(spec.classes) * spec.samples_per_class
    records = []
    for i in range(total):
        image, labels, caption = render_sample(spec, i)
        rel = f"images/sample_{i:05d}.pgm"
        write_pgm(out_dir / rel, image)
        records.append(SampleRecord(image_path=rel, text=caption, labels=labels))
    manifest = Manifest(records=records, classes=classes, root=out_dir)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "text"] + [f"label_{c}" for c in manifest.classes])
        for rec in manifest.records:
            writer.writerow([rec.image_path, rec.text] + [rec.labels[c] for c in manifest.classes])


def load_manifest(path) -> Manifest:
    """Parse and validate a manifest CSV.

    Label values must be 0, 1, or -1; -1 (uncertain) is stored as 0.
    Referenced images must exist on disk.
    """
    path = Path(path)
    root = path.parent
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        for col, name in ((0, "path"), (1, "text")):
            if len(header) <= col or header[col] != name:
                raise ManifestError(f"{path}: missing required column {name!r}")
        classes = []
        for col in header[2:]:
            if not col.startswith("label_"):
                raise ManifestError(f"{path}: expected a label_<class> column, got {col!r}")
            classes.append(col[len("label_") :])
        if not classes:
            raise ManifestError(f"{path}: missing required column 'label_<class>'")
        records = []
        seen = set()
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ManifestError(f"{path}: row {row_num} has {len(row)} fields, expected {len(header)}")
            rel, text = row[0], row[1]
            if rel in seen:
                raise ManifestError(f"{path}: duplicate image path {rel!r} at row {row_num}")
            seen.add(rel)
            labels = {}
            for cls, value in zip(classes, row[2:]):
                if value not in ("0", "1", "-1"):
                    raise ManifestError(
                        f"{path}: row {row_num}: label_{cls} must be 0, 1, or -1, got {value!r}"
                    )
                labels[cls] = 0 if value == "-1" else int(value)
            records.append(SampleRecord(image_path=rel, text=text, labels=labels))
    missing = [rec.image_path for rec in records if not (root / rec.image_path).is_file()]
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise ManifestError(f"{path}: {len(missing)} referenced image(s) missing: {shown}")
    return Manifest(records=records, classes=classes, root=root)


def split_manifest(manifest: Manifest, eval_fraction: float = 0.1, seed: int = 0):
    """Disjoint (train, eval) split by seeded shuffle, stable under the seed."""
    if not 0.0 <= eval_fraction < 1.0:
        raise ValueError("eval_fraction must lie in [0, 1)")
    n = len(manifest.records)
    order = np.random.default_rng(
        np.random.SeedSequence([int(seed) & _SEED_MASK, 0x5B117])
    ).permutation(n)
    n_eval = int(round(n * eval_fraction))
    eval_idx = set(order[:n_eval].tolist())
    train = [manifest.records[i] for i in range(n) if i not in eval_idx]
    evals = [manifest.records[i] for i in range(n) if i in eval_idx]
    return (
        Manifest(records=train, classes=list(manifest.classes), root=manifest.root),
        Manifest(records=evals, classes=list(manifest.classes), root=manifest.root),
    )
