"""Samples, manifests, palettes and the synthetic shapes generator."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pnm
from .errors import ConfigError, DataError
from .metrics import VOID
from .model import pad_to_multiple

BACKGROUND, RECTANGLE, DISK, POLE = 0, 1, 2, 3
SYNTH_CLASSES = ["background", "rectangle", "disk", "pole"]


@dataclass
class Sample:
    image: np.ndarray  # (1, C, H, W), values in [0, 1]
    labels: np.ndarray  # (H, W) uint8, VOID marks unlabeled pixels
    id: str
    orig_shape: tuple | None = None  # (H, W) before ingestion padding

    def __post_init__(self):
        if self.image.ndim != 4 or self.image.shape[0] != 1:
            raise DataError(f"sample {self.id}: image must be (1, C, H, W), got {self.image.shape}")
        if self.labels.shape != self.image.shape[2:]:
            raise DataError(
                f"sample {self.id}: label dims {self.labels.shape} != image dims {self.image.shape[2:]}"
            )
        if self.orig_shape is None:
            self.orig_shape = tuple(self.labels.shape)


def stack(samples):
    """Batch a list of samples into ``(n, C, H, W)`` images and ``(n, H, W)`` labels."""
    return (np.concatenate([s.image for s in samples], axis=0),
            np.stack([s.labels for s in samples], axis=0))


def pad_sample(sample: Sample, multiple: int) -> Sample:
    """Reflection-pad the image bottom/right; the padded label band is void."""
    h, w = sample.labels.shape
    img = pad_to_multiple(sample.image, multiple)
    lab = np.full(img.shape[2:], VOID, dtype=np.uint8)
    lab[:h, :w] = sample.labels
    return Sample(img, lab, sample.id, sample.orig_shape)


# -- palette -----------------------------------------------------------------

@dataclass
class Palette:
    names: list
    colors: np.ndarray  # (K, 3) uint8

    def __post_init__(self):
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len({tuple(c) for c in self.colors}) != len(self.colors):
            raise ConfigError("palette colours must be distinct")

    @classmethod
    def default(cls, num_classes):
        if num_classes == len(SYNTH_CLASSES):
            colors = [(128, 128, 128), (220, 40, 40), (40, 200, 60), (60, 80, 230)]
            return cls(list(SYNTH_CLASSES), colors)
        rng = np.random.default_rng(1234)
        colors = []
        while len(colors) < num_classes:
            c = tuple(int(v) for v in rng.integers(32, 256, 3))
            if c not in colors:
                colors.append(c)
        return cls([f"class{i}" for i in range(num_classes)], colors)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        keys = sorted(raw, key=int)
        if [int(k) for k in keys] != list(range(len(keys))):
            raise ConfigError(f"palette keys must be 0..K-1, got {keys}")
        return cls([raw[k]["name"] for k in keys], [raw[k]["rgb"] for k in keys])

    def to_json(self):
        return json.dumps(
            {str(i): {"name": n, "rgb": [int(v) for v in c]}
             for i, (n, c) in enumerate(zip(self.names, self.colors))},
            indent=2,
        ) + "\n"

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def render_labels(labels, palette: Palette) -> np.ndarray:
    """Colour a label map; void (and anything outside the palette) is black."""
    labels = np.asarray(labels)
    rgb = np.zeros(labels.shape + (3,), dtype=np.uint8)
    known = labels < len(palette.colors)
    rgb[known] = palette.colors[labels[known]]
    return rgb


def image_to_uint8(image):
    """``(1, C, H, W)`` or ``(C, H, W)`` in [0, 1] -> ``(H, W, 3)`` bytes (first 3 channels)."""
    img = np.asarray(image)
    if img.ndim == 4:
        img = img[0]
    img = img[:3] if img.shape[0] >= 3 else np.repeat(img[:1], 3, axis=0)
    return np.clip(np.rint(img.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)


# -- manifest / loading --------------------------------------------------------

def read_manifest(path):
    """Lines of ``image<TAB>label[<TAB>depth]``; blank lines and ``#`` comments skipped."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise DataError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields, got {len(parts)}")
        entries.append(parts)
    return entries


class DatasetError(DataError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__(f"{len(self.errors)} invalid file(s):\n  " + "\n  ".join(self.errors))


def load_dataset(manifest, image_dir=None, label_dir=None, num_classes=None, multiple=1):
    """Load every manifest entry; relative paths resolve against ``image_dir`` /
    ``label_dir`` (default: the manifest's directory). Samples are padded to
    ``multiple`` with reflection, the pad labelled void. All file problems are
    collected and raised together."""
    manifest = Path(manifest)
    base = manifest.parent
    image_dir = Path(image_dir) if image_dir is not None else base
    label_dir = Path(label_dir) if label_dir is not None else base
    samples, errors = [], []
    for parts in read_manifest(manifest):
        img_path = image_dir / parts[0]
        lab_path = label_dir / parts[1]
        try:
            img = pnm.read(img_path)
            lab = pnm.read(lab_path)
            if lab.ndim != 2:
                raise DataError("label map must be a P5 (grey) image")
            chans = [img.astype(np.float64) / 255.0]
            if img.ndim == 2:
                chans = [chans[0][..., None]]
            if len(parts) == 3:
                depth = pnm.read(image_dir / parts[2])
                if depth.ndim != 2:
                    raise DataError("depth map must be a P5 (grey) image")
                if depth.shape != img.shape[:2]:
                    raise DataError(f"depth dims {depth.shape} != image dims {img.shape[:2]}")
                scale = 65535.0 if depth.dtype == np.uint16 else 255.0
                chans.append(depth.astype(np.float64)[..., None] / scale)
            if lab.shape != img.shape[:2]:
                raise DataError(f"label dims {lab.shape} != image dims {img.shape[:2]}")
            if num_classes is not None:
                bad = (lab != VOID) & (lab >= num_classes)
                if bad.any():
                    y, x = (int(v) for v in np.argwhere(bad)[0])
                    raise DataError(
                        f"label {int(lab[y, x])} at (y {y}, x {x}) outside 0..{num_classes - 1}"
                    )
        except (OSError, DataError) as exc:
            errors.append(f"{img_path} / {lab_path}: {exc}")
            continue
        image = np.concatenate(chans, axis=-1).transpose(2, 0, 1)[None]
        sample = Sample(np.ascontiguousarray(image), lab.astype(np.uint8), Path(parts[0]).stem)
        samples.append(pad_sample(sample, multiple) if multiple > 1 else sample)
    if errors:
        raise DatasetError(errors)
    return samples


def write_dataset(samples, out_dir, manifest_name="manifest.txt"):
    """Write images as P6, labels as P5, plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        ipath = f"images/{s.id}.ppm"
        lpath = f"labels/{s.id}.pgm"
        pnm.write(out_dir / ipath, image_to_uint8(s.image))
        pnm.write(out_dir / lpath, s.labels)
        lines.append(f"{ipath}\t{lpath}")
    path = out_dir / manifest_name
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def dataset_hash(manifest):
    """Content hash over every file a manifest references, in manifest order."""
    manifest = Path(manifest)
    h = hashlib.sha256()
    for parts in read_manifest(manifest):
        for p in parts:
            data = (manifest.parent / p).read_bytes()
            h.update(len(data).to_bytes(8, "little"))
            h.update(data)
    return h.hexdigest()


# -- synthetic shapes --------------------------------------------------------

@dataclass
class SynthConfig:
    size: int = 64
    num_train: int = 80
    num_test: int = 20
    shapes: tuple = (2, 5)  # inclusive range of rectangles+disks per image
    poles: tuple = (1, 3)
    pole_width: tuple = (1, 2)
    noise_sigma: float = 0.03
    gradient: float = 0.5  # peak-to-peak illumination ramp amplitude
    tint: tuple = (1.0, 1.0, 1.0)  # per-channel illuminant gain
    pole_color: tuple = (0.25, 0.3, 0.75)
    seed: int = 0

    def __post_init__(self):
        self.shapes = tuple(self.shapes)
        self.poles = tuple(self.poles)
        self.pole_width = tuple(self.pole_width)
        self.tint = tuple(self.tint)
        self.pole_color = tuple(self.pole_color)

    def validate(self):
        if self.size < 8 or self.num_train < 0 or self.num_test < 0:
            raise ConfigError(f"invalid synth sizes: {self}")
        for name in ("shapes", "poles", "pole_width"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigError(f"synth {name} range {(lo, hi)} is invalid")
        if self.pole_width[0] < 1:
            raise ConfigError("poles must be at least one pixel wide")
        if self.noise_sigma < 0 or self.gradient < 0:
            raise ConfigError("noise_sigma and gradient must be non-negative")


BASE_COLORS = {
    RECTANGLE: (0.80, 0.30, 0.25),
    DISK: (0.30, 0.70, 0.35),
}


@dataclass
class Shape:
    kind: int
    params: tuple  # rectangle/pole: (y0, x0, y1, x1); disk: (cy, cx, r)
    color: tuple = field(default=(0.0, 0.0, 0.0))

    def contains(self, yy, xx):
        """Point membership at continuous coordinates (pixel centres are i + 0.5)."""
        if self.kind == DISK:
            cy, cx, r = self.params
            return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        y0, x0, y1, x1 = self.params
        return (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)


def geometry_labels(shapes, size):
    """Label map from shape geometry alone: painter's order, pixel-centre test."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    lab = np.full((size, size), BACKGROUND, dtype=np.uint8)
    for s in shapes:
        lab[s.contains(yy, xx)] = s.kind
    return lab


def _coverage(shape, size, ss=4):
    # anti-aliasing by ss x ss supersampling
    off = (np.arange(ss) + 0.5) / ss
    yy = (np.arange(size)[:, None] + off[None, :]).ravel()
    Y, X = np.meshgrid(yy, yy, indexing="ij")
    inside = shape.contains(Y, X).astype(np.float64)
    return inside.reshape(size, ss, size, ss).mean(axis=(1, 3))


def _random_shapes(rng, cfg):
    n = cfg.size
    shapes = []
    for _ in range(int(rng.integers(cfg.shapes[0], cfg.shapes[1] + 1))):
        kind = RECTANGLE if rng.random() < 0.5 else DISK
        jitter = rng.uniform(-0.08, 0.08, 3)
        color = tuple(np.clip(np.array(BASE_COLORS[kind]) + jitter, 0, 1))
        if kind == RECTANGLE:
            hgt, wid = rng.uniform(0.15 * n, 0.4 * n, 2)
            y0, x0 = rng.uniform(0, n - hgt), rng.uniform(0, n - wid)
            shapes.append(Shape(kind, (y0, x0, y0 + hgt, x0 + wid), color))
        else:
            r = rng.uniform(0.08 * n, 0.2 * n)
            cy, cx = rng.uniform(r, n - r, 2)
            shapes.append(Shape(kind, (cy, cx, r), color))
    for _ in range(int(rng.integers(cfg.poles[0], cfg.poles[1] + 1))):
        wid = int(rng.integers(cfg.pole_width[0], cfg.pole_width[1] + 1))
        hgt = rng.uniform(0.4 * n, 0.9 * n)
        x0 = float(rng.integers(0, n - wid + 1))
        y0 = rng.uniform(0, n - hgt)
        jitter = rng.uniform(-0.05, 0.05, 3)
        color = tuple(np.clip(np.array(cfg.pole_color) + jitter, 0, 1))
        shapes.append(Shape(POLE, (y0, x0, y0 + hgt, x0 + wid), color))
    return shapes


def synth_sample(rng, cfg: SynthConfig, sample_id):
    n = cfg.size
    shapes = _random_shapes(rng, cfg)
    base = np.clip(np.array([0.5, 0.5, 0.5]) + rng.uniform(-0.1, 0.1, 3), 0, 1)
    albedo = np.broadcast_to(base[:, None, None], (3, n, n)).copy()
    for s in shapes:
        a = _coverage(s, n)
        albedo = albedo * (1 - a) + np.asarray(s.color)[:, None, None] * a
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = (np.mgrid[0:n, 0:n] + 0.5) / n - 0.5
    ramp = np.cos(theta) * xx + np.sin(theta) * yy  # in [-0.71, 0.71]
    light = 1.0 + cfg.gradient * ramp / np.sqrt(2.0)
    img = albedo * light[None] * np.asarray(cfg.tint)[:, None, None]
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
    img = np.clip(img, 0.0, 1.0)
    return Sample(img[None], geometry_labels(shapes, n), sample_id), shapes


def synth_generate(cfg: SynthConfig, with_shapes=False):
    """Deterministic ``(train, test)`` split of synthetic samples."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    out, geo = [], []
    for i in range(cfg.num_train + cfg.num_test):
        split = "train" if i < cfg.num_train else "test"
        s, shapes = synth_sample(rng, cfg, f"{split}{i:04d}")
        out.append(s)
        geo.append(shapes)
    train, test = out[:cfg.num_train], out[cfg.num_train:]
    if with_shapes:
        return train, test, geo
    return train, test
