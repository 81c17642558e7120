"""Synthetic dermoscopy-like images with exact lesion masks.

Each image is a skin-toned field with one lesion. The lesion region is an
ellipse whose radius is modulated by low-order harmonics; pixels inside the
region are painted with lesion opacity >= 0.5 and everything outside with
opacity < 0.5, so the returned mask is exactly the painted lesion.

Class recipes (RGB constants below):

* melanoma: dark variegated pigment, elongated and irregular border
* seborrheic keratosis: mid-tone tan with stippled texture, mildly irregular
* nevus: uniform medium brown, nearly round, smooth border
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..classification import CLASSES
from ..exceptions import ConfigurationError
from .manifest import ManifestRecord, write_manifest
from .pnm import save_image, save_mask

SKIN_LIGHT = np.array([236.0, 202.0, 182.0])
SKIN_DARK = np.array([204.0, 154.0, 124.0])
HAIR = np.array([45.0, 32.0, 26.0])

MELANOMA_BASE = np.array([70.0, 42.0, 34.0])
MELANOMA_BLUE = np.array([92.0, 88.0, 108.0])
MELANOMA_BLACK = np.array([32.0, 22.0, 20.0])
SK_BASE = np.array([170.0, 142.0, 100.0])
SK_DOT_LIGHT = np.array([214.0, 196.0, 150.0])
SK_DOT_DARK = np.array([112.0, 88.0, 62.0])
NEVUS_BASE = np.array([128.0, 78.0, 52.0])

# (semi-major range as a fraction of the shorter side, minor/major ratio range,
#  total border-harmonic amplitude)
GEOMETRY = {
    "melanoma": ((0.20, 0.32), (0.45, 0.70), 0.22),
    "seborrheic_keratosis": ((0.17, 0.28), (0.65, 0.90), 0.06),
    "nevus": ((0.14, 0.24), (0.88, 1.00), 0.0),
}


@dataclass(frozen=True)
class SyntheticConfig:
    count: int = 100
    size: tuple = (64, 64)
    class_mix: tuple = (0.3, 0.3, 0.4)
    seed: int = 0
    hair: bool = True
    color_jitter: bool = True
    fuzzy_border: bool = True

    def __post_init__(self):
        if self.count < 1:
            raise ConfigurationError("count must be at least 1")
        if len(self.size) != 2 or min(self.size) < 8:
            raise ConfigurationError(f"size must be (height, width) with sides >= 8, got {self.size}")
        if len(self.class_mix) != 3 or min(self.class_mix) < 0:
            raise ConfigurationError("class_mix needs three non-negative weights")
        if abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise ConfigurationError(f"class_mix must sum to 1, got {sum(self.class_mix)}")


@dataclass(frozen=True)
class LesionGeometry:
    center: tuple
    axes: tuple
    angle: float
    harmonics: tuple  # (order, amplitude, phase) triples


@dataclass
class SyntheticDataset:
    ids: list = field(default_factory=list)
    images: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    geometry: list = field(default_factory=list)
    manifest: list = field(default_factory=list)

    def __len__(self):
        return len(self.ids)


def allocate(count: int, mix) -> list:
    """Per-class counts by largest remainder (ties to the earlier class)."""
    exact = [count * p for p in mix]
    counts = [int(np.floor(e)) for e in exact]
    rest = count - sum(counts)
    order = sorted(range(len(mix)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    return counts


def _polar(shape, geom: LesionGeometry):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy + 0.5 - geom.center[0], xx + 0.5 - geom.center[1]
    c, s = np.cos(geom.angle), np.sin(geom.angle)
    u, v = c * dx + s * dy, -s * dx + c * dy
    a, b = geom.axes
    rho = np.hypot(u / a, v / b)
    theta = np.arctan2(v / b, u / a)
    boundary = np.ones_like(rho)
    for order, amp, phase in geom.harmonics:
        boundary += amp * np.cos(order * theta + phase)
    return rho, boundary


def lesion_region(shape, geom: LesionGeometry) -> np.ndarray:
    """Boolean lesion region implied by ``geom`` (the mask oracle)."""
    rho, boundary = _polar(shape, geom)
    return rho <= boundary


def _opacity(shape, geom, fuzzy):
    rho, boundary = _polar(shape, geom)
    inside = rho <= boundary
    if not fuzzy:
        return inside.astype(np.float64)
    width = 0.18
    depth = (boundary - rho) / width
    # inside ramps 0.55 -> 1, outside 0.45 -> 0: the 0.5 level set is the region
    alpha = np.where(inside, 0.55 + 0.45 * np.clip(depth, 0, 1), 0.45 * np.clip(1 + depth, 0, 1))
    return alpha


def _smooth_noise(rng, shape, cells=4):
    coarse = rng.random((cells + 1, cells + 1))
    h, w = shape
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    c00 = coarse[y0][:, x0]
    c01 = coarse[y0][:, x0 + 1]
    c10 = coarse[y0 + 1][:, x0]
    c11 = coarse[y0 + 1][:, x0 + 1]
    return (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
            + c10 * fy * (1 - fx) + c11 * fy * fx)


def _geometry(rng, label, shape) -> LesionGeometry:
    h, w = shape
    side = min(h, w)
    (lo, hi), (rlo, rhi), amp = GEOMETRY[label]
    a = rng.uniform(lo, hi) * side
    b = a * rng.uniform(rlo, rhi)
    cy = h / 2 + rng.uniform(-0.12, 0.12) * h
    cx = w / 2 + rng.uniform(-0.12, 0.12) * w
    angle = rng.uniform(0, np.pi)
    harmonics = []
    if amp > 0:
        orders = rng.choice(np.arange(3, 8), size=3, replace=False)
        weights = rng.dirichlet(np.ones(3))
        for k, wgt in zip(orders, weights):
            harmonics.append((int(k), float(amp * wgt), float(rng.uniform(0, 2 * np.pi))))
    return LesionGeometry((float(cy), float(cx)), (float(a), float(b)), float(angle), tuple(harmonics))


def _lesion_colors(rng, label, shape, jitter):
    h, w = shape
    shift = rng.uniform(-8, 8, 3) if jitter else np.zeros(3)
    if label == "melanoma":
        n1 = _smooth_noise(rng, shape)[..., None]
        n2 = _smooth_noise(rng, shape)[..., None]
        col = MELANOMA_BASE + (MELANOMA_BLUE - MELANOMA_BASE) * np.clip(2 * n1 - 1, 0, 1)
        col = col + (MELANOMA_BLACK - col) * np.clip(2 * n2 - 1, 0, 1)
    elif label == "seborrheic_keratosis":
        col = np.broadcast_to(SK_BASE, (h, w, 3)).copy()
        dots = rng.random((h, w))
        col[dots < 0.12] = SK_DOT_DARK
        col[dots > 0.90] = SK_DOT_LIGHT
    else:
        col = np.broadcast_to(NEVUS_BASE, (h, w, 3)).copy()
    return col + shift


def _draw_hair(rng, img, shape):
    h, w = shape
    strokes = int(rng.integers(1, 5))
    t = np.linspace(0, 1, 4 * max(h, w))
    for _ in range(strokes):
        p0, p1, p2 = (rng.uniform([0, 0], [h, w]) for _ in range(3))
        pts = ((1 - t)[:, None] ** 2 * p0 + 2 * ((1 - t) * t)[:, None] * p1
               + (t ** 2)[:, None] * p2)
        rows = np.clip(pts[:, 0].astype(int), 0, h - 1)
        cols = np.clip(pts[:, 1].astype(int), 0, w - 1)
        img[rows, cols] = HAIR


def render(rng, label, shape, cfg: SyntheticConfig):
    h, w = shape
    tone = rng.random()
    skin = SKIN_LIGHT + (SKIN_DARK - SKIN_LIGHT) * tone
    if cfg.color_jitter:
        skin = skin + rng.uniform(-8, 8, 3)
    shade = 0.94 + 0.06 * _smooth_noise(rng, shape, 2)[..., None]
    img = skin * shade + rng.normal(0, 3.0, (h, w, 3))
    geom = _geometry(rng, label, shape)
    alpha = _opacity(shape, geom, cfg.fuzzy_border)[..., None]
    lesion = _lesion_colors(rng, label, shape, cfg.color_jitter)
    img = img * (1 - alpha) + lesion * alpha
    if cfg.hair and rng.random() < 0.5:
        _draw_hair(rng, img, shape)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return img, lesion_region(shape, geom), geom


def synth_generate(cfg: SyntheticConfig, out_dir=None) -> SyntheticDataset:
    """Generate ``cfg.count`` labelled images; optionally write them to disk.

    When ``out_dir`` is given, images go to ``images/<id>.ppm``, masks to
    ``masks/<id>.pgm`` and the record list to ``manifest.csv``.
    """
    counts = allocate(cfg.count, cfg.class_mix)
    labels = [c for c, n in zip(CLASSES, counts) for _ in range(n)]
    order = np.random.default_rng((cfg.seed, 0)).permutation(cfg.count)
    labels = [labels[i] for i in order]
    ds = SyntheticDataset()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    width = len(str(cfg.count - 1))
    for i, label in enumerate(labels):
        rng = np.random.default_rng((cfg.seed, 1, i))
        img, mask, geom = render(rng, label, tuple(cfg.size), cfg)
        image_id = f"synth_{i:0{width}d}"
        ds.ids.append(image_id)
        ds.images.append(img)
        ds.masks.append(mask)
        ds.labels.append(label)
        ds.geometry.append(geom)
        if out is not None:
            ip, mp = out / "images" / f"{image_id}.ppm", out / "masks" / f"{image_id}.pgm"
            save_image(ip, img)
            save_mask(mp, mask)
            ds.manifest.append(ManifestRecord(image_id, ip, label, mp))
    if out is not None:
        write_manifest(out / "manifest.csv", ds.manifest)
    return ds
