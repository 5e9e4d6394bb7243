"""Labeled vial images, stratified splitting, k-fold plans, synthetic data and manifests."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .raster import load_raster, save_raster

FILLED, EMPTY = "filled", "empty"
LARGE, SMALL = "large", "small"
FILLS = (FILLED, EMPTY)
SIZES = (LARGE, SMALL)

# 4-label order follows the acquisition enumeration: large-filled, large-empty, small-filled, small-empty
FOUR_LABELS = ((FILLED, LARGE), (EMPTY, LARGE), (FILLED, SMALL), (EMPTY, SMALL))
CLASS_NAMES = {
    2: ("filled", "empty"),
    4: ("large-filled", "large-empty", "small-filled", "small-empty"),
}
MIN_SYNTH_RESOLUTION = 32


@dataclass
class LabeledImage:
    image: np.ndarray  # H x W x 3 uint8
    fill: str
    size: str
    source: int | None = None  # index of the original an augmented item derives from
    tag: str = "original"

    def __post_init__(self):
        if self.fill not in FILLS:
            raise DatasetError(f"fill must be one of {FILLS}, got {self.fill!r}")
        if self.size not in SIZES:
            raise DatasetError(f"size must be one of {SIZES}, got {self.size!r}")


def label_of(item: LabeledImage, scenario: int) -> int:
    """Class index of ``item``: 2-label is filled=0/empty=1, 4-label follows ``FOUR_LABELS``."""
    if scenario == 2:
        return FILLS.index(item.fill)
    if scenario == 4:
        return FOUR_LABELS.index((item.fill, item.size))
    raise DatasetError(f"scenario must be 2 or 4, got {scenario}")


def attributes_of(label: int, scenario: int) -> tuple[str, str]:
    """Inverse of :func:`label_of` (size is ``large`` for 2-label)."""
    if scenario == 2:
        return FILLS[label], LARGE
    return FOUR_LABELS[label]


@dataclass
class Dataset:
    items: list[LabeledImage]
    scenario: int = 4

    def __len__(self) -> int:
        return len(self.items)

    def labels(self, scenario: int | None = None) -> np.ndarray:
        sc = scenario or self.scenario
        return np.array([label_of(it, sc) for it in self.items], dtype=np.int64)

    def class_counts(self, scenario: int | None = None) -> dict[int, int]:
        sc = scenario or self.scenario
        counts = {c: 0 for c in range(sc)}
        for lab in self.labels(sc):
            counts[int(lab)] += 1
        return counts

    def images(self) -> np.ndarray:
        return np.stack([it.image for it in self.items])

    def inputs(self, dtype=np.float32) -> np.ndarray:
        """Images as ``N x H x W x 3`` floats in [0, 1]."""
        return self.images().astype(dtype) / dtype(255)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.items[i] for i in indices], self.scenario)

    def with_scenario(self, scenario: int) -> "Dataset":
        if scenario not in (2, 4):
            raise DatasetError(f"scenario must be 2 or 4, got {scenario}")
        return Dataset(self.items, scenario)


@dataclass
class FoldPlan:
    k: int
    folds: list[np.ndarray]

    @property
    def n(self) -> int:
        return sum(len(f) for f in self.folds)

    def validation_indices(self, i: int) -> np.ndarray:
        return self.folds[i]

    def train_indices(self, i: int) -> np.ndarray:
        return np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != i]))


def _apportion(counts: list[int], fraction: float) -> list[int]:
    """Largest-remainder allocation of ``round(fraction * total)`` over classes."""
    total = sum(counts)
    target = int(math.floor(fraction * total + 0.5))
    quotas = [fraction * c for c in counts]
    alloc = [int(math.floor(q)) for q in quotas]
    order = sorted(range(len(counts)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[: max(0, target - sum(alloc))]:
        alloc[i] += 1
    # every class keeps at least one member on each side
    return [min(max(a, 1), c - 1) for a, c in zip(alloc, counts)]


def split_indices(labels, test_fraction: float = 0.15, seed: int = 0, groups=None):
    """Stratified train/test split of positions ``0..n-1``.

    With ``groups`` (one id per item, e.g. the augmentation source) whole
    groups are assigned to one side so variants of one original never
    straddle train and test.
    """
    if not 0 < test_fraction < 1:
        raise DatasetError(f"test fraction must be in (0, 1), got {test_fraction}")
    labels = np.asarray(labels)
    if groups is None:
        groups = np.arange(len(labels))
    groups = np.asarray(groups)
    unit_label = {}
    members = defaultdict(list)
    for i, (g, lab) in enumerate(zip(groups.tolist(), labels.tolist())):
        if unit_label.setdefault(g, lab) != lab:
            raise DatasetError(f"group {g} mixes labels")
        members[g].append(i)
    classes = sorted(set(unit_label.values()))
    per_class = {c: sorted(g for g, lab in unit_label.items() if lab == c) for c in classes}
    for c, units in per_class.items():
        if len(units) < 2:
            raise DatasetError(f"class {c} has fewer than 2 members; cannot stratify")
    alloc = _apportion([len(per_class[c]) for c in classes], test_fraction)
    rng = np.random.default_rng(seed)
    test = []
    for c, n_test in zip(classes, alloc):
        units = per_class[c]
        chosen = rng.permutation(len(units))[:n_test]
        for u in chosen:
            test.extend(members[units[u]])
    test = np.array(sorted(test), dtype=np.int64)
    train = np.setdiff1d(np.arange(len(labels)), test)
    return train, test


def split(dataset: Dataset, test_fraction: float = 0.15, seed: int = 0, group_by_source: bool = False):
    """Stratified (train, test) datasets; see :func:`split_indices`."""
    groups = None
    if group_by_source:
        groups = [it.source if it.source is not None else f"item{i}" for i, it in enumerate(dataset.items)]
        groups = np.array([str(g) for g in groups])
    train, test = split_indices(dataset.labels(), test_fraction, seed, groups)
    return dataset.subset(train), dataset.subset(test)


def kfold(n: int, k: int, seed: int | None = None) -> FoldPlan:
    """Partition ``0..n-1`` into ``k`` disjoint folds whose sizes differ by at most one.

    The first ``n % k`` folds carry the extra item. Without a seed folds are
    contiguous blocks; with one the positions are shuffled first.
    """
    if isinstance(n, Dataset):
        n = len(n)
    if k < 2:
        raise DatasetError(f"k must be >= 2, got {k}")
    if k > n:
        raise DatasetError(f"k={k} exceeds number of items {n}")
    order = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds, pos = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(np.sort(order[pos:pos + size]))
        pos += size
    return FoldPlan(k, folds)


# --- synthetic vial imagery -------------------------------------------------

@dataclass
class VialScene:
    """Per-image draw for the synthetic renderer (fractions of the image side)."""

    cx: float
    cy: float
    ring_radius: float
    ring_width: float
    ring_level: float
    floor_level: float
    background: float
    gradient: tuple[float, float]
    gain: float
    tint: tuple[float, float, float]
    drop_dx: float
    drop_dy: float
    drop_radius: float
    drop_level: float
    noise_seed: int
    distractor: bool = False


def draw_scene(rng: np.random.Generator, large: bool, distractor: bool = False) -> VialScene:
    base_radius = 0.40 if large else 0.25
    radius = base_radius * rng.uniform(0.97, 1.03)
    background = rng.uniform(27, 33)
    angle = rng.uniform(0, 2 * np.pi)
    offset = rng.uniform(0, 0.25) * radius * 0.5
    return VialScene(
        cx=0.5 + rng.uniform(-0.02, 0.02),
        cy=0.5 + rng.uniform(-0.02, 0.02),
        ring_radius=radius,
        ring_width=rng.uniform(0.035, 0.045),
        ring_level=rng.uniform(180, 200),
        floor_level=background + rng.uniform(6, 12),
        background=background,
        gradient=(rng.uniform(-15, 15), rng.uniform(-15, 15)),
        gain=rng.uniform(0.9, 1.1),
        tint=(1.0, rng.uniform(0.96, 1.0), rng.uniform(0.92, 0.98)),
        drop_dx=offset * np.cos(angle),
        drop_dy=offset * np.sin(angle),
        drop_radius=radius * rng.uniform(0.40, 0.50),
        drop_level=rng.uniform(60, 80),
        noise_seed=int(rng.integers(2**32)),
        distractor=distractor,
    )


def droplet_mask(scene: VialScene, resolution: int) -> np.ndarray:
    yy, xx = (np.mgrid[0:resolution, 0:resolution] + 0.5) / resolution
    d = np.hypot(xx - scene.cx - scene.drop_dx, yy - scene.cy - scene.drop_dy)
    return d < scene.drop_radius


def render_scene(scene: VialScene, resolution: int, filled: bool) -> np.ndarray:
    """Rasterize a top view: dark field, bright tube rim, droplet blob when filled."""
    yy, xx = (np.mgrid[0:resolution, 0:resolution] + 0.5) / resolution
    img = scene.background + scene.gradient[0] * (xx - 0.5) + scene.gradient[1] * (yy - 0.5)
    r = np.hypot(xx - scene.cx, yy - scene.cy)
    inside = r < scene.ring_radius - scene.ring_width / 2
    img = np.where(inside, scene.floor_level, img)
    rim = np.exp(-0.5 * ((r - scene.ring_radius) / (scene.ring_width / 2.5)) ** 2)
    img = img + scene.ring_level * rim
    if scene.distractor:
        rd = np.hypot(xx - 0.5, yy - 0.93)
        img = np.where(rd < 0.06, 230.0, img)
    if filled:
        d = np.hypot(xx - scene.cx - scene.drop_dx, yy - scene.cy - scene.drop_dy)
        inside_drop = d < scene.drop_radius
        profile = np.sqrt(np.clip(1 - (d / scene.drop_radius) ** 2, 0, 1))
        img = img + np.where(inside_drop, scene.drop_level * (0.6 + 0.4 * profile), 0.0)
    img = img * scene.gain
    rgb = img[..., None] * np.asarray(scene.tint)
    noise = np.random.default_rng(scene.noise_seed).normal(0, 3.0, rgb.shape)
    return np.clip(np.rint(rgb + noise), 0, 255).astype(np.uint8)


def synth_generate(n_per_class: int, resolution: int = 64, seed: int = 0, distractor: bool = False) -> Dataset:
    """Balanced 4-class synthetic dataset; item ``i`` belongs to class ``i % 4``."""
    if n_per_class < 1:
        raise DatasetError("n_per_class must be >= 1")
    if resolution < MIN_SYNTH_RESOLUTION:
        raise DatasetError(f"resolution must be >= {MIN_SYNTH_RESOLUTION}, got {resolution}")
    items = []
    for i in range(n_per_class * len(FOUR_LABELS)):
        fill, size = FOUR_LABELS[i % len(FOUR_LABELS)]
        rng = np.random.default_rng([seed, i])
        scene = draw_scene(rng, large=size == LARGE, distractor=distractor)
        img = render_scene(scene, resolution, filled=fill == FILLED)
        items.append(LabeledImage(img, fill, size, source=i, tag="synthetic"))
    return Dataset(items, scenario=4)


# --- manifests ----------------------------------------------------------------

def read_manifest(path, scenario: int = 4) -> Dataset:
    """Load ``path,fill,size[,source]`` lines; image paths are relative to the manifest.

    Without a source column every line is its own source.
    """
    path = Path(path)
    base = path.parent
    items = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (3, 4):
            raise DatasetError(f"{path}:{lineno}: expected path,fill,size[,source]")
        img_path, fill, size = parts[:3]
        source = len(items)
        if len(parts) == 4:
            try:
                source = int(parts[3])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: source must be an integer") from None
        item = LabeledImage(load_raster(base / img_path), fill, size, source=source)
        item.tag = img_path
        items.append(item)
    return Dataset(items, scenario)


def _manifest_line(path, item: LabeledImage) -> str:
    line = f"{path},{item.fill},{item.size}"
    return line if item.source is None else f"{line},{item.source}"


def write_dataset(dataset: Dataset, out_dir, manifest_name: str = "manifest.csv",
                  image_dir: str = "images", prefix: str = "img") -> Path:
    """Write every item as PNG plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / image_dir).mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(len(dataset))))
    lines = []
    for i, item in enumerate(dataset.items):
        rel = f"{image_dir}/{prefix}_{i:0{width}d}.png"
        save_raster(item.image, out_dir / rel)
        lines.append(_manifest_line(rel, item))
    manifest = out_dir / manifest_name
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def write_manifest_lines(paths, items, manifest_path) -> None:
    lines = [_manifest_line(p, it) for p, it in zip(paths, items)]
    Path(manifest_path).write_text("\n".join(lines) + "\n")

