"""Seeded image transforms and the training / validation augmentation pipelines.

Images are ``H x W x 3`` uint8 arrays. Transform semantics:

* ``posterize``: keep the top ``bits`` bits of every sample;
* ``solarize``: invert samples ``>= threshold``;
* ``sharpness``: blend with a 3x3 smoothed copy (kernel 1,1,1/1,5,1/1,1,1
  over 13, border pixels untouched); factor 1 is the identity, 0 the
  smoothed image, larger values extrapolate;
* ``equalize``: per-channel histogram equalization through the normalized
  cumulative histogram (darkest level maps to 0, brightest to 255);
* ``autocontrast``: per-channel linear stretch of [min, max] to [0, 255];
* ``blur``: separable Gaussian with odd ``kernel`` size, reflect padding;
* ``rotate``: counter-clockwise bilinear rotation about the image centre,
  exposed corners filled black;
* ``crop_pad``: centre crop then constant padding back to the input size.

Float intermediate results are rounded half-to-even and clipped to [0, 255].
Random parameters (rotation angle, blur sigma, jitter factors) come from a
counter-based generator keyed by (stream, seed, image index, step index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .data import Dataset, LabeledImage, label_of
from .errors import DatasetError, TransformError

KINDS = (
    "rotate", "blur", "posterize", "sharpness", "invert", "solarize", "equalize",
    "hflip", "vflip", "jitter", "autocontrast", "crop_pad",
)
RANDOMIZED = {"rotate", "blur", "jitter"}
TRAIN_VARIANTS = 22
VALIDATION_VARIANTS = 10
VALIDATION_SOURCES = 20
TRAIN_STREAM, VALIDATION_STREAM = 0, 1


def _as_range(value, name):
    if isinstance(value, tuple):
        lo, hi = (float(v) for v in value)
    else:
        lo = hi = float(value)
    if lo > hi:
        raise TransformError(f"{name}: empty range {lo}:{hi}")
    return lo, hi


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TransformError(f"unknown transform kind {self.kind!r}")
        _VALIDATORS.get(self.kind, _no_params)(self)

    def describe(self) -> str:
        args = []
        for key, value in self.params.items():
            if isinstance(value, tuple):
                value = f"{value[0]:g}:{value[1]:g}"
            args.append(f"{key}={value}")
        return " ".join([self.kind, *args])


def _allowed(spec, keys):
    extra = set(spec.params) - set(keys)
    if extra:
        raise TransformError(f"{spec.kind}: unexpected parameters {sorted(extra)}")


def _no_params(spec):
    _allowed(spec, ())


def _check_rotate(spec):
    _allowed(spec, ("angle",))
    _as_range(spec.params.get("angle", 0.0), "angle")


def _check_blur(spec):
    _allowed(spec, ("kernel", "sigma"))
    k = spec.params.get("kernel")
    if not isinstance(k, int) or k < 1 or k % 2 == 0:
        raise TransformError(f"blur kernel must be a positive odd integer, got {k!r}")
    lo, hi = _as_range(spec.params.get("sigma", 1.0), "sigma")
    if lo < 0.1 or hi > 5.0:
        raise TransformError(f"blur sigma must lie in [0.1, 5.0], got {lo}:{hi}")


def _check_posterize(spec):
    _allowed(spec, ("bits",))
    bits = spec.params.get("bits")
    if not isinstance(bits, int) or not 1 <= bits <= 8:
        raise TransformError(f"posterize bits must be an integer in 1..8, got {bits!r}")


def _check_sharpness(spec):
    _allowed(spec, ("factor",))
    f = spec.params.get("factor")
    if not isinstance(f, (int, float)) or f < 0:
        raise TransformError(f"sharpness factor must be >= 0, got {f!r}")


def _check_solarize(spec):
    _allowed(spec, ("threshold",))
    t = spec.params.get("threshold")
    if not isinstance(t, (int, float)) or not 0 <= t <= 256:
        raise TransformError(f"solarize threshold must be in [0, 256], got {t!r}")


def _check_jitter(spec):
    _allowed(spec, ("brightness", "contrast", "saturation", "hue"))
    for key in ("brightness", "contrast", "saturation"):
        if float(spec.params.get(key, 0.0)) < 0:
            raise TransformError(f"jitter {key} must be >= 0")
    if not 0 <= float(spec.params.get("hue", 0.0)) <= 0.5:
        raise TransformError("jitter hue must be in [0, 0.5]")


def _check_crop_pad(spec):
    _allowed(spec, ("crop", "pad", "fill"))
    crop, pad = spec.params.get("crop"), spec.params.get("pad", 0)
    if not isinstance(crop, int) or crop < 1 or not isinstance(pad, int) or pad < 0:
        raise TransformError("crop_pad needs integer crop >= 1 and pad >= 0")
    if not 0 <= spec.params.get("fill", 0) <= 255:
        raise TransformError("crop_pad fill must be in 0..255")


_VALIDATORS = {
    "rotate": _check_rotate,
    "blur": _check_blur,
    "posterize": _check_posterize,
    "sharpness": _check_sharpness,
    "solarize": _check_solarize,
    "jitter": _check_jitter,
    "crop_pad": _check_crop_pad,
}


# --- kernels --------------------------------------------------------------------

def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise TransformError(f"expected H x W x 3 uint8 image, got {img.dtype} {img.shape}")
    return img


def rotate(img: np.ndarray, angle: float, fill: int = 0) -> np.ndarray:
    h, w, _ = img.shape
    theta = np.deg2rad(angle)
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    # inverse map: output pixel -> source position
    sx = cx + cos * dx - sin * dy
    sy = cy + sin * dx + cos * dy
    padded = np.pad(img.astype(np.float64), ((1, 1), (1, 1), (0, 0)), constant_values=fill)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    wx = (sx - x0)[..., None]
    wy = (sy - y0)[..., None]
    xi = np.clip(x0.astype(np.int64) + 1, 0, w + 1)
    yi = np.clip(y0.astype(np.int64) + 1, 0, h + 1)
    xj = np.clip(x0.astype(np.int64) + 2, 0, w + 1)
    yj = np.clip(y0.astype(np.int64) + 2, 0, h + 1)
    out = ((1 - wy) * ((1 - wx) * padded[yi, xi] + wx * padded[yi, xj])
           + wy * ((1 - wx) * padded[yj, xi] + wx * padded[yj, xj]))
    return _to_u8(out)


def gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.linspace(-half, half, size)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, kernel: int, sigma: float) -> np.ndarray:
    k = gaussian_kernel1d(kernel, sigma)
    r = kernel // 2
    x = img.astype(np.float64)
    x = np.pad(x, ((r, r), (0, 0), (0, 0)), mode="reflect") if r < img.shape[0] else np.pad(x, ((r, r), (0, 0), (0, 0)), mode="symmetric")
    x = sum(k[i] * x[i:i + img.shape[0]] for i in range(kernel))
    x = np.pad(x, ((0, 0), (r, r), (0, 0)), mode="reflect") if r < img.shape[1] else np.pad(x, ((0, 0), (r, r), (0, 0)), mode="symmetric")
    x = sum(k[i] * x[:, i:i + img.shape[1]] for i in range(kernel))
    return _to_u8(x)


def posterize(img: np.ndarray, bits: int) -> np.ndarray:
    mask = np.uint8((0xFF << (8 - bits)) & 0xFF)
    return img & mask


def solarize(img: np.ndarray, threshold: float) -> np.ndarray:
    return np.where(img >= threshold, 255 - img, img).astype(np.uint8)


def invert(img: np.ndarray) -> np.ndarray:
    return 255 - img


def sharpness(img: np.ndarray, factor: float) -> np.ndarray:
    if factor == 1:
        return img.copy()
    h, w, _ = img.shape
    x = img.astype(np.float64)
    degenerate = x.copy()
    if h > 2 and w > 2:
        acc = np.zeros((h - 2, w - 2, 3))
        for i in range(3):
            for j in range(3):
                acc += (5.0 if (i, j) == (1, 1) else 1.0) * x[i:i + h - 2, j:j + w - 2]
        degenerate[1:-1, 1:-1] = np.rint(acc / 13.0)
    return _to_u8(factor * x + (1.0 - factor) * degenerate)


def equalize(img: np.ndarray) -> np.ndarray:
    """Per-channel ``round((cdf(v) - cdf_min) * 255 / (N - cdf_min))``; constant channels are kept."""
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        ch = img[..., c]
        cdf = np.cumsum(np.bincount(ch.ravel(), minlength=256))
        total = int(cdf[-1])
        cdf_min = int(cdf[ch.min()])
        if total == cdf_min:
            out[..., c] = ch
            continue
        lut = np.clip(np.rint((cdf - cdf_min) * 255.0 / (total - cdf_min)), 0, 255).astype(np.uint8)
        out[..., c] = lut[ch]
    return out


def autocontrast(img: np.ndarray) -> np.ndarray:
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        ch = img[..., c].astype(np.float64)
        lo, hi = ch.min(), ch.max()
        out[..., c] = img[..., c] if hi == lo else _to_u8((ch - lo) * 255.0 / (hi - lo))
    return out


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[:, ::-1])


def vflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[::-1])


def crop_pad(img: np.ndarray, crop: int, pad: int, fill: int = 0) -> np.ndarray:
    """Centre-crop then pad; sizes are relative to a ``crop + 2 * pad`` side and rescaled to the image."""
    h, w, _ = img.shape
    ref = crop + 2 * pad
    ch = max(1, int(round(crop * h / ref)))
    cw = max(1, int(round(crop * w / ref)))
    top, left = (h - ch) // 2, (w - cw) // 2
    out = np.full_like(img, fill)
    out[top:top + ch, left:left + cw] = img[top:top + ch, left:left + cw]
    return out


def _gray(x: np.ndarray) -> np.ndarray:
    return 0.299 * x[..., 0] + 0.587 * x[..., 1] + 0.114 * x[..., 2]


def _rgb_to_hsv(x):
    mx, mn = x.max(axis=-1), x.min(axis=-1)
    delta = mx - mn
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1), 0)
    safe = np.where(delta > 0, delta, 1)
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    h = np.where(mx == r, (g - b) / safe, np.where(mx == g, 2 + (b - r) / safe, 4 + (r - g) / safe))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return h, s, mx


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6).astype(int) % 6
    f = h * 6 - np.floor(h * 6)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = np.zeros(h.shape + (3,))
    for k, (r, g, b) in enumerate(choices):
        m = i == k
        out[m] = np.stack([r[m], g[m], b[m]], axis=-1)
    return out


def jitter(img: np.ndarray, brightness: float = 1.0, contrast: float = 1.0,
           saturation: float = 1.0, hue: float = 0.0) -> np.ndarray:
    """Colour jitter with explicit factors; all-neutral factors return the input unchanged."""
    if brightness == 1 and contrast == 1 and saturation == 1 and hue == 0:
        return img.copy()
    x = img.astype(np.float64)
    if brightness != 1:
        x = np.clip(x * brightness, 0, 255)
    if contrast != 1:
        x = np.clip(contrast * x + (1 - contrast) * _gray(x).mean(), 0, 255)
    if saturation != 1:
        x = np.clip(saturation * x + (1 - saturation) * _gray(x)[..., None], 0, 255)
    if hue != 0:
        h, s, v = _rgb_to_hsv(x / 255.0)
        x = _hsv_to_rgb((h + hue) % 1.0, s, v) * 255.0
    return _to_u8(x)


def _draw(value, rng, name):
    lo, hi = _as_range(value, name)
    if lo == hi:
        return lo
    if rng is None:
        raise TransformError(f"{name} range {lo}:{hi} needs a random generator")
    return float(rng.uniform(lo, hi))


def apply_transform(img: np.ndarray, spec: TransformSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply one transform; ``rng`` is only consumed by randomized kinds."""
    img = check_image(img)
    p = spec.params
    kind = spec.kind
    if kind == "rotate":
        return rotate(img, _draw(p.get("angle", 0.0), rng, "angle"))
    if kind == "blur":
        return gaussian_blur(img, p["kernel"], _draw(p.get("sigma", 1.0), rng, "sigma"))
    if kind == "posterize":
        return posterize(img, p["bits"])
    if kind == "sharpness":
        return sharpness(img, float(p["factor"]))
    if kind == "invert":
        return invert(img)
    if kind == "solarize":
        return solarize(img, p["threshold"])
    if kind == "equalize":
        return equalize(img)
    if kind == "hflip":
        return hflip(img)
    if kind == "vflip":
        return vflip(img)
    if kind == "autocontrast":
        return autocontrast(img)
    if kind == "crop_pad":
        return crop_pad(img, p["crop"], p.get("pad", 0), p.get("fill", 0))
    if kind == "jitter":
        factors = {}
        for key in ("brightness", "contrast", "saturation"):
            r = float(p.get(key, 0.0))
            factors[key] = 1.0 if r == 0 else _draw((max(0.0, 1 - r), 1 + r), rng, key)
        hr = float(p.get("hue", 0.0))
        factors["hue"] = 0.0 if hr == 0 else _draw((-hr, hr), rng, "hue")
        return jitter(img, **factors)
    raise TransformError(f"unknown transform kind {kind!r}")  # pragma: no cover


def apply_chain(img: np.ndarray, chain, rng=None) -> np.ndarray:
    for spec in chain:
        img = apply_transform(img, spec, rng)
    return img


def step_rng(stream: int, seed: int, image_index: int, step_index: int) -> np.random.Generator:
    """Counter-based generator for one (image, step) pair, independent of visit order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([stream, seed, image_index, step_index])))


# --- pipelines --------------------------------------------------------------------

def _parse_value(text: str):
    if ":" in text:
        lo, hi = text.split(":", 1)
        return (float(lo), float(hi))
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            raise TransformError(f"cannot parse parameter value {text!r}") from None


def _parse_transform(text: str) -> TransformSpec:
    tokens = text.split()
    if not tokens:
        raise TransformError("empty transform in pipeline line")
    params = {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise TransformError(f"expected key=value, got {tok!r}")
        key, value = tok.split("=", 1)
        params[key] = _parse_value(value)
    return TransformSpec(tokens[0], params)


@dataclass(frozen=True)
class Pipeline:
    """Ordered ``(count, chain)`` entries; each chain is applied ``count`` times per image."""

    entries: tuple[tuple[int, tuple[TransformSpec, ...]], ...]
    name: str = "custom"

    @property
    def total(self) -> int:
        return sum(count for count, _ in self.entries)

    def steps(self) -> list[tuple[TransformSpec, ...]]:
        return [chain for count, chain in self.entries for _ in range(count)]

    def describe(self) -> list[str]:
        return [" + ".join(s.describe() for s in chain) for chain in self.steps()]


def parse_pipeline(text: str, name: str = "custom", expected_total: int | None = None) -> Pipeline:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        try:
            count = int(head)
        except ValueError:
            raise TransformError(f"{name}:{lineno}: line must start with a transform count") from None
        if count < 1:
            raise TransformError(f"{name}:{lineno}: count must be >= 1")
        chain = tuple(_parse_transform(part) for part in rest.split("+"))
        entries.append((count, chain))
    pipe = Pipeline(tuple(entries), name)
    if expected_total is not None and pipe.total != expected_total:
        raise TransformError(f"pipeline {name} has {pipe.total} transforms, expected {expected_total}")
    return pipe


def builtin_pipeline(name: str) -> Pipeline:
    """``train`` (22 transforms) or ``val1``..``val4`` (10 transforms each)."""
    if name == "train":
        expected = TRAIN_VARIANTS
    elif name in ("val1", "val2", "val3", "val4"):
        expected = VALIDATION_VARIANTS
    else:
        raise TransformError(f"unknown builtin pipeline {name!r}")
    text = resources.files("vialnet").joinpath("pipelines").joinpath(f"{name}.txt").read_text()
    return parse_pipeline(text, name, expected)


def validation_pipeline(set_id: int) -> Pipeline:
    if set_id not in (1, 2, 3, 4):
        raise TransformError(f"validation set id must be 1..4, got {set_id}")
    return builtin_pipeline(f"val{set_id}")


def _variants(item: LabeledImage, source: int, pipeline: Pipeline, stream: int, seed: int):
    for t, chain in enumerate(pipeline.steps()):
        rng = step_rng(stream, seed, source, t)
        img = apply_chain(item.image, chain, rng)
        tag = " + ".join(s.describe() for s in chain)
        yield LabeledImage(img, item.fill, item.size, source=source, tag=tag)


def build_training_set(originals, seed: int = 0, pipeline: Pipeline | None = None) -> Dataset:
    """Each original followed by its pipeline variants: ``(1 + 22) * N`` items by default."""
    items = list(originals.items if isinstance(originals, Dataset) else originals)
    scenario = originals.scenario if isinstance(originals, Dataset) else 4
    pipeline = pipeline or builtin_pipeline("train")
    out = []
    for i, item in enumerate(items):
        out.append(LabeledImage(item.image, item.fill, item.size, source=i, tag="original"))
        out.extend(_variants(item, i, pipeline, TRAIN_STREAM, seed))
    return Dataset(out, scenario)


def select_sources(originals, n_output_labels: int, seed: int, n_sources: int = VALIDATION_SOURCES,
                   set_id: int = 0) -> list[int]:
    """Pick ``n_sources / n_output_labels`` originals per class, grouped by class."""
    items = list(originals.items if isinstance(originals, Dataset) else originals)
    if n_sources % n_output_labels:
        raise DatasetError(f"{n_sources} sources cannot be split evenly over {n_output_labels} classes")
    per_class = n_sources // n_output_labels
    labels = [label_of(it, n_output_labels) for it in items]
    rng = np.random.default_rng([VALIDATION_STREAM, seed, set_id])
    chosen = []
    for c in range(n_output_labels):
        pool = [i for i, lab in enumerate(labels) if lab == c]
        if len(pool) < per_class:
            raise DatasetError(f"class {c} has {len(pool)} originals, need {per_class}")
        picks = rng.choice(len(pool), size=per_class, replace=False)
        chosen.extend(pool[j] for j in picks)
    return chosen


def build_validation_set(originals, set_id: int, n_output_labels: int, seed: int = 0,
                         n_sources: int = VALIDATION_SOURCES, pipeline: Pipeline | None = None) -> Dataset:
    """Class-uniform validation set: ``n_sources`` originals x 10 variants (200 by default)."""
    pipeline = pipeline or validation_pipeline(set_id)
    items = list(originals.items if isinstance(originals, Dataset) else originals)
    chosen = select_sources(items, n_output_labels, seed, n_sources, set_id)
    out = []
    for src in chosen:
        out.extend(_variants(items[src], src, pipeline, VALIDATION_STREAM * 10 + set_id, seed))
    return Dataset(out, n_output_labels)
