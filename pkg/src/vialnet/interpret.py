"""Saliency maps, Integrated Gradients and heatmap rendering.

Both methods attribute the pre-softmax logit of the target class. Saliency
reduces the input gradient over channels with ``max |.|``; Integrated
Gradients sums the signed per-channel attributions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .model import Network

DEFAULT_IG_STEPS = 50
IG_BATCH = 32


@dataclass(frozen=True)
class AttributionMap:
    raw: np.ndarray          # H x W x 3
    values: np.ndarray       # H x W after channel reduction
    target: int
    method: str              # "saliency" or "ig"

    @property
    def min(self) -> float:
        return float(self.values.min())

    @property
    def max(self) -> float:
        return float(self.values.max())


def _check_target(net: Network, target: int) -> int:
    if not 0 <= int(target) < net.n_classes:
        raise ShapeError(f"target class {target} outside 0..{net.n_classes - 1}")
    return int(target)


def _check_image(net: Network, image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    expected = (net.config.input_height, net.config.input_width, 3)
    if image.shape != expected:
        raise ShapeError(f"image shape {image.shape} does not match model input {expected}")
    return image


def logit_gradients(net: Network, batch: np.ndarray, target: int) -> tuple[np.ndarray, np.ndarray]:
    """Target logits and their input gradients for every image in ``batch``."""
    logits, _ = net.forward(batch)
    d = np.zeros_like(logits)
    d[:, target] = 1
    grads = net.backward_logits(d, need_input_grad=True)
    return logits[:, target].astype(np.float64), grads.astype(np.float64)


def target_logit(net: Network, image, target: int) -> float:
    logits, _ = net.forward(np.asarray(image)[None])
    return float(logits[0, target])


def saliency(net: Network, image, target: int) -> AttributionMap:
    """Input gradient of the target logit, reduced by max absolute value over channels.

    An untrained network gives a well-defined but meaningless map.
    """
    target = _check_target(net, target)
    image = _check_image(net, image)
    _, grads = logit_gradients(net, image[None], target)
    raw = grads[0]
    return AttributionMap(raw, np.abs(raw).max(axis=-1), target, "saliency")


def integrated_gradients(net: Network, image, target: int, baseline=None,
                         steps: int = DEFAULT_IG_STEPS, batch_size: int = IG_BATCH) -> AttributionMap:
    """Right Riemann sum of the path integral from ``baseline`` (default black) to ``image``.

    ``raw = (x - x') * mean_k grad F(x' + k/m (x - x'))`` for k = 1..m, with F
    the target logit; ``values`` is the signed channel sum.
    """
    target = _check_target(net, target)
    image = _check_image(net, image)
    baseline = np.zeros_like(image) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if baseline.shape != image.shape:
        raise ShapeError(f"baseline shape {baseline.shape} != image shape {image.shape}")
    if steps < 1:
        raise ShapeError(f"steps must be >= 1, got {steps}")
    delta = image - baseline
    total = np.zeros_like(image)
    alphas = np.arange(1, steps + 1, dtype=np.float64) / steps
    for start in range(0, steps, batch_size):
        a = alphas[start:start + batch_size, None, None, None]
        _, grads = logit_gradients(net, baseline[None] + a * delta[None], target)
        total += grads.sum(axis=0)
    raw = delta * total / steps
    return AttributionMap(raw, raw.sum(axis=-1), target, "ig")


def completeness_residual(net: Network, image, attribution: AttributionMap, baseline=None) -> tuple[float, float]:
    """``(sum of raw attributions, F(image) - F(baseline))``."""
    image = np.asarray(image, dtype=np.float64)
    baseline = np.zeros_like(image) if baseline is None else np.asarray(baseline, dtype=np.float64)
    diff = target_logit(net, image, attribution.target) - target_logit(net, baseline, attribution.target)
    return float(attribution.raw.sum()), diff


def render_heatmap(amap: AttributionMap, style: str | None = None) -> np.ndarray:
    """Render to an 8-bit RGB image.

    ``saliency``: white (0) to blue (map maximum). ``ig``: red (most
    negative) through white (0) to green (most positive), scaled by the
    largest absolute value. All-zero maps render solid white.
    """
    style = style or amap.method
    v = np.asarray(amap.values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ShapeError("attribution map contains non-finite values")
    out = np.full(v.shape + (3,), 255.0)
    if style == "saliency":
        peak = v.max()
        t = np.clip(v / peak, 0, 1) if peak > 0 else np.zeros_like(v)
        out[..., 0] = out[..., 1] = 255.0 * (1 - t)
    elif style == "ig":
        peak = np.abs(v).max()
        t = v / peak if peak > 0 else np.zeros_like(v)
        pos, neg = np.clip(t, 0, 1), np.clip(-t, 0, 1)
        # green = (0, 255, 0), red = (255, 0, 0)
        out[..., 0] = 255.0 * (1 - pos)
        out[..., 1] = 255.0 * (1 - neg)
        out[..., 2] = 255.0 * (1 - np.maximum(pos, neg))
    else:
        raise ShapeError(f"unknown heatmap style {style!r}")
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def stats_text(entries) -> str:
    """Plain-text stats lines from ``(key, value)`` pairs."""
    lines = []
    for key, value in entries:
        lines.append(f"{key} {float(value)!r}" if isinstance(value, float) else f"{key} {value}")
    return "\n".join(lines) + "\n"
