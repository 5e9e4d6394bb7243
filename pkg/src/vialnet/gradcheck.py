"""Central finite-difference checks of network parameter gradients.

A central difference is only a valid reference where the loss is smooth
on ``[theta - eps, theta + eps]``. ReLU networks have kinks, so each probed
coordinate records whether any ReLU changed state between the two probes
and the unperturbed point; such coordinates are reported as skipped rather
than compared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Network
from .optim import batch_cross_entropy

REL_FLOOR = 1e-10


@dataclass
class GradCheckResult:
    compared: list[tuple[str, int, float, float, float]] = field(default_factory=list)  # name, index, analytic, fd, rel
    skipped: list[tuple[str, int]] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((c[4] for c in self.compared), default=0.0)

    def per_tensor(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for name, *_ in self.compared:
            counts[name] = counts.get(name, 0) + 1
        return counts


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), REL_FLOOR)


def relu_masks(net: Network) -> list[np.ndarray]:
    """Active-unit masks of every ReLU layer from the most recent forward pass."""
    return [layer._cache[1] > 0 for layer in net.layers if layer.relu]


def _loss_and_masks(net, x, y):
    _, probs = net.forward(x)
    masks = relu_masks(net)
    return batch_cross_entropy(probs, y), masks


def _same(m1, m2) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(m1, m2))


def check_gradients(net: Network, x: np.ndarray, y: np.ndarray, per_tensor: int, eps: float = 1e-3,
                    seed: int = 0, skip_kinks: bool = True, max_draws: int = 50) -> GradCheckResult:
    """Compare analytic and central-difference gradients of the mean cross-entropy.

    Draws random coordinates from every parameter tensor until ``per_tensor``
    of them are compared (or ``max_draws * per_tensor`` draws are spent).
    """
    rng = np.random.default_rng(seed)
    _, probs = net.forward(x)
    base_masks = relu_masks(net)
    net.backward(probs, y)
    params = [(name, p, g.copy()) for name, p, g in net.parameters()]
    result = GradCheckResult()
    for name, p, g in params:
        done = 0
        for _ in range(max_draws * per_tensor):
            if done == per_tensor:
                break
            j = int(rng.integers(p.size))
            old = p.flat[j]
            p.flat[j] = old + eps
            lp, mp = _loss_and_masks(net, x, y)
            p.flat[j] = old - eps
            lm, mm = _loss_and_masks(net, x, y)
            p.flat[j] = old
            if skip_kinks and not (_same(base_masks, mp) and _same(base_masks, mm)):
                result.skipped.append((name, j))
                continue
            fd = (lp - lm) / (2 * eps)
            a = float(g.flat[j])
            result.compared.append((name, j, a, fd, relative_error(a, fd)))
            done += 1
    return result
