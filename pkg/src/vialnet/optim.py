"""Cross-entropy loss, Adam with decoupled weight decay, and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetError, NonFiniteError, ShapeError
from .model import Network, build_convnet3_4

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def cross_entropy(probs, label: int) -> float:
    """``-ln(probs[label])`` with probabilities floored at 1e-12."""
    probs = np.asarray(probs)
    if not 0 <= label < probs.shape[-1]:
        raise ShapeError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-math.log(max(float(probs[label]), PROB_FLOOR)))


def batch_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy over a batch."""
    labels = np.asarray(labels)
    if labels.max(initial=0) >= probs.shape[-1] or labels.min(initial=0) < 0:
        raise ShapeError("label out of range")
    picked = probs[np.arange(len(labels)), labels].astype(np.float64)
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: AdamState) -> AdamState:
    """One in-place Adam update over ``(name, param, grad)`` triples.

    Weight decay is decoupled: ``theta <- theta - lr * wd * theta`` happens
    before the bias-corrected Adam delta is applied, and never enters the
    moment estimates.
    """
    params = list(params)
    for name, p, g in params:
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p, g in params:
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        if state.weight_decay:
            p *= p.dtype.type(1.0 - state.lr * state.weight_decay)
        denom = np.sqrt(v / bc2) + state.eps
        p -= (state.lr / bc1) * m / denom
    return state


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-2
    replications: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_error: float
    test_loss: float
    test_acc: float


@dataclass
class TrainRun:
    config: TrainConfig
    seed: int
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_test_acc: float = float("nan")
    best_test_loss: float = float("nan")

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,train_error,test_loss,test_acc"]
        for r in self.history:
            values = (r.train_loss, r.train_error, r.test_loss, r.test_acc)
            lines.append(f"{r.epoch}," + ",".join(repr(float(v)) for v in values))
        return "\n".join(lines) + "\n"


def evaluate(net: Network, images: np.ndarray, labels: np.ndarray, batch_size: int = 64):
    """Return ``(mean loss, accuracy, probs)`` over a dataset."""
    probs = predict_proba(net, images, batch_size)
    loss = batch_cross_entropy(probs, labels)
    acc = float(np.mean(np.argmax(probs, axis=1) == labels))
    return loss, acc, probs


def predict_proba(net: Network, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(images), batch_size):
        _, p = net.forward(images[start:start + batch_size])
        out.append(p)
    return np.concatenate(out) if out else np.zeros((0, net.n_classes), dtype=net.dtype)


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of mini-batch index arrays over a fresh permutation; the last batch may be short."""
    order = rng.permutation(n)
    return [order[start:start + batch_size] for start in range(0, n, batch_size)]


def _check_labels(labels, n_classes, what):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DatasetError(f"{what} labels outside 0..{n_classes - 1}")


def train(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray, test_y: np.ndarray,
          config: TrainConfig, seed: int, n_classes: int, net: Network | None = None,
          log_every: int = 0) -> tuple[Network, TrainRun]:
    """Train one network and return the best-by-test-accuracy snapshot.

    Inputs are float arrays ``N x H x W x 3`` in [0, 1]. Each epoch visits
    a fresh permutation of the training set in mini-batches (the last short
    batch is kept). Ties in test accuracy go to the lower test loss, then
    the earlier epoch.
    """
    if len(train_x) == 0:
        raise DatasetError("empty training set")
    if len(train_x) != len(train_y) or len(test_x) != len(test_y):
        raise DatasetError("image/label count mismatch")
    _check_labels(train_y, n_classes, "training")
    _check_labels(test_y, n_classes, "test")
    train_y = np.asarray(train_y)
    test_y = np.asarray(test_y)
    ss = np.random.SeedSequence(seed)
    init_seed, shuffle_seq = ss.spawn(2)
    if net is None:
        net = build_convnet3_4(n_classes, train_x.shape[1], seed=int(init_seed.generate_state(1)[0]))
    elif net.n_classes != n_classes:
        raise DatasetError(f"network has {net.n_classes} outputs, dataset has {n_classes} classes")
    net.seed = seed
    rng = np.random.default_rng(shuffle_seq)
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps,
                      weight_decay=config.weight_decay)
    run = TrainRun(config=config, seed=seed)
    best = None
    best_key = None
    n = len(train_x)
    for epoch in range(1, config.epochs + 1):
        loss_sum = 0.0
        wrong = 0
        for idx in epoch_batches(n, config.batch_size, rng):
            _, probs = net.forward(train_x[idx])
            y = train_y[idx]
            loss_sum += batch_cross_entropy(probs, y) * len(idx)
            wrong += int(np.sum(np.argmax(probs, axis=1) != y))
            net.backward(probs, y)
            adam_step(net.parameters(), state)
        net.epochs_completed = epoch
        if len(test_x):
            test_loss, test_acc, _ = evaluate(net, test_x, test_y, config.batch_size)
        else:
            test_loss, test_acc = float("nan"), float("nan")
        rec = EpochRecord(epoch, loss_sum / n, wrong / n, test_loss, test_acc)
        run.history.append(rec)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d train_loss %.5f test_loss %.5f test_acc %.4f",
                     epoch, rec.train_loss, test_loss, test_acc)
        key = (test_acc, -test_loss) if len(test_x) else (epoch, 0.0)
        if best_key is None or key > best_key:
            best_key = key
            best = net.copy()
            run.best_epoch, run.best_test_acc, run.best_test_loss = epoch, test_acc, test_loss
    return best, run


def train_replications(train_x, train_y, test_x, test_y, config: TrainConfig, seed: int,
                       n_classes: int, log_every: int = 0):
    """Run ``config.replications`` independent trainings with distinct seeds.

    Returns ``(best network, list of runs, index of best run)``; the best
    replication is the one with the highest test accuracy (lower test loss
    breaks ties).
    """
    if config.replications < 1:
        raise DatasetError("replications must be >= 1")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(config.replications)]
    best_net, best_idx, best_key = None, -1, None
    runs = []
    for r, rep_seed in enumerate(seeds):
        net, run = train(train_x, train_y, test_x, test_y, config, rep_seed, n_classes, log_every=log_every)
        runs.append(run)
        key = (run.best_test_acc, -run.best_test_loss)
        if best_key is None or key > best_key:
            best_net, best_idx, best_key = net, r, key
    return best_net, runs, best_idx
