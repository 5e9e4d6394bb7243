"""ConvNet3_4: three valid 3x3 convolutions followed by four dense layers.

The feature-extraction block (FEB) chains conv layers 3->10->20->30 channels
with ReLU after each; its final map is flattened into the classification
block (CB), dense layers of widths 50, 15, 10 and ``n_output_labels``. ReLU
follows every dense layer except the last, whose raw output (the logits)
goes through softmax.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import (
    CacheError,
    CheckpointVersionError,
    ConfigError,
    NotACheckpointError,
    PayloadMismatchError,
    ShapeError,
    TruncatedCheckpointError,
)

CANONICAL_CONV = ((3, 10, 3, 1), (10, 20, 3, 1), (20, 30, 3, 1))
CANONICAL_HIDDEN = (50, 15, 10)
IN_CHANNELS = 3


@dataclass(frozen=True)
class ModelConfig:
    input_height: int
    input_width: int
    conv_plan: tuple[tuple[int, int, int, int], ...]  # (in_channels, out_channels, kernel, stride)
    fc_plan: tuple[int, ...]  # flattened input width first, n_output_labels last
    n_output_labels: int

    def __post_init__(self):
        object.__setattr__(self, "conv_plan", tuple(tuple(int(v) for v in c) for c in self.conv_plan))
        object.__setattr__(self, "fc_plan", tuple(int(v) for v in self.fc_plan))
        self.validate()

    def feature_shapes(self) -> list[tuple[int, int, int]]:
        """Spatial shape after the input and after each conv layer."""
        shapes = [(self.input_height, self.input_width, IN_CHANNELS)]
        for cin, cout, k, stride in self.conv_plan:
            h, w, _ = shapes[-1]
            try:
                shapes.append((T.conv_output_size(h, k, stride), T.conv_output_size(w, k, stride), cout))
            except ShapeError as exc:
                raise ConfigError(f"input {self.input_height}x{self.input_width} too small: {exc}") from None
        return shapes

    def validate(self) -> None:
        if self.n_output_labels not in (2, 4):
            raise ConfigError(f"n_output_labels must be 2 or 4, got {self.n_output_labels}")
        if self.input_height < 1 or self.input_width < 1:
            raise ConfigError("input dimensions must be positive")
        prev = IN_CHANNELS
        for layer, (cin, cout, k, stride) in enumerate(self.conv_plan, start=1):
            if cin != prev:
                raise ConfigError(f"conv layer {layer} expects {cin} input channels, previous layer gives {prev}")
            if min(cout, k, stride) < 1:
                raise ConfigError(f"conv layer {layer} has non-positive parameters")
            prev = cout
        h, w, c = self.feature_shapes()[-1]
        if len(self.fc_plan) < 2:
            raise ConfigError("fc_plan needs an input width and at least one layer")
        if self.fc_plan[0] != h * w * c:
            raise ConfigError(f"first fc width {self.fc_plan[0]} != flattened feature size {h * w * c}")
        if self.fc_plan[-1] != self.n_output_labels:
            raise ConfigError(f"last fc width {self.fc_plan[-1]} != n_output_labels {self.n_output_labels}")
        if min(self.fc_plan) < 1:
            raise ConfigError("fc widths must be positive")

    def to_words(self) -> list[int]:
        words = [self.input_height, self.input_width, self.n_output_labels, len(self.conv_plan)]
        for conv in self.conv_plan:
            words.extend(conv)
        words.append(len(self.fc_plan))
        words.extend(self.fc_plan)
        return words

    @classmethod
    def from_words(cls, words: list[int]) -> "ModelConfig":
        try:
            h, w, n_labels, n_conv = words[:4]
            pos = 4
            conv = [tuple(words[pos + 4 * i: pos + 4 * i + 4]) for i in range(n_conv)]
            pos += 4 * n_conv
            n_fc = words[pos]
            fc = tuple(words[pos + 1: pos + 1 + n_fc])
            if len(fc) != n_fc or any(len(c) != 4 for c in conv) or pos + 1 + n_fc != len(words):
                raise ValueError
        except (ValueError, IndexError):
            raise ConfigError("malformed config block") from None
        return cls(h, w, tuple(conv), fc, n_labels)

    def parameter_count(self) -> int:
        total = sum(k * k * cin * cout + cout for cin, cout, k, _ in self.conv_plan)
        total += sum(a * b + b for a, b in zip(self.fc_plan[:-1], self.fc_plan[1:]))
        return total


def convnet3_4_config(n_output_labels: int, input_size: int = 400) -> ModelConfig:
    if n_output_labels not in (2, 4):
        raise ConfigError(f"n_output_labels must be 2 or 4, got {n_output_labels}")
    # three 3x3 valid convolutions shrink each side by 6
    if input_size < 8:
        raise ConfigError(f"input size {input_size} too small for three 3x3 valid convolutions (minimum 8)")
    side = input_size - 2 * len(CANONICAL_CONV)
    flat = side * side * CANONICAL_CONV[-1][1]
    return ModelConfig(input_size, input_size, CANONICAL_CONV, (flat, *CANONICAL_HIDDEN, n_output_labels), n_output_labels)


class Conv2D:
    def __init__(self, name, cin, cout, kernel, stride, input_shape, output_shape, relu, dtype):
        self.name = name
        self.stride = stride
        self.relu = relu
        self.input_shape = input_shape
        self.output_shape = output_shape
        self.weight = np.zeros((kernel, kernel, cin, cout), dtype=dtype)
        self.bias = np.zeros(cout, dtype=dtype)
        self.weight_grad = np.zeros_like(self.weight)
        self.bias_grad = np.zeros_like(self.bias)
        self._cache = None

    @property
    def fan_in(self) -> int:
        kh, kw, cin, _ = self.weight.shape
        return kh * kw * cin

    def forward(self, x):
        pre = T.conv2d_valid(x, self.weight, self.bias, self.stride)
        self._cache = (x, pre)
        return T.relu(pre) if self.relu else pre

    def backward(self, dout, need_input_grad=True):
        if self._cache is None:
            raise CacheError(f"{self.name}: backward called without a forward pass")
        x, pre = self._cache
        self._cache = None
        if self.relu:
            dout = T.relu_backward(pre, dout)
        dx, dk, db = T.conv2d_backward(x, self.weight, self.stride, dout)
        self.weight_grad[...] = dk
        self.bias_grad[...] = db
        return dx if need_input_grad else None


class Dense:
    def __init__(self, name, n_in, n_out, relu, dtype):
        self.name = name
        self.relu = relu
        self.input_shape = (n_in,)
        self.output_shape = (n_out,)
        self.weight = np.zeros((n_out, n_in), dtype=dtype)
        self.bias = np.zeros(n_out, dtype=dtype)
        self.weight_grad = np.zeros_like(self.weight)
        self.bias_grad = np.zeros_like(self.bias)
        self._cache = None

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    def forward(self, x):
        pre = T.affine(x, self.weight, self.bias)
        self._cache = (x, pre)
        return T.relu(pre) if self.relu else pre

    def backward(self, dout, need_input_grad=True):
        if self._cache is None:
            raise CacheError(f"{self.name}: backward called without a forward pass")
        x, pre = self._cache
        self._cache = None
        if self.relu:
            dout = T.relu_backward(pre, dout)
        dx, dw, db = T.affine_backward(x, self.weight, dout)
        self.weight_grad[...] = dw
        self.bias_grad[...] = db
        return dx


@dataclass
class Network:
    """Ordered conv + dense layers with parameter and gradient slots.

    ``forward`` accepts a single ``H x W x 3`` image or a batch
    ``N x H x W x 3`` with values in [0, 1].
    """

    config: ModelConfig
    dtype: type = np.float32
    layers: list = field(init=False)
    epochs_completed: int = 0
    seed: int = 0

    def __post_init__(self):
        self.dtype = np.dtype(self.dtype).type
        shapes = self.config.feature_shapes()
        self.layers = []
        for i, (cin, cout, k, stride) in enumerate(self.config.conv_plan):
            self.layers.append(Conv2D(f"conv{i + 1}", cin, cout, k, stride, shapes[i], shapes[i + 1], True, self.dtype))
        fc = self.config.fc_plan
        offset = len(self.config.conv_plan)
        for j, (n_in, n_out) in enumerate(zip(fc[:-1], fc[1:])):
            last = j == len(fc) - 2
            self.layers.append(Dense(f"fc{offset + j + 1}", n_in, n_out, not last, self.dtype))
        self._flat_shape = None
        self._logits_shape = None

    @property
    def conv_layers(self):
        return [layer for layer in self.layers if isinstance(layer, Conv2D)]

    @property
    def dense_layers(self):
        return [layer for layer in self.layers if isinstance(layer, Dense)]

    @property
    def n_classes(self) -> int:
        return self.config.n_output_labels

    def parameters(self):
        """Yield ``(name, param, grad)`` triples in checkpoint order."""
        for layer in self.layers:
            yield f"{layer.name}.weight", layer.weight, layer.weight_grad
            yield f"{layer.name}.bias", layer.bias, layer.bias_grad

    def parameter_count(self) -> int:
        return sum(p.size for _, p, _ in self.parameters())

    def init_uniform(self, seed: int) -> None:
        """Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases zero."""
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            bound = np.sqrt(1.0 / layer.fan_in)
            layer.weight[...] = rng.uniform(-bound, bound, size=layer.weight.shape)
            layer.bias[...] = 0
        self.seed = seed

    def layer_shapes(self):
        return [(layer.name, layer.input_shape, layer.output_shape) for layer in self.layers]

    def _check_input(self, images):
        expected = (self.config.input_height, self.config.input_width, IN_CHANNELS)
        if images.shape[-3:] != expected or images.ndim not in (3, 4):
            raise ShapeError(f"input shape {images.shape} does not match model input {expected}")

    def forward(self, images):
        """Return ``(logits, probs)``; caches are kept for :meth:`backward`."""
        x = np.asarray(images, dtype=self.dtype)
        self._check_input(x)
        for layer in self.conv_layers:
            x = layer.forward(x)
        self._flat_shape = x.shape
        x = T.flatten(x)
        for layer in self.dense_layers:
            x = layer.forward(x)
        T.check_finite(x, "logits")
        self._logits_shape = x.shape
        return x, T.softmax(x)

    def predict(self, images):
        """Argmax label(s); ``np.argmax`` breaks ties toward the lowest index."""
        _, probs = self.forward(images)
        return np.argmax(probs, axis=-1)

    def backward_logits(self, dlogits, need_input_grad=True):
        """Backpropagate a logit gradient, fill every gradient slot, return the input gradient."""
        if self._logits_shape is None:
            raise CacheError("backward called without a matching forward pass")
        dlogits = np.asarray(dlogits, dtype=self.dtype)
        if dlogits.shape != self._logits_shape:
            raise ShapeError(f"logit gradient shape {dlogits.shape} != forward output {self._logits_shape}")
        self._logits_shape = None
        d = dlogits
        for layer in reversed(self.dense_layers):
            d = layer.backward(d)
        d = T.unflatten(d, self._flat_shape)
        convs = self.conv_layers
        for i, layer in enumerate(reversed(convs)):
            first = i == len(convs) - 1
            d = layer.backward(d, need_input_grad=need_input_grad or not first)
        if not convs and not need_input_grad:
            return None
        return d

    def backward(self, probs, labels, need_input_grad=False):
        """Fused softmax + cross-entropy backward; batch losses are averaged."""
        probs = np.asarray(probs)
        labels = np.atleast_1d(np.asarray(labels))
        batch = probs.ndim == 2
        p2 = probs if batch else probs[None]
        if labels.shape != (p2.shape[0],):
            raise ShapeError(f"{labels.shape[0]} labels for {p2.shape[0]} predictions")
        d = p2.astype(self.dtype, copy=True)
        d[np.arange(p2.shape[0]), labels] -= 1
        d /= p2.shape[0]
        return self.backward_logits(d if batch else d[0], need_input_grad=need_input_grad)

    def zero_grad(self) -> None:
        for _, _, g in self.parameters():
            g[...] = 0

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for _, p, _ in self.parameters()])

    def load_flat_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat)
        if flat.size != self.parameter_count():
            raise PayloadMismatchError(f"payload has {flat.size} values, model needs {self.parameter_count()}")
        pos = 0
        for _, p, _ in self.parameters():
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def copy(self) -> "Network":
        """Parameter snapshot without forward caches or gradients."""
        return self.astype(self.dtype)

    def astype(self, dtype) -> "Network":
        other = Network(self.config, dtype=dtype, epochs_completed=self.epochs_completed, seed=self.seed)
        other.load_flat_parameters(self.flat_parameters())
        return other


def build_network(config: ModelConfig, seed: int = 0, init: str = "uniform", dtype=np.float32) -> Network:
    net = Network(config, dtype=dtype, seed=seed)
    if init == "uniform":
        net.init_uniform(seed)
    elif init != "zeros":
        raise ConfigError(f"unknown init {init!r}")
    return net


def build_convnet3_4(n_output_labels: int, input_size: int = 400, seed: int = 0,
                     init: str = "uniform", dtype=np.float32) -> Network:
    """Build ConvNet3_4 for square ``input_size`` images.

    ``init="zeros"`` leaves parameters zero; numpy allocates those lazily,
    which keeps shape inspection of the 400x400 model (about 233M
    parameters) cheap.
    """
    return build_network(convnet3_4_config(n_output_labels, input_size), seed=seed, init=init, dtype=dtype)


def image_to_input(img_u8: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Scale 8-bit samples to [0, 1]."""
    return np.asarray(img_u8, dtype=dtype) / dtype(255)


# Checkpoint layout (little-endian):
#   magic "CNV3" | version u32 | n_words u32 | config words u32 * n_words
#   | epochs_completed u32 | seed u64 | param_count u64 | float32 * param_count
MAGIC = b"CNV3"
VERSION = 1
_HEAD = struct.Struct("<4sII")


def checkpoint_bytes(net: Network) -> bytes:
    words = net.config.to_words()
    payload = net.flat_parameters().astype("<f4")
    parts = [
        _HEAD.pack(MAGIC, VERSION, len(words)),
        struct.pack(f"<{len(words)}I", *words),
        struct.pack("<IQQ", net.epochs_completed, net.seed, payload.size),
        payload.tobytes(),
    ]
    return b"".join(parts)


def save_checkpoint(net: Network, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(net))


def network_from_bytes(blob: bytes) -> Network:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise NotACheckpointError("not a checkpoint: bad magic bytes")
    if len(blob) < _HEAD.size:
        raise TruncatedCheckpointError("truncated checkpoint header")
    _, version, n_words = _HEAD.unpack_from(blob, 0)
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    pos = _HEAD.size
    meta = struct.Struct("<IQQ")
    if len(blob) < pos + 4 * n_words + meta.size:
        raise TruncatedCheckpointError("truncated checkpoint header")
    words = list(struct.unpack_from(f"<{n_words}I", blob, pos))
    pos += 4 * n_words
    epochs, seed, count = meta.unpack_from(blob, pos)
    pos += meta.size
    config = ModelConfig.from_words(words)
    if count != config.parameter_count():
        raise PayloadMismatchError(f"payload mismatch: header declares {count} values, config needs {config.parameter_count()}")
    available = len(blob) - pos
    if available < 4 * count:
        raise TruncatedCheckpointError(f"truncated payload: {available} bytes for {count} values")
    if available > 4 * count:
        raise PayloadMismatchError(f"payload mismatch: {available - 4 * count} trailing bytes")
    payload = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
    net = Network(config, epochs_completed=epochs, seed=seed)
    net.load_flat_parameters(payload)
    return net


def load_checkpoint(path) -> Network:
    return network_from_bytes(Path(path).read_bytes())
