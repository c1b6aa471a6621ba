"""Feedforward softmax classifier trained with mini-batch Adam.

All parameters live in one flat float64 vector. Per-layer weight matrices
and bias vectors are views into that vector, so the federated layer can
average models with plain array arithmetic.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

NUM_FEATURES = 12
NUM_CLASSES = 3
PROB_FLOOR = 1e-12

VARIANT_LAYERS = {
    "afed": (NUM_FEATURES, 16, NUM_CLASSES),
    "dfed": (NUM_FEATURES, 32, 16, NUM_CLASSES),
}


class FingerprintMismatch(ValueError):
    """Parameter vector was produced for a different network."""


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    variant: str = "afed"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive: {sizes}")
        if sizes[0] != NUM_FEATURES or sizes[-1] != NUM_CLASSES:
            raise ValueError(
                f"network must map {NUM_FEATURES} features to {NUM_CLASSES} classes, got {sizes}"
            )
        hidden = len(sizes) - 2
        if self.variant == "afed" and hidden != 1:
            raise ValueError("afed has exactly one hidden layer")
        if self.variant == "dfed" and hidden < 2:
            raise ValueError("dfed needs at least two hidden layers")
        if self.variant not in VARIANT_LAYERS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @classmethod
    def for_variant(cls, variant: str) -> "NetworkSpec":
        variant = variant.lower()
        if variant not in VARIANT_LAYERS:
            raise ValueError(f"unknown variant {variant!r} (choose from {sorted(VARIANT_LAYERS)})")
        return cls(VARIANT_LAYERS[variant], variant)

    @property
    def num_params(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    @property
    def fingerprint(self) -> str:
        text = f"{self.variant}:{','.join(map(str, self.layer_sizes))}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def slices(self) -> list[tuple[slice, tuple[int, int], slice]]:
        """(weight slice, weight shape, bias slice) per layer, in flat order."""
        out = []
        pos = 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(pos, pos + a * b)
            pos += a * b
            bias = slice(pos, pos + b)
            pos += b
            out.append((w, (a, b), bias))
        return out


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Flat, read-only parameter (or gradient) vector bound to a NetworkSpec."""

    values: np.ndarray
    fingerprint: str

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("parameter vector contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def check(self, spec: NetworkSpec) -> None:
        if self.fingerprint != spec.fingerprint or self.values.size != spec.num_params:
            raise FingerprintMismatch(
                f"parameters {self.fingerprint} do not match network {spec.fingerprint}"
            )

    def layers(self, spec: NetworkSpec) -> list[tuple[np.ndarray, np.ndarray]]:
        self.check(spec)
        return [(self.values[w].reshape(shape), self.values[b]) for w, shape, b in spec.slices()]


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 90
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not self.adam_epsilon > 0:
            raise ValueError("adam_epsilon must be positive")

    def with_(self, **changes) -> "TrainingConfig":
        return replace(self, **changes)


def init_params(spec: NetworkSpec, seed: int) -> ParameterVector:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    values = np.zeros(spec.num_params)
    for w, (fan_in, fan_out), _ in spec.slices():
        bound = np.sqrt(6.0 / fan_in)
        values[w] = rng.uniform(-bound, bound, size=fan_in * fan_out)
    return ParameterVector(values, spec.fingerprint)


def zeros_like(spec: NetworkSpec) -> ParameterVector:
    return ParameterVector(np.zeros(spec.num_params), spec.fingerprint)


def _as_batch(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != NUM_FEATURES:
        raise ValueError(f"expected {NUM_FEATURES} features per row, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature value")
    return x


def _label_index(labels) -> np.ndarray:
    y = np.asarray(labels).astype(np.int64).ravel()
    if y.size and (y.min() < 1 or y.max() > NUM_CLASSES):
        raise ValueError(f"labels must lie in 1..{NUM_CLASSES}")
    return y - 1


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def forward(params: ParameterVector, spec: NetworkSpec, features) -> np.ndarray:
    """Class probabilities, shape (3,) for one row or (N, 3) for a batch."""
    single = np.ndim(features) == 1
    a = _as_batch(features)
    layers = params.layers(spec)
    for i, (w, b) in enumerate(layers):
        a = a @ w + b
        if i < len(layers) - 1:
            a = np.maximum(a, 0.0)
    p = _softmax(a)
    return p[0] if single else p


def predict(params: ParameterVector, spec: NetworkSpec, features) -> np.ndarray | int:
    """Class label in 1..3; ties go to the lowest class (argmax picks first max)."""
    p = forward(params, spec, features)
    if p.ndim == 1:
        return int(np.argmax(p)) + 1
    return np.argmax(p, axis=1) + 1


def _cross_entropy(p: np.ndarray, idx: np.ndarray) -> float:
    picked = p[np.arange(idx.size), idx]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def loss(params: ParameterVector, spec: NetworkSpec, features, labels) -> float:
    """Mean categorical cross-entropy over a non-empty batch."""
    x = _as_batch(features)
    idx = _label_index(labels)
    if idx.size == 0 or idx.size != x.shape[0]:
        raise ValueError("loss needs a non-empty batch with one label per row")
    return _cross_entropy(forward(params, spec, x), idx)


class _Workspace:
    """Views and scratch buffers for repeated forward/backward on one network."""

    def __init__(self, spec: NetworkSpec, values: np.ndarray, grad: np.ndarray):
        self.spec = spec
        self.w = []
        self.b = []
        self.gw = []
        self.gb = []
        for ws, shape, bs in spec.slices():
            self.w.append(values[ws].reshape(shape))
            self.b.append(values[bs])
            self.gw.append(grad[ws].reshape(shape))
            self.gb.append(grad[bs])

    def backprop(self, x: np.ndarray, idx: np.ndarray) -> float:
        """Write the mean-CE gradient into the grad buffer; return the batch loss."""
        n_layers = len(self.w)
        acts = [x]
        pre = []
        a = x
        for i in range(n_layers):
            z = a @ self.w[i]
            z += self.b[i]
            if i < n_layers - 1:
                pre.append(z)
                a = np.maximum(z, 0.0)
                acts.append(a)
            else:
                a = z
        p = _softmax(a)
        rows = np.arange(idx.size)
        picked = p[rows, idx]
        batch_loss = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
        # d(mean CE)/d(logits) = (p - onehot) / N; the clamp only matters below 1e-12
        delta = p
        delta[rows, idx] -= 1.0
        delta /= idx.size
        for i in range(n_layers - 1, -1, -1):
            np.matmul(acts[i].T, delta, out=self.gw[i])
            np.sum(delta, axis=0, out=self.gb[i])
            if i > 0:
                delta = delta @ self.w[i].T
                delta *= pre[i - 1] > 0
        return batch_loss


def gradient(params: ParameterVector, spec: NetworkSpec, features, labels) -> ParameterVector:
    """Exact gradient of `loss` with respect to every parameter."""
    params.check(spec)
    x = _as_batch(features)
    idx = _label_index(labels)
    if idx.size == 0 or idx.size != x.shape[0]:
        raise ValueError("gradient needs a non-empty batch with one label per row")
    values = params.values.copy()
    grad = np.zeros_like(values)
    _Workspace(spec, values, grad).backprop(x, idx)
    return ParameterVector(grad, spec.fingerprint)


def train_local(
    params: ParameterVector,
    spec: NetworkSpec,
    features,
    labels,
    config: TrainingConfig,
) -> tuple[ParameterVector, float]:
    """Run `config.epochs` epochs of shuffled mini-batch Adam.

    Returns the updated parameters and the sample-weighted mean batch loss of
    the last epoch. With zero epochs the input parameters come back unchanged
    and the loss is evaluated on the whole shard.
    """
    params.check(spec)
    x = _as_batch(features)
    idx = _label_index(labels)
    n = idx.size
    if n == 0 or n != x.shape[0]:
        raise ValueError("cannot train on an empty shard")
    if config.epochs == 0:
        return params, loss(params, spec, x, labels)

    values = params.values.copy()
    grad = np.zeros_like(values)
    m = np.zeros_like(values)
    v = np.zeros_like(values)
    scratch = np.empty_like(values)
    ws = _Workspace(spec, values, grad)
    rng = np.random.default_rng(config.seed)
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.learning_rate
    bs = config.batch_size
    step = 0
    epoch_loss = 0.0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        xs = x[order]
        ys = idx[order]
        total = 0.0
        for start in range(0, n, bs):
            xb = xs[start:start + bs]
            yb = ys[start:start + bs]
            total += ws.backprop(xb, yb) * yb.size
            step += 1
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            np.multiply(grad, grad, out=scratch)
            scratch *= 1.0 - b2
            v += scratch
            step_size = lr * np.sqrt(1.0 - b2 ** step) / (1.0 - b1 ** step)
            np.sqrt(v, out=scratch)
            scratch += eps * np.sqrt(1.0 - b2 ** step)
            np.divide(m, scratch, out=scratch)
            scratch *= step_size
            values -= scratch
        epoch_loss = total / n
    return ParameterVector(values, spec.fingerprint), epoch_loss


# --- checkpoint files -------------------------------------------------------

CHECKPOINT_MAGIC = "# fedmup-checkpoint v1"


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: ParameterVector
    round_index: int = 0
    norm_min: np.ndarray | None = None
    norm_max: np.ndarray | None = None
    extra: dict[str, str] = field(default_factory=dict)


def _floats(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.split(",")], dtype=np.float64)


def _fmt(values: Sequence[float]) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Text checkpoint: ``key=value`` header lines, then one value per line.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    ckpt.params.check(ckpt.spec)
    lines = [
        CHECKPOINT_MAGIC,
        f"fingerprint={ckpt.spec.fingerprint}",
        f"variant={ckpt.spec.variant}",
        f"layer_sizes={','.join(map(str, ckpt.spec.layer_sizes))}",
        f"round={ckpt.round_index}",
    ]
    if ckpt.norm_min is not None:
        lines.append(f"norm_min={_fmt(ckpt.norm_min)}")
        lines.append(f"norm_max={_fmt(ckpt.norm_max)}")
    for key in sorted(ckpt.extra):
        lines.append(f"{key}={ckpt.extra[key]}")
    lines.append(f"count={len(ckpt.params)}")
    lines.extend(repr(float(v)) for v in ckpt.params.values)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a fedmup checkpoint")
    header: dict[str, str] = {}
    pos = 1
    while pos < len(lines):
        key, _, value = lines[pos].partition("=")
        header[key] = value
        pos += 1
        if key == "count":
            break
    try:
        spec = NetworkSpec(tuple(int(s) for s in header["layer_sizes"].split(",")), header["variant"])
        count = int(header["count"])
    except KeyError as exc:
        raise ValueError(f"{path}: checkpoint header lacks {exc.args[0]!r}") from None
    if header.get("fingerprint") != spec.fingerprint:
        raise FingerprintMismatch(f"{path}: fingerprint does not match layer sizes")
    body = lines[pos:pos + count]
    if len(body) != count:
        raise ValueError(f"{path}: expected {count} values, found {len(body)}")
    params = ParameterVector(np.array([float(t) for t in body]), spec.fingerprint)
    norm_min = _floats(header["norm_min"]) if "norm_min" in header else None
    norm_max = _floats(header["norm_max"]) if "norm_max" in header else None
    known = {"fingerprint", "variant", "layer_sizes", "round", "norm_min", "norm_max", "count"}
    extra = {k: v for k, v in header.items() if k not in known}
    return Checkpoint(spec, params, int(header.get("round", 0)), norm_min, norm_max, extra)
