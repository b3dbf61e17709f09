"""A small dense-network engine in numpy.

Layers are affine maps followed by a nonlinearity and optional batch
normalization (without learned scale/shift). A layer may splice its input
over time offsets, which turns a stack of dense layers into a TDNN when the
batch holds whole sequences. Named output heads (affine layers ending in a
softmax) sit on top of the shared trunk; only the head selected for a batch
sees that batch's error signal.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "linear")
LOSSES = ("squared_error", "cross_entropy")
BN_EPS = 1e-5
MAGIC = b"ZRSN"
VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(eq=False)
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "tanh"
    batchnorm: bool = False
    splice: tuple[int, ...] | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.batchnorm and self.running_mean is None:
            self.running_mean = np.zeros(self.W.shape[1])
            self.running_var = np.ones(self.W.shape[1])

    @property
    def n_in(self) -> int:
        """Input width before splicing."""
        return self.W.shape[0] // (len(self.splice) if self.splice else 1)

    @property
    def n_out(self) -> int:
        return self.W.shape[1]


def init_layer(n_in: int, n_out: int, rng: np.random.Generator, activation: str = "tanh",
               batchnorm: bool = False, splice: Sequence[int] | None = None) -> Layer:
    fan_in = n_in * (len(splice) if splice else 1)
    scale = math.sqrt((6.0 if activation == "relu" else 3.0) / fan_in)
    W = rng.uniform(-scale, scale, size=(fan_in, n_out))
    return Layer(W, np.zeros(n_out), activation, batchnorm, tuple(splice) if splice else None)


@dataclass(eq=False)
class DenseNetwork:
    layers: list[Layer]
    heads: dict[str, list[Layer]] = field(default_factory=dict)
    tap: int | None = None
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    bn_momentum: float = 0.1
    history: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.n_out != b.n_in:
                raise ValueError(f"layer {k} outputs {a.n_out} but layer {k + 1} expects {b.n_in}")
        for name, head in self.heads.items():
            prev = self.layers[-1].n_out
            for layer in head:
                if layer.n_in != prev:
                    raise ValueError(f"head {name!r} dimension mismatch")
                prev = layer.n_out

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def feature_layer(self) -> int:
        return len(self.layers) - 1 if self.tap is None else self.tap

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"layers.{k}.W"] = layer.W
            out[f"layers.{k}.b"] = layer.b
        for name in sorted(self.heads):
            for k, layer in enumerate(self.heads[name]):
                out[f"heads.{name}.{k}.W"] = layer.W
                out[f"heads.{name}.{k}.b"] = layer.b
        return out

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(
            [_copy_layer(l) for l in self.layers],
            {k: [_copy_layer(l) for l in v] for k, v in self.heads.items()},
            self.tap,
            None if self.input_shift is None else self.input_shift.copy(),
            None if self.input_scale is None else self.input_scale.copy(),
            self.bn_momentum,
            {k: list(v) for k, v in self.history.items()},
        )


def _copy_layer(l: Layer) -> Layer:
    return Layer(l.W.copy(), l.b.copy(), l.activation, l.batchnorm, l.splice,
                 None if l.running_mean is None else l.running_mean.copy(),
                 None if l.running_var is None else l.running_var.copy())


# ---------------------------------------------------------------- splicing

def splice_index(lengths: Sequence[int], offsets: Sequence[int]) -> np.ndarray:
    """Row indices (N x len(offsets)) with clamping at each sequence's edges."""
    parts = []
    start = 0
    off = np.asarray(offsets)
    for L in lengths:
        if L < 1:
            raise ValueError("cannot splice an empty sequence")
        t = np.arange(L)[:, None] + off[None, :]
        parts.append(start + np.clip(t, 0, L - 1))
        start += L
    return np.concatenate(parts) if parts else np.zeros((0, len(off)), dtype=int)


def splice(features: np.ndarray, offsets: Sequence[int], lengths: Sequence[int] | None = None) -> np.ndarray:
    features = np.asarray(features)
    if features.shape[0] == 0:
        raise ValueError("cannot splice an empty sequence")
    lengths = [features.shape[0]] if lengths is None else lengths
    idx = splice_index(lengths, offsets)
    return features[idx].reshape(features.shape[0], -1)


def splice_stack(features: np.ndarray, offsets_per_layer: Sequence[Sequence[int]]) -> list[np.ndarray]:
    """Apply successive splicing stages (no affine maps in between)."""
    out = [np.asarray(features)]
    for offsets in offsets_per_layer:
        out.append(splice(out[-1], offsets))
    return out


def parse_splicing(text: str) -> list[tuple[int, ...]]:
    """``"-1,0,1 -3,0,3 0"`` -> ``[(-1, 0, 1), (-3, 0, 3), (0,)]``."""
    return [tuple(int(v) for v in group.split(",")) for group in text.split()]


# ---------------------------------------------------------------- forward / backward

def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    return np.ones_like(z)


@dataclass
class _Cache:
    x: np.ndarray  # layer input after splicing
    z: np.ndarray
    a: np.ndarray  # after nonlinearity, before batch norm
    xhat: np.ndarray | None = None
    inv_std: np.ndarray | None = None
    mean: np.ndarray | None = None
    var: np.ndarray | None = None
    idx: np.ndarray | None = None


def _layer_forward(layer: Layer, h: np.ndarray, mode: str, lengths) -> tuple[np.ndarray, _Cache]:
    idx = None
    if layer.splice is not None and tuple(layer.splice) != (0,):
        idx = splice_index(lengths, layer.splice)
        x = h[idx].reshape(h.shape[0], -1)
    else:
        x = h
    if x.shape[1] != layer.W.shape[0]:
        raise ValueError(f"dimension mismatch: got {x.shape[1]}, layer expects {layer.W.shape[0]}")
    z = x @ layer.W + layer.b
    a = _act(z, layer.activation)
    cache = _Cache(x, z, a, idx=idx)
    if not layer.batchnorm:
        return a, cache
    if mode == "train":
        mean, var = a.mean(axis=0), a.var(axis=0)
    else:
        mean, var = layer.running_mean, layer.running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (a - mean) * inv_std
    cache.xhat, cache.inv_std, cache.mean, cache.var = xhat, inv_std, mean, var
    return xhat, cache


def _chain(net: DenseNetwork, head: str | None) -> list[tuple[str, Layer]]:
    chain = [(f"layers.{k}", l) for k, l in enumerate(net.layers)]
    if head is not None:
        if head not in net.heads:
            raise KeyError(f"unknown head {head!r}")
        chain += [(f"heads.{head}.{k}", l) for k, l in enumerate(net.heads[head])]
    return chain


def _prepare(net: DenseNetwork, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"dimension mismatch: input {x.shape}, network expects width {net.input_dim}")
    if net.input_shift is not None:
        x = x - net.input_shift
    if net.input_scale is not None:
        x = x * net.input_scale
    return x


def forward(net: DenseNetwork, batch: np.ndarray, mode: str = "infer", head: str | None = None,
            lengths: Sequence[int] | None = None, upto: int | None = None) -> list[np.ndarray]:
    """Activations: ``[input, layer 0 output, ..., last output]``.

    With ``head`` the head's layers follow the trunk; the last entry is then
    the head's logits. ``upto`` stops after trunk layer ``upto``.
    """
    acts, _ = _forward_cached(net, batch, mode, head, lengths, upto)
    return acts


def _forward_cached(net, batch, mode, head, lengths, upto=None):
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    h = _prepare(net, batch)
    lengths = [h.shape[0]] if lengths is None else list(lengths)
    acts, caches = [h], []
    chain = _chain(net, head)
    if upto is not None:
        chain = chain[: upto + 1]
    for _, layer in chain:
        h, cache = _layer_forward(layer, h, mode, lengths)
        acts.append(h)
        caches.append(cache)
    return acts, caches


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(output: np.ndarray, targets: np.ndarray, loss: str) -> tuple[float, np.ndarray]:
    n = output.shape[0]
    if loss == "squared_error":
        diff = output - targets
        return 0.5 * float(np.sum(diff * diff)) / n, diff / n
    if loss == "cross_entropy":
        labels = np.asarray(targets, dtype=int)
        if labels.min() < 0 or labels.max() >= output.shape[1]:
            raise ValueError("label out of range for this head")
        p = softmax(output)
        ll = np.log(np.maximum(p[np.arange(n), labels], 1e-300))
        g = p.copy()
        g[np.arange(n), labels] -= 1.0
        return -float(ll.sum()) / n, g / n
    raise ValueError(f"unknown loss {loss!r}")


def gradients(net: DenseNetwork, batch: np.ndarray, targets: np.ndarray, loss: str = "squared_error",
              head: str | None = None, lengths: Sequence[int] | None = None,
              ) -> tuple[float, dict[str, np.ndarray], list[_Cache]]:
    """Loss, gradient for every parameter (zeros where no signal flows), layer caches."""
    acts, caches = _forward_cached(net, batch, "train", head, lengths)
    value, g = loss_and_grad(acts[-1], targets, loss)
    grads = {k: np.zeros_like(v) for k, v in net.parameters().items()}
    lengths = [acts[0].shape[0]] if lengths is None else list(lengths)
    for (name, layer), cache in zip(reversed(_chain(net, head)), reversed(caches)):
        if layer.batchnorm:
            n = g.shape[0]
            g = cache.inv_std / n * (n * g - g.sum(axis=0) - cache.xhat * (g * cache.xhat).sum(axis=0))
        g = g * _act_grad(cache.z, cache.a, layer.activation)
        grads[f"{name}.W"] = cache.x.T @ g
        grads[f"{name}.b"] = g.sum(axis=0)
        gx = g @ layer.W.T
        if cache.idx is not None:
            width = layer.n_in
            g = np.zeros((gx.shape[0], width))
            np.add.at(g, cache.idx.ravel(), gx.reshape(-1, width))
        else:
            g = gx
    return value, grads, caches


def batch_loss(net: DenseNetwork, batch: np.ndarray, targets: np.ndarray, loss: str = "squared_error",
               head: str | None = None, lengths: Sequence[int] | None = None, mode: str = "train") -> float:
    out = forward(net, batch, mode, head, lengths)[-1]
    return loss_and_grad(out, targets, loss)[0]


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    lr_initial: float = 1e-3
    lr_final: float = 1e-4
    epochs: int = 1
    batch_size: int = 256
    seed: int = 0
    loss: str = "squared_error"
    momentum: float = 0.0
    max_change: float | None = None  # cap on the L2 norm of each layer's update per step

    def __post_init__(self):
        if self.max_change is not None and self.max_change <= 0:
            raise ValueError("max_change must be positive")
        if not 0 <= self.lr_final <= self.lr_initial:
            raise ValueError("need 0 <= lr_final <= lr_initial")
        if self.lr_final == 0 and self.lr_initial != 0:
            raise ValueError("lr_final must be positive unless training is disabled (lr_initial = 0)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    def learning_rate(self, step: int, total_steps: int) -> float:
        if self.lr_initial == 0 or total_steps <= 1:
            return self.lr_initial
        return self.lr_initial * (self.lr_final / self.lr_initial) ** (step / (total_steps - 1))


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    lengths: list[int] | None = None
    head: str | None = None


class FrameDataset:
    """Independent rows; targets are vectors or integer labels."""

    def __init__(self, inputs: np.ndarray, targets: np.ndarray, head: str | None = None):
        if len(inputs) == 0:
            raise ValueError("empty dataset")
        if len(inputs) != len(targets):
            raise ValueError("inputs and targets differ in length")
        self.inputs, self.targets, self.head = np.asarray(inputs), np.asarray(targets), head

    def __len__(self):
        return len(self.inputs)

    def n_batches(self, batch_size: int) -> int:
        return math.ceil(len(self) / batch_size)

    def batches(self, rng: np.random.Generator, batch_size: int) -> Iterator[Batch]:
        order = rng.permutation(len(self))
        for s in range(0, len(order), batch_size):
            sel = order[s: s + batch_size]
            yield Batch(self.inputs[sel], self.targets[sel], None, self.head)


class SequenceDataset:
    """Whole sequences (for spliced networks), cut into chunks of at most ``chunk`` frames."""

    def __init__(self, sequences: Sequence[np.ndarray], labels: Sequence[np.ndarray],
                 head: str | None = None, chunk: int = 200):
        if not sequences:
            raise ValueError("empty dataset")
        self.chunks: list[tuple[np.ndarray, np.ndarray]] = []
        for x, y in zip(sequences, labels):
            if len(x) != len(y):
                raise ValueError("sequence and label lengths differ")
            for s in range(0, len(x), chunk):
                self.chunks.append((x[s: s + chunk], y[s: s + chunk]))
        self.head = head
        self.n_frames = sum(len(c[0]) for c in self.chunks)

    def __len__(self):
        return self.n_frames

    def n_batches(self, batch_size: int) -> int:
        return len(self._groups(np.arange(len(self.chunks)), batch_size))

    def _groups(self, order, batch_size):
        groups, cur, size = [], [], 0
        for i in order:
            cur.append(i)
            size += len(self.chunks[i][0])
            if size >= batch_size:
                groups.append(cur)
                cur, size = [], 0
        if cur:
            groups.append(cur)
        return groups

    def batches(self, rng: np.random.Generator, batch_size: int) -> Iterator[Batch]:
        for group in self._groups(rng.permutation(len(self.chunks)), batch_size):
            xs = [self.chunks[i][0] for i in group]
            ys = [self.chunks[i][1] for i in group]
            yield Batch(np.concatenate(xs), np.concatenate(ys), [len(x) for x in xs], self.head)


class InterleavedDataset:
    """Several datasets whose batches are shuffled together each epoch.

    Each epoch uses every batch of every member once, in a seeded random
    order, so languages are interleaved in proportion to their size.
    """

    def __init__(self, members: Sequence):
        if not members:
            raise ValueError("no datasets to interleave")
        self.members = list(members)

    def __len__(self):
        return sum(len(m) for m in self.members)

    def n_batches(self, batch_size: int) -> int:
        return sum(m.n_batches(batch_size) for m in self.members)

    def batches(self, rng: np.random.Generator, batch_size: int) -> Iterator[Batch]:
        pool = [b for m in self.members for b in m.batches(rng, batch_size)]
        for i in rng.permutation(len(pool)):
            yield pool[i]


def _update_running_stats(net: DenseNetwork, head: str | None, caches: list[_Cache]) -> None:
    m = net.bn_momentum
    for (_, layer), cache in zip(_chain(net, head), caches):
        if layer.batchnorm:
            layer.running_mean = (1 - m) * layer.running_mean + m * cache.mean
            layer.running_var = (1 - m) * layer.running_var + m * cache.var


def _limit_change(steps: dict[str, np.ndarray], max_change: float) -> None:
    """Shrink each layer's update (weights and bias together) to norm ``max_change``."""
    groups: dict[str, list[str]] = {}
    for k in steps:
        groups.setdefault(k.rsplit(".", 1)[0], []).append(k)
    for keys in groups.values():
        norm = math.sqrt(sum(float(np.sum(steps[k] ** 2)) for k in keys))
        if norm > max_change:
            for k in keys:
                steps[k] *= max_change / norm


def sgd_train(net: DenseNetwork, dataset, config: TrainConfig,
              callback: Callable[[int, Batch, dict[str, np.ndarray]], None] | None = None,
              trainable: Callable[[str], bool] | None = None) -> tuple[DenseNetwork, list[float]]:
    """Minibatch SGD in place; returns the network and the per-epoch mean loss.

    ``callback(step, batch, grads)`` sees every batch's gradients before the
    update. ``trainable(name)`` can freeze parameters.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.seed)
    params = net.parameters()
    names = [k for k in params if trainable is None or trainable(k)]
    velocity = {k: np.zeros_like(params[k]) for k in names}
    total = config.epochs * dataset.n_batches(config.batch_size)
    trace = []
    step = 0
    for epoch in range(config.epochs):
        loss_sum, count = 0.0, 0
        for batch in dataset.batches(rng, config.batch_size):
            value, grads, caches = gradients(net, batch.inputs, batch.targets, config.loss,
                                             batch.head, batch.lengths)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step} "
                                    f"(lr={config.learning_rate(step, total):.3g})")
            if callback is not None:
                callback(step, batch, grads)
            lr = config.learning_rate(step, total)
            if lr > 0:
                for k in names:
                    v = velocity[k]
                    v *= config.momentum
                    v -= lr * grads[k]
                if config.max_change is not None:
                    _limit_change(velocity, config.max_change)
                for k in names:
                    params[k] += velocity[k]
            _update_running_stats(net, batch.head, caches)
            n = len(batch.inputs)
            loss_sum += value * n
            count += n
            step += 1
        trace.append(loss_sum / count)
    return net, trace


def recompute_batchnorm_stats(net: DenseNetwork, dataset, batch_size: int = 256, seed: int = 0) -> DenseNetwork:
    """Replace running statistics by averages over one pass of ``dataset``.

    Batches are normalized with their own statistics as in training; each
    batch-norm layer ends up with the mean of the batch means and of the
    batch variances, so no single language dominates the stored values.
    """
    sums: dict[int, list] = {}
    n = 0
    for batch in dataset.batches(np.random.default_rng(seed), batch_size):
        _, caches = _forward_cached(net, batch.inputs, "train", batch.head, batch.lengths)
        for k, (layer, cache) in enumerate(zip(net.layers, caches)):
            if layer.batchnorm:
                acc = sums.setdefault(k, [0.0, 0.0])
                acc[0] = acc[0] + cache.mean
                acc[1] = acc[1] + cache.var
        n += 1
    if n == 0:
        raise ValueError("empty dataset")
    for k, (m, v) in sums.items():
        net.layers[k].running_mean = m / n
        net.layers[k].running_var = v / n
    return net


def layerwise_pretrain(widths: Sequence[int], data: np.ndarray, config: TrainConfig,
                       activation: str = "tanh") -> DenseNetwork:
    """Greedy stacked-autoencoder pretraining; decoders are discarded.

    Each new layer is trained as a one-hidden-layer autoencoder on the codes
    of the layers below it. Per-layer loss traces land in ``net.history``.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("pretraining data must be a non-empty matrix")
    rng = np.random.default_rng(config.seed)
    cfg = TrainConfig(config.lr_initial, config.lr_final, config.epochs, config.batch_size,
                      config.seed, "squared_error", config.momentum)
    layers, history = [], {}
    codes = data
    for k, width in enumerate(widths):
        enc = init_layer(codes.shape[1], width, rng, activation)
        dec = init_layer(width, codes.shape[1], rng, "linear")
        ae = DenseNetwork([enc, dec])
        _, trace = sgd_train(ae, FrameDataset(codes, codes), cfg)
        history[f"pretrain.{k}"] = trace
        layers.append(enc)
        codes = _act(codes @ enc.W + enc.b, activation)
    return DenseNetwork(layers, history=history)


# ---------------------------------------------------------------- serialization

def _layer_meta(layer: Layer) -> dict:
    return {
        "shape": list(layer.W.shape), "activation": layer.activation,
        "batchnorm": layer.batchnorm, "splice": list(layer.splice) if layer.splice else None,
    }


def save_network(net: DenseNetwork, path: Path | str) -> None:
    header = {
        "layers": [_layer_meta(l) for l in net.layers],
        "heads": {k: [_layer_meta(l) for l in v] for k, v in sorted(net.heads.items())},
        "tap": net.tap,
        "input_norm": net.input_shift is not None,
        "bn_momentum": net.bn_momentum,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    arrays = []
    if net.input_shift is not None:
        arrays += [net.input_shift, net.input_scale]
    for layer in net.layers + [l for k in sorted(net.heads) for l in net.heads[k]]:
        arrays += [layer.W, layer.b]
        if layer.batchnorm:
            arrays += [layer.running_mean, layer.running_var]
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_network(path: Path | str) -> DenseNetwork:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a network file")
    version, n = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    header = json.loads(raw[12: 12 + n])
    pos = 12 + n

    def take(*shape):
        nonlocal pos
        count = int(np.prod(shape))
        a = np.frombuffer(raw[pos: pos + 8 * count], dtype="<f8").reshape(shape).copy()
        pos += 8 * count
        return a

    def build(meta):
        W = take(*meta["shape"])
        b = take(meta["shape"][1])
        rm = rv = None
        if meta["batchnorm"]:
            rm, rv = take(meta["shape"][1]), take(meta["shape"][1])
        return Layer(W, b, meta["activation"], meta["batchnorm"],
                     tuple(meta["splice"]) if meta["splice"] else None, rm, rv)

    shift = scale = None
    if header["input_norm"]:
        d = header["layers"][0]["shape"][0] // len(header["layers"][0]["splice"] or [0])
        shift, scale = take(d), take(d)
    layers = [build(m) for m in header["layers"]]
    heads = {k: [build(m) for m in v] for k, v in header["heads"].items()}
    return DenseNetwork(layers, heads, header["tap"], shift, scale, header["bn_momentum"])
