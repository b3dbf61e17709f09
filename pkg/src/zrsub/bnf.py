"""Multilingual bottleneck features: a spliced ReLU/batch-norm trunk with one softmax head per language."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import CorpusManifest
from .dsp import FeatureSequence, FeatureStore
from .nnet import (Batch, DenseNetwork, InterleavedDataset, SequenceDataset, TrainConfig, forward,
                   init_layer, parse_splicing, recompute_batchnorm_stats, sgd_train)

log = logging.getLogger(__name__)

PAPER_SPLICING = parse_splicing("-1,0,1 -1,0,1 -1,0,1 -3,0,3 -3,0,3 -6,-3,0 0")


@dataclass
class LabeledFrameSet:
    language: str
    sequences: list[np.ndarray]
    labels: list[np.ndarray]
    classes: tuple[str, ...]

    def __post_init__(self):
        if not self.sequences:
            raise ValueError(f"language {self.language!r} has no data")
        n = len(self.classes)
        for y in self.labels:
            if len(y) and (y.min() < 0 or y.max() >= n):
                raise ValueError(f"language {self.language!r}: label out of range [0, {n})")

    @property
    def n_frames(self) -> int:
        return sum(len(s) for s in self.sequences)


@dataclass(frozen=True)
class BnfConfig:
    hidden: tuple[int, ...] = (625,) * 6
    bottleneck: int = 39
    head_hidden: int = 625
    splicing: tuple[tuple[int, ...], ...] = tuple(PAPER_SPLICING)
    train: TrainConfig = TrainConfig(1e-3, 1e-4, epochs=2, loss="cross_entropy")
    chunk: int = 200
    recompute_stats: bool = True  # batch-norm statistics from a final pass over all languages

    def __post_init__(self):
        if len(self.splicing) != len(self.hidden) + 1:
            raise ValueError("need one splicing group per hidden layer plus one for the bottleneck")


PAPER_BNF = BnfConfig()

#: Desk-scale preset: narrow layers, paper splicing kept verbatim.
DESK_BNF = BnfConfig(
    hidden=(64,) * 6, head_hidden=64,
    train=TrainConfig(0.08, 0.01, epochs=12, batch_size=256, loss="cross_entropy", momentum=0.9,
                      max_change=0.75),
)


def frame_labels(manifest: CorpusManifest, store: FeatureStore, classes: Sequence[str] | None = None,
                 ) -> tuple[list[np.ndarray], list[np.ndarray], tuple[str, ...]]:
    """Per-utterance feature matrices and phone-index labels from the alignments.

    Each frame gets the phone whose span contains its center; frames past
    the last phone take the last phone's label.
    """
    if classes is None:
        classes = tuple(sorted({p.label for p in manifest.phones}))
    index = {c: i for i, c in enumerate(classes)}
    xs, ys = [], []
    by_utt: dict[str, list] = {}
    for p in manifest.phones:
        by_utt.setdefault(p.utterance, []).append(p)
    for uid in sorted(manifest.utterances):
        if uid not in store or uid not in by_utt:
            continue
        feats = store[uid]
        phones = by_utt[uid]
        centers = feats.first_frame_center + feats.frame_shift * np.arange(feats.n_frames)
        ends = np.array([p.end for p in phones])
        which = np.minimum(np.searchsorted(ends, centers, side="right"), len(phones) - 1)
        labels = np.array([index[phones[i].label] for i in which])
        xs.append(feats.data)
        ys.append(labels)
    return xs, ys, tuple(classes)


@dataclass
class BnfModel:
    net: DenseNetwork
    languages: tuple[str, ...]
    classes: dict[str, tuple[str, ...]]
    trace: list[float] = field(default_factory=list)


def build_network(input_dim: int, config: BnfConfig, heads: Mapping[str, int], seed: int = 0) -> DenseNetwork:
    rng = np.random.default_rng(seed)
    layers = []
    width = input_dim
    for w, offs in zip(config.hidden + (config.bottleneck,), config.splicing):
        layers.append(init_layer(width, w, rng, "relu", batchnorm=True, splice=offs))
        width = w
    head_layers = {}
    for lang in sorted(heads):
        chain = []
        if config.head_hidden:
            chain.append(init_layer(width, config.head_hidden, rng, "relu"))
        chain.append(init_layer(config.head_hidden or width, heads[lang], rng, "linear"))
        head_layers[lang] = chain
    return DenseNetwork(layers, head_layers, tap=len(layers) - 1)


def train_multilingual(framesets: Sequence[LabeledFrameSet], config: BnfConfig = DESK_BNF, seed: int = 0,
                       callback: Callable[[int, Batch, dict], None] | None = None) -> BnfModel:
    """Block-softmax training; each batch comes from one language and updates only its head."""
    if not framesets:
        raise ValueError("need at least one language")
    names = [fs.language for fs in framesets]
    if len(set(names)) != len(names):
        raise ValueError("duplicate language ids")
    allx = np.concatenate([x for fs in framesets for x in fs.sequences])
    shift = allx.mean(axis=0)
    scale = 1.0 / np.maximum(allx.std(axis=0), 1e-8)
    net = build_network(allx.shape[1], config, {fs.language: len(fs.classes) for fs in framesets}, seed)
    net.input_shift, net.input_scale = shift, scale
    data = InterleavedDataset([
        SequenceDataset(fs.sequences, fs.labels, head=fs.language, chunk=config.chunk) for fs in framesets
    ])
    log.info("BNF: %d languages, %d frames", len(framesets), len(data))
    _, trace = sgd_train(net, data, replace(config.train, seed=seed), callback=callback)
    if config.recompute_stats:
        recompute_batchnorm_stats(net, data, config.train.batch_size, seed)
    net.history["train"] = trace
    return BnfModel(net, tuple(names), {fs.language: fs.classes for fs in framesets}, trace)


def extract_bnf(net: DenseNetwork, features: FeatureSequence | np.ndarray) -> FeatureSequence:
    """Bottleneck activations (inference-mode batch norm); heads are never evaluated."""
    data = getattr(features, "data", features)
    out = forward(net, data, "infer", lengths=[len(data)], upto=net.feature_layer)[-1]
    if isinstance(features, FeatureSequence):
        return features.with_data(out, "bnf")
    return FeatureSequence(out, provenance="bnf")


def extract_store(net: DenseNetwork, store: FeatureStore) -> FeatureStore:
    return FeatureStore({k: extract_bnf(net, v) for k, v in store.items()})


def head_accuracy(net: DenseNetwork, frameset: LabeledFrameSet) -> float:
    correct = total = 0
    for x, y in zip(frameset.sequences, frameset.labels):
        logits = forward(net, x, "infer", head=frameset.language, lengths=[len(x)])[-1]
        correct += int((logits.argmax(axis=1) == y).sum())
        total += len(y)
    return correct / total
