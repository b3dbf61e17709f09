"""Correspondence autoencoder: stacked-AE pretraining, then training on aligned frame pairs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .align import align_frame_pairs
from .corpus import CorpusManifest, PairEntry
from .dsp import FeatureSequence, FeatureStore
from .nnet import DenseNetwork, FrameDataset, TrainConfig, forward, init_layer, layerwise_pretrain, sgd_train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CaeConfig:
    widths: tuple[int, ...] = (100,) * 8 + (39,)
    pretrain: TrainConfig = TrainConfig(2.5e-4, 2.5e-4, epochs=5)
    finetune: TrainConfig = TrainConfig(2.5e-5, 2.5e-5, epochs=60)
    activation: str = "tanh"
    normalize_input: bool = True
    tap: int | None = None  # hidden layer to read features from; default the last
    input_provenance: str = "mfcc"

    def __post_init__(self):
        if not self.widths:
            raise ValueError("need at least one hidden layer")


PAPER_CAE = CaeConfig()

#: Desk-scale preset: shallower stack, momentum SGD with rates suited to a few thousand frames.
DESK_CAE = CaeConfig(
    widths=(100, 100, 100, 39),
    pretrain=TrainConfig(0.02, 0.005, epochs=5, batch_size=128, momentum=0.9),
    finetune=TrainConfig(0.02, 0.002, epochs=10, batch_size=256, momentum=0.9),
)


@dataclass
class CaeModel:
    net: DenseNetwork
    pretrained: DenseNetwork
    config: CaeConfig
    traces: dict[str, list[float]] = field(default_factory=dict)


def _seeded(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)


def train_cae(manifest: CorpusManifest, pairs: Sequence[PairEntry], features: FeatureStore,
              config: CaeConfig = DESK_CAE, seed: int = 0) -> CaeModel:
    if not pairs:
        raise ValueError("correspondence training needs at least one pair")
    ids = sorted(u for u in manifest.utterances if u in features)
    frames = features.stacked(ids)
    shift = scale = None
    if config.normalize_input:
        shift = frames.mean(axis=0)
        scale = 1.0 / np.maximum(frames.std(axis=0), 1e-8)
        frames = (frames - shift) * scale

    stack = layerwise_pretrain(config.widths, frames, _seeded(config.pretrain, seed), config.activation)
    rng = np.random.default_rng(seed + 1)
    out = init_layer(config.widths[-1], frames.shape[1], rng, "linear")
    tap = len(config.widths) - 1 if config.tap is None else config.tap
    net = DenseNetwork(stack.layers + [out], tap=tap, input_shift=shift, input_scale=scale)
    pretrained = net.copy()

    inputs, targets = align_frame_pairs(pairs, features)
    if shift is not None:
        targets = (targets - shift) * scale
    log.info("cAE: %d pretraining frames, %d aligned couples", len(frames), len(inputs))
    _, trace = sgd_train(net, FrameDataset(inputs, targets), _seeded(config.finetune, seed + 2))
    traces = dict(stack.history)
    traces["finetune"] = trace
    net.history = traces
    return CaeModel(net, pretrained, config, traces)


def extract_cae(net: DenseNetwork, features: FeatureSequence | np.ndarray) -> FeatureSequence:
    """Forward pass truncated at the feature layer; one output frame per input frame."""
    data = getattr(features, "data", features)
    acts = forward(net, data, "infer", upto=net.feature_layer)
    if isinstance(features, FeatureSequence):
        return features.with_data(acts[-1], "cae")
    return FeatureSequence(acts[-1], provenance="cae")


def extract_store(net: DenseNetwork, store: FeatureStore) -> FeatureStore:
    return FeatureStore({k: extract_cae(net, v) for k, v in store.items()})
