"""Unsupervised VTLN: a diagonal GMM as acoustic model, ML warp search per speaker."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .corpus import CorpusManifest
from .dsp import FeatureStore, FeatureSequence, MfccPipeline, power_spectrum

log = logging.getLogger(__name__)

MAGIC = b"ZRSG"
VERSION = 1
_LOG2PI = np.log(2.0 * np.pi)


@dataclass(eq=False)
class DiagonalGmm:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to one")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_loglik(self, X: np.ndarray) -> np.ndarray:
        """log(w_k) + log N(x | mu_k, diag var_k), shape N x K."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: features {X.shape}, GMM dim {self.dim}")
        prec = 1.0 / self.variances
        const = -0.5 * (self.dim * _LOG2PI + np.log(self.variances).sum(axis=1))
        quad = (X * X) @ prec.T - 2.0 * X @ (self.means * prec).T + (self.means ** 2 * prec).sum(axis=1)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw + const - 0.5 * quad


def gmm_loglik(gmm: DiagonalGmm, features: np.ndarray) -> float:
    """Total log-likelihood of the frames."""
    return float(logsumexp(gmm.component_loglik(features), axis=1).sum())


def kmeanspp_seeds(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(len(X))]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(len(X)) if total <= 0 else rng.choice(len(X), p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def train_gmm_em(features: np.ndarray, n_components: int, iterations: int = 20, seed: int = 0,
                 var_floor: float = 1e-3, subsample: int = 4000) -> DiagonalGmm:
    """EM for a diagonal GMM seeded k-means++ style.

    The variance floor is ``var_floor`` times the global per-dimension
    variance. ``gmm.trace`` holds the total log-likelihood before the first
    and after every iteration.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("features must be an N x D matrix with D >= 1")
    N, D = X.shape
    K = n_components
    if K > N:
        raise ValueError(f"{K} components but only {N} frames")
    rng = np.random.default_rng(seed)
    pool = X if N <= subsample else X[np.sort(rng.choice(N, subsample, replace=False))]
    floor = np.maximum(var_floor * X.var(axis=0), 1e-8)
    gmm = DiagonalGmm(np.full(K, 1.0 / K), kmeanspp_seeds(pool, K, rng),
                      np.tile(np.maximum(X.var(axis=0), floor), (K, 1)))
    trace = []
    for _ in range(iterations + 1):
        comp = gmm.component_loglik(X)
        norm = logsumexp(comp, axis=1)
        trace.append(float(norm.sum()))
        if len(trace) == iterations + 1:
            break
        post = np.exp(comp - norm[:, None])
        nk = post.sum(axis=0)
        live = nk > 1e-10
        means = gmm.means.copy()
        variances = gmm.variances.copy()
        means[live] = (post.T @ X)[live] / nk[live, None]
        second = (post.T @ (X * X))[live] / nk[live, None]
        variances[live] = np.maximum(second - means[live] ** 2, floor)
        gmm = DiagonalGmm(nk / nk.sum(), means, variances)
    gmm.trace = trace
    return gmm


# ---------------------------------------------------------------- warp estimation

WarpAssignment = dict  # speaker -> alpha


def utterance_powers(manifest: CorpusManifest, pipeline: MfccPipeline) -> dict[str, np.ndarray]:
    """Power spectra per utterance; warping only changes the filterbank, so these are reused."""
    return {
        uid: power_spectrum(utt.load_samples(manifest.root), utt.sample_rate, pipeline.config)
        for uid, utt in sorted(manifest.utterances.items())
    }


def _pick(scores: Mapping[float, float]) -> float:
    best = max(scores.values())
    ties = [a for a, s in scores.items() if s == best]
    return min(ties, key=lambda a: (abs(a - 1.0), a))


def estimate_warps(manifest: CorpusManifest, gmm: DiagonalGmm, grid: Sequence[float],
                   pipeline: MfccPipeline = MfccPipeline(),
                   powers: Mapping[str, np.ndarray] | None = None) -> WarpAssignment:
    """Per speaker, the grid point whose warped features the GMM likes best.

    Ties go to the warp closest to 1.0, then to the smaller warp.
    """
    powers = utterance_powers(manifest, pipeline) if powers is None else powers
    warps = {}
    for spk, utts in manifest.utterances_by_speaker().items():
        spk_powers = [powers[u.id] for u in utts]
        if not spk_powers or sum(len(p) for p in spk_powers) == 0:
            raise ValueError(f"speaker {spk!r} has no frames")
        sr = utts[0].sample_rate
        scores = {}
        for alpha in grid:
            feats = np.concatenate(pipeline.speaker_features(spk_powers, sr, float(alpha)))
            scores[float(alpha)] = gmm_loglik(gmm, feats)
        warps[spk] = _pick(scores)
    return warps


def warped_features(manifest: CorpusManifest, warps: Mapping[str, float], pipeline: MfccPipeline = MfccPipeline(),
                    powers: Mapping[str, np.ndarray] | None = None) -> FeatureStore:
    """Features for every utterance with its speaker's warp (1.0 if absent), CMN per speaker."""
    powers = utterance_powers(manifest, pipeline) if powers is None else powers
    config = pipeline.config
    store = FeatureStore()
    for spk, utts in manifest.utterances_by_speaker().items():
        alpha = float(warps.get(spk, 1.0))
        sr = utts[0].sample_rate
        mats = pipeline.speaker_features([powers[u.id] for u in utts], sr, alpha)
        for u, m in zip(utts, mats):
            store[u.id] = FeatureSequence(
                m, config.shift_samples(sr) / sr, config.window_samples(sr) / (2.0 * sr),
                "mfcc" if not warps else "mfcc+vtln",
            )
    return store


@dataclass
class VtlnModel:
    gmm: DiagonalGmm
    warps: WarpAssignment
    history: list[WarpAssignment]


def center_warps(warps: Mapping[str, float], grid: Sequence[float]) -> WarpAssignment:
    """Rescale so the geometric mean warp is 1, snapping each value back onto the grid.

    Warps are only defined relative to the reference the GMM was trained
    on; without this, repeated rounds let the whole population drift.
    """
    if not warps:
        return {}
    grid = np.asarray(grid, dtype=np.float64)
    c = math.exp(-float(np.mean(np.log(list(warps.values())))))
    return {k: float(grid[np.argmin(np.abs(grid - v * c))]) for k, v in warps.items()}


def train_vtln(manifest: CorpusManifest, pipeline: MfccPipeline = MfccPipeline(), n_components: int = 64,
               rounds: int = 5, em_iterations: int = 10, seed: int = 0,
               grid: Sequence[float] | None = None, powers: Mapping[str, np.ndarray] | None = None,
               center: bool = True) -> VtlnModel:
    """Alternate GMM training and warp estimation.

    Round one trains on unwarped features; each later round retrains the GMM
    on features warped with the previous estimates. With ``center`` every
    round's estimates are rescaled to geometric mean 1 (see ``center_warps``).
    """
    grid = pipeline.config.grid() if grid is None else grid
    powers = utterance_powers(manifest, pipeline) if powers is None else powers
    warps: WarpAssignment = {}
    history = []
    gmm = None
    for r in range(rounds):
        X = warped_features(manifest, warps, pipeline, powers).stacked()
        gmm = train_gmm_em(X, n_components, em_iterations, seed + r)
        new = estimate_warps(manifest, gmm, grid, pipeline, powers)
        if center:
            new = center_warps(new, grid)
        history.append(new)
        log.info("vtln round %d: %s", r, " ".join(f"{k}={v:.2f}" for k, v in new.items()))
        if new == warps:
            break
        warps = new
    return VtlnModel(gmm, warps, history)


# ---------------------------------------------------------------- io

def save_gmm(gmm: DiagonalGmm, path: Path | str) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<III", VERSION, gmm.n_components, gmm.dim))
        for a in (gmm.weights, gmm.means, gmm.variances):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_gmm(path: Path | str) -> DiagonalGmm:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a GMM file")
    version, K, D = struct.unpack("<III", raw[4:16])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = np.frombuffer(raw[16:], dtype="<f8")
    if body.size != K + 2 * K * D:
        raise ValueError(f"{path}: truncated payload")
    return DiagonalGmm(body[:K].copy(), body[K: K + K * D].reshape(K, D).copy(),
                       body[K + K * D:].reshape(K, D).copy())


def save_warps(warps: Mapping[str, float], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for spk in sorted(warps):
            fh.write(f"{spk}\t{warps[spk]:.2f}\n")


def load_warps(path: Path | str) -> WarpAssignment:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            spk, alpha = line.split()
            out[spk] = float(alpha)
    return out
