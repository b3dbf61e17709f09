"""Frame-level acoustic features: MFCCs with optional VTLN warping, deltas, CMN."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.fft import dct

PROVENANCES = ("mfcc", "mfcc+vtln", "cae", "bnf", "spliced")
MAGIC = b"ZRSF"
VERSION = 1


@dataclass(frozen=True)
class FrameConfig:
    window: float = 0.025
    shift: float = 0.010
    preemphasis: float = 0.97
    fft_size: int | None = None
    n_mels: int = 23
    n_ceps: int = 13
    low_freq: float = 20.0
    high_freq: float | None = None
    log_floor: float = 1e-10
    dither: float = 0.0
    warp_knee: float = 0.85
    alpha_min: float = 0.80
    alpha_max: float = 1.20
    alpha_step: float = 0.02

    def __post_init__(self):
        if not 0 < self.shift <= self.window:
            raise ValueError("need 0 < shift <= window")
        if not 0 <= self.preemphasis < 1:
            raise ValueError("preemphasis must lie in [0, 1)")
        if self.n_ceps > self.n_mels:
            raise ValueError("n_ceps must not exceed n_mels")
        if self.fft_size is not None and self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")
        if not self.alpha_min <= 1.0 <= self.alpha_max:
            raise ValueError("warp grid must contain 1.0")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window * sample_rate))

    def shift_samples(self, sample_rate: int) -> int:
        return int(round(self.shift * sample_rate))

    def nfft(self, sample_rate: int) -> int:
        if self.fft_size is not None:
            if self.fft_size < self.window_samples(sample_rate):
                raise ValueError("fft_size shorter than the analysis window")
            return self.fft_size
        return 1 << (self.window_samples(sample_rate) - 1).bit_length()

    def upper(self, sample_rate: int) -> float:
        nyq = sample_rate / 2.0
        high = nyq if self.high_freq is None else self.high_freq
        if high > nyq or high <= self.low_freq:
            raise ValueError("high cutoff must lie in (low cutoff, Nyquist]")
        return high

    def grid(self) -> np.ndarray:
        n = int(round((self.alpha_max - self.alpha_min) / self.alpha_step))
        return np.round(self.alpha_min + self.alpha_step * np.arange(n + 1), 6)


#: 40 mels / 40 cepstra input mode for bottleneck networks.
BNF_INPUT = FrameConfig(n_mels=40, n_ceps=40)


@dataclass(eq=False)
class FeatureSequence:
    data: np.ndarray
    frame_shift: float = 0.010
    first_frame_center: float = 0.0125
    provenance: str = "mfcc"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("features must be a non-empty T x D matrix")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("features contain non-finite values")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def frame_range(self, start: float, end: float) -> tuple[int, int]:
        """Frames whose centers fall in ``[start, end)``."""
        lo = int(np.ceil((start - self.first_frame_center) / self.frame_shift - 1e-9))
        hi = int(np.ceil((end - self.first_frame_center) / self.frame_shift - 1e-9))
        return max(lo, 0), min(hi, self.n_frames)

    def segment(self, start: float, end: float) -> np.ndarray:
        lo, hi = self.frame_range(start, end)
        if hi <= lo:
            raise ValueError(f"segment [{start}, {end}] shorter than one frame")
        return self.data[lo:hi]

    def with_data(self, data: np.ndarray, provenance: str | None = None) -> "FeatureSequence":
        return FeatureSequence(data, self.frame_shift, self.first_frame_center,
                               provenance or self.provenance)


@dataclass(frozen=True)
class WarpedMelBank:
    alpha: float
    filters: np.ndarray  # n_mels x (nfft // 2 + 1)


def hz_to_mel(f):
    return 1127.0 * np.log1p(np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * np.expm1(np.asarray(m, dtype=np.float64) / 1127.0)


def warp_frequency(f, alpha: float, nyquist: float, knee: float = 0.85):
    """Piecewise-linear VTLN warp: f -> f/alpha below the knee, then a line to Nyquist.

    The knee sits at ``knee * nyquist * min(1, alpha)`` so that the upper
    segment keeps a positive slope for alpha < 1.
    """
    f = np.asarray(f, dtype=np.float64)
    f_knee = knee * nyquist * min(1.0, alpha)
    w_knee = f_knee / alpha
    upper = w_knee + (f - f_knee) * (nyquist - w_knee) / (nyquist - f_knee)
    return np.where(f <= f_knee, f / alpha, upper)


def check_alpha(config: FrameConfig, alpha: float) -> None:
    if not config.alpha_min - 1e-9 <= alpha <= config.alpha_max + 1e-9:
        raise ValueError(f"warp factor {alpha} outside [{config.alpha_min}, {config.alpha_max}]")


def warp_mel_bank(config: FrameConfig, alpha: float = 1.0, sample_rate: int = 16000) -> WarpedMelBank:
    check_alpha(config, alpha)
    nfft = config.nfft(sample_rate)
    nyq = sample_rate / 2.0
    bins = np.arange(nfft // 2 + 1) * sample_rate / nfft
    warped = warp_frequency(bins, alpha, nyq, config.warp_knee)
    mels = hz_to_mel(warped)
    edges = np.linspace(hz_to_mel(config.low_freq), hz_to_mel(config.upper(sample_rate)), config.n_mels + 2)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (mels[None, :] - left) / (center - left)
    falling = (right - mels[None, :]) / (right - center)
    filters = np.maximum(0.0, np.minimum(rising, falling))
    return WarpedMelBank(float(alpha), filters)


def filter_centers_hz(bank: WarpedMelBank, config: FrameConfig, sample_rate: int) -> np.ndarray:
    """Physical frequency of each filter's peak response (weighted bin average)."""
    nfft = config.nfft(sample_rate)
    bins = np.arange(nfft // 2 + 1) * sample_rate / nfft
    return bank.filters @ bins / bank.filters.sum(axis=1)


def n_frames(n_samples: int, sample_rate: int, config: FrameConfig) -> int:
    win, hop = config.window_samples(sample_rate), config.shift_samples(sample_rate)
    if n_samples < win:
        raise ValueError(f"input of {n_samples} samples shorter than one window ({win})")
    return 1 + (n_samples - win) // hop


def power_spectrum(samples: np.ndarray, sample_rate: int, config: FrameConfig,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Framed, pre-emphasised, Hamming-windowed power spectra (T x nfft/2+1)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise ValueError("samples must be a finite 1-D array")
    n = n_frames(len(x), sample_rate, config)
    win, hop = config.window_samples(sample_rate), config.shift_samples(sample_rate)
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    frames = x[idx]
    if config.dither > 0:
        rng = rng or np.random.default_rng(0)
        frames = frames + config.dither * rng.standard_normal(frames.shape)
    if config.preemphasis > 0:
        frames = np.concatenate(
            [frames[:, :1] * (1 - config.preemphasis), frames[:, 1:] - config.preemphasis * frames[:, :-1]],
            axis=1,
        )
    frames = frames * np.hamming(win)
    spec = np.fft.rfft(frames, n=config.nfft(sample_rate), axis=1)
    return spec.real ** 2 + spec.imag ** 2


def mfcc_from_power(power: np.ndarray, bank: WarpedMelBank, config: FrameConfig) -> np.ndarray:
    energies = power @ bank.filters.T
    logmel = np.log(np.maximum(energies, config.log_floor))
    return dct(logmel, type=2, norm="ortho", axis=1)[:, : config.n_ceps]


def compute_mfcc(samples: np.ndarray, sample_rate: int, config: FrameConfig = FrameConfig(),
                 alpha: float = 1.0) -> FeatureSequence:
    check_alpha(config, alpha)
    power = power_spectrum(samples, sample_rate, config)
    bank = warp_mel_bank(config, alpha, sample_rate)
    return FeatureSequence(
        mfcc_from_power(power, bank, config),
        frame_shift=config.shift_samples(sample_rate) / sample_rate,
        first_frame_center=config.window_samples(sample_rate) / (2.0 * sample_rate),
        provenance="mfcc" if alpha == 1.0 else "mfcc+vtln",
    )


def delta(data: np.ndarray, context: int = 2) -> np.ndarray:
    """Regression deltas with edge replication."""
    T = data.shape[0]
    padded = np.concatenate([np.repeat(data[:1], context, 0), data, np.repeat(data[-1:], context, 0)])
    num = np.zeros_like(data)
    for n in range(1, context + 1):
        num += n * (padded[context + n: context + n + T] - padded[context - n: context - n + T])
    return num / (2.0 * sum(n * n for n in range(1, context + 1)))


def add_deltas(features: FeatureSequence, context: int = 2) -> FeatureSequence:
    d1 = delta(features.data, context)
    d2 = delta(d1, context)
    return features.with_data(np.hstack([features.data, d1, d2]))


def cmn_per_speaker(groups: Mapping[str, list[FeatureSequence]]) -> dict[str, list[FeatureSequence]]:
    """Subtract each speaker's per-coefficient mean, pooled over all their frames."""
    out = {}
    for spk, seqs in groups.items():
        if not seqs:
            raise ValueError(f"speaker {spk!r} has no features")
        mean = np.concatenate([s.data for s in seqs]).mean(axis=0)
        out[spk] = [s.with_data(s.data - mean) for s in seqs]
    return out


class FeatureStore(dict):
    """Utterance id -> FeatureSequence, with segment lookup by time."""

    def segment(self, utterance: str, start: float, end: float) -> np.ndarray:
        return self[utterance].segment(start, end)

    @property
    def dim(self) -> int:
        return next(iter(self.values())).dim

    def stacked(self, ids: Iterable[str] | None = None) -> np.ndarray:
        ids = sorted(self) if ids is None else ids
        return np.concatenate([self[i].data for i in ids])

    def map(self, fn, provenance: str) -> "FeatureStore":
        return FeatureStore({k: v.with_data(fn(v.data), provenance) for k, v in self.items()})

    def save(self, directory: Path | str) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for k, v in sorted(self.items()):
            write_features(directory / f"{k}.zrsf", v)

    @classmethod
    def load(cls, directory: Path | str, provenance: str = "mfcc", frame_shift: float = 0.010,
             first_frame_center: float = 0.0125) -> "FeatureStore":
        store = cls()
        for p in sorted(Path(directory).glob("*.zrsf")):
            store[p.stem] = read_features(p, provenance, frame_shift, first_frame_center)
        if not store:
            raise FileNotFoundError(f"no .zrsf feature files in {directory}")
        return store


def write_features(path: Path | str, features: FeatureSequence) -> None:
    T, D = features.data.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<III", VERSION, T, D))
        fh.write(features.data.astype("<f4").tobytes())


def read_features(path: Path | str, provenance: str = "mfcc", frame_shift: float = 0.010,
                  first_frame_center: float = 0.0125) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    version, T, D = struct.unpack("<III", raw[4:16])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = raw[16:]
    if len(body) != 4 * T * D:
        raise ValueError(f"{path}: truncated payload")
    data = np.frombuffer(body, dtype="<f4").reshape(T, D).astype(np.float64)
    return FeatureSequence(data, frame_shift, first_frame_center, provenance)


def write_features_csv(path: Path | str, features: FeatureSequence) -> None:
    np.savetxt(path, features.data, delimiter=",", fmt="%.6g")


@dataclass(frozen=True)
class MfccPipeline:
    """MFCC (+ deltas) with per-speaker CMN, the standard front end here."""

    config: FrameConfig = FrameConfig()
    deltas: bool = True
    cmn: bool = True
    delta_context: int = 2

    def from_power(self, power: np.ndarray, sample_rate: int, alpha: float) -> np.ndarray:
        data = mfcc_from_power(power, warp_mel_bank(self.config, alpha, sample_rate), self.config)
        if self.deltas:
            data = np.hstack([data, delta(data, self.delta_context), delta(delta(data, self.delta_context), self.delta_context)])
        return data

    def speaker_features(self, powers: list[np.ndarray], sample_rate: int, alpha: float) -> list[np.ndarray]:
        mats = [self.from_power(p, sample_rate, alpha) for p in powers]
        if self.cmn:
            mean = np.concatenate(mats).mean(axis=0)
            mats = [m - mean for m in mats]
        return mats

    def with_config(self, **kw) -> "MfccPipeline":
        return replace(self, config=replace(self.config, **kw))
