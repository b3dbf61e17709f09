"""Synthetic speech corpora with ground-truth alignments and speaker warps.

Each phone is a spectral prototype: formant peaks for voiced sounds, a noise
peak for fricatives, a closure plus burst for stops. A speaker scales every
formant frequency by its warp factor (a vocal tract length stand-in), tilts
the spectrum with a constant channel slope, speaks at its own f0 and adds
white noise at its own level. Audio is rendered with a harmonic source for
voiced energy and STFT-shaped noise for frication.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal

from .corpus import CorpusManifest, PhoneToken, Speaker, Utterance, WordToken

_HOP = 0.005  # control rate of the synthesiser, seconds


@dataclass(frozen=True)
class PhoneProto:
    label: str
    kind: str  # vowel | sonorant | fricative | stop
    formants: tuple[float, ...] = ()
    amps: tuple[float, ...] = ()
    noise_peak: float = 0.0
    noise_bw: float = 0.0
    voiced: bool = True


def _v(label, f1, f2, f3):
    return PhoneProto(label, "vowel", (f1, f2, f3), (1.0, 0.6, 0.3))


def _s(label, f1, f2, f3, amps=(0.45, 0.2, 0.1)):
    return PhoneProto(label, "sonorant", (f1, f2, f3), amps)


def _f(label, peak, bw, voiced=False):
    return PhoneProto(label, "fricative", (250.0,) if voiced else (), (0.15,) if voiced else (),
                      peak, bw, voiced)


def _p(label, peak, bw, voiced):
    return PhoneProto(label, "stop", (), (), peak, bw, voiced)


#: Universal phone space shared by all synthetic languages.
UNIVERSAL_PHONES: dict[str, PhoneProto] = {p.label: p for p in [
    _v("i", 280, 2250, 2900), _v("e", 430, 1950, 2650), _v("E", 600, 1750, 2550),
    _v("a", 760, 1300, 2500), _v("A", 680, 1050, 2450), _v("o", 470, 880, 2400),
    _v("u", 310, 780, 2250), _v("y", 290, 1650, 2150), _v("U", 420, 1100, 2300),
    _v("@", 520, 1480, 2450),
    _s("m", 260, 1100, 2300, (0.5, 0.08, 0.05)), _s("n", 260, 1650, 2550, (0.5, 0.1, 0.05)),
    _s("l", 370, 1250, 2750), _s("r", 430, 1200, 1650), _s("w", 300, 650, 2200),
    _s("j", 260, 2150, 3000),
    _f("s", 3000, 300), _f("f", 2000, 1200), _f("x", 2200, 300), _f("z", 3000, 300, voiced=True),
    _f("v", 2000, 1200, voiced=True),
    _p("p", 800, 500, False), _p("t", 3000, 400, False), _p("k", 1700, 300, False),
    _p("b", 800, 500, True), _p("d", 3000, 400, True), _p("g", 1700, 300, True),
]}

VOWELS = tuple(p.label for p in UNIVERSAL_PHONES.values() if p.kind == "vowel")
CONSONANTS = tuple(p.label for p in UNIVERSAL_PHONES.values() if p.kind != "vowel")


@dataclass(frozen=True)
class LanguageSpec:
    name: str
    phones: tuple[str, ...]
    lexicon: tuple[str, ...] = ()
    lexicon_size: int = 20
    syllables: tuple[int, int] = (3, 3)
    syllable_inventory: int = 0  # > 0: words reuse a fixed set of CV syllables


@dataclass(frozen=True)
class SpeakerSpec:
    id: str
    gender: str
    language: str
    warp: float = 1.0
    f0: float | None = None
    tilt_db_per_khz: float = 0.0
    snr_db: float = 30.0
    split: str | None = None


@dataclass(frozen=True)
class SynthConfig:
    languages: tuple[LanguageSpec, ...]
    speakers: tuple[SpeakerSpec, ...]
    utterances_per_speaker: int = 6
    words_per_utterance: tuple[int, int] = (3, 5)
    sample_rate: int = 8000
    idiosyncrasy: float = 0.03
    token_jitter: float = 0.02
    tempo: tuple[float, float] = (0.9, 1.1)
    silence: float = 0.08

    def __post_init__(self):
        if not self.languages:
            raise ValueError("synth config needs at least one language")
        if len(self.speakers) < 2:
            raise ValueError("synth config needs at least two speakers")
        names = {lang.name for lang in self.languages}
        for lang in self.languages:
            if not lang.lexicon and lang.lexicon_size < 1:
                raise ValueError(f"language {lang.name!r} has an empty lexicon")
            unknown = set(lang.phones) - set(UNIVERSAL_PHONES)
            if unknown:
                raise ValueError(f"language {lang.name!r}: unknown phones {sorted(unknown)}")
            for word in lang.lexicon:
                if set(word) - set(lang.phones):
                    raise ValueError(f"word {word!r} uses phones outside {lang.name!r}")
        for spk in self.speakers:
            if spk.language not in names:
                raise ValueError(f"speaker {spk.id!r} speaks unknown language {spk.language!r}")
        if len({s.id for s in self.speakers}) != len(self.speakers):
            raise ValueError("duplicate speaker ids")


def make_lexicon(lang: LanguageSpec, rng: np.random.Generator) -> tuple[str, ...]:
    """CV-syllable words over the language's inventory, all distinct."""
    if lang.lexicon:
        return lang.lexicon
    vowels = [p for p in lang.phones if p in VOWELS]
    cons = [p for p in lang.phones if p in CONSONANTS]
    if not vowels or not cons:
        raise ValueError(f"language {lang.name!r} needs both vowels and consonants")
    inventory = None
    if lang.syllable_inventory > 0:
        all_syl = [c + v for c in cons for v in vowels]
        pick = rng.choice(len(all_syl), min(lang.syllable_inventory, len(all_syl)), replace=False)
        inventory = [all_syl[i] for i in sorted(pick)]
    words: list[str] = []
    seen = set()
    attempts = 0
    while len(words) < lang.lexicon_size:
        attempts += 1
        if attempts > 100 * lang.lexicon_size:
            raise ValueError(f"cannot draw {lang.lexicon_size} distinct words for {lang.name!r}")
        n_syl = int(rng.integers(lang.syllables[0], lang.syllables[1] + 1))
        if inventory is not None:
            w = "".join(inventory[int(i)] for i in rng.integers(0, len(inventory), n_syl))
        else:
            w = "".join(str(rng.choice(cons)) + str(rng.choice(vowels)) for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return tuple(words)


def _peaks(freqs: np.ndarray, peaks: Sequence[tuple[float, float, float]]) -> np.ndarray:
    env = np.full_like(freqs, 1e-3)
    for f, bw, amp in peaks:
        env += amp * np.exp(-0.5 * ((freqs - f) / bw) ** 2)
    return env


def _formant_bw(f: float) -> float:
    return 60.0 + 0.05 * f


def _phone_states(proto: PhoneProto, scale: np.ndarray) -> list[tuple[float, list, list]]:
    """(fraction of duration, voiced peaks, noise peaks) for each sub-state."""
    voiced = [(f * s, _formant_bw(f * s), a) for f, a, s in zip(proto.formants, proto.amps, scale)]
    if proto.kind in ("vowel", "sonorant"):
        return [(1.0, voiced, [])]
    noise = [(proto.noise_peak * scale[0], proto.noise_bw, 0.35)]
    if proto.kind == "fricative":
        return [(1.0, voiced, noise)]
    closure = [(150.0, 80.0, 0.12)] if proto.voiced else []
    return [(0.6, closure, []), (0.4, closure, [(noise[0][0], noise[0][1], 0.6)])]


@dataclass
class _Rendered:
    samples: np.ndarray
    phones: list[tuple[str, float, float]]
    words: list[tuple[str, float, float]]


def _render(words: list[str], spk: SpeakerSpec, cfg: SynthConfig, spk_offsets: dict[str, np.ndarray],
            rng: np.random.Generator) -> _Rendered:
    sr = cfg.sample_rate
    hop = int(round(_HOP * sr))
    freqs = np.linspace(0.0, sr / 2.0, 257)
    tilt = 10.0 ** (spk.tilt_db_per_khz * freqs / 1000.0 / 20.0)

    # frame-level (hop) envelopes, one row per control frame
    voiced_rows: list[np.ndarray] = []
    noise_rows: list[np.ndarray] = []
    phones: list[tuple[str, float, float]] = []
    word_spans: list[tuple[str, float, float]] = []
    silent = np.full_like(freqs, 1e-3)

    def emit(n_frames: int, v: np.ndarray, z: np.ndarray):
        voiced_rows.extend([v] * n_frames)
        noise_rows.extend([z] * n_frames)

    n_sil = max(1, int(round(cfg.silence / _HOP)))
    emit(n_sil, silent, silent)
    phones.append(("sil", 0.0, n_sil * _HOP))
    t = n_sil
    for word in words:
        tempo = rng.uniform(*cfg.tempo)
        w_start = t
        for label in word:
            proto = UNIVERSAL_PHONES[label]
            base = 0.12 if proto.kind == "vowel" else 0.085
            dur = base * tempo * rng.uniform(0.9, 1.1)
            n = max(4, int(round(dur / _HOP)))
            scale = spk.warp * (1.0 + spk_offsets[label]) * (1.0 + cfg.token_jitter * rng.standard_normal(3))
            p_start = t
            states = _phone_states(proto, scale)
            remaining = n
            for k, (frac, vpk, npk) in enumerate(states):
                m = remaining if k == len(states) - 1 else max(1, int(round(frac * n)))
                remaining -= m
                emit(m, _peaks(freqs, vpk) * tilt, _peaks(freqs, npk) * tilt if npk else silent)
            t += n
            phones.append((label, p_start * _HOP, t * _HOP))
        word_spans.append((word, w_start * _HOP, t * _HOP))
    emit(n_sil, silent, silent)
    phones.append(("sil", t * _HOP, (t + n_sil) * _HOP))
    t += n_sil

    V = np.array(voiced_rows)
    Z = np.array(noise_rows)
    # short transitions between states
    kernel = np.ones(5) / 5.0
    V = signal.convolve(V, kernel[:, None], mode="same")
    Z = signal.convolve(Z, kernel[:, None], mode="same")
    n_samples = t * hop

    # voiced part: harmonics of a slowly drifting f0
    f0_ctrl = spk.f0 * (1.0 + 0.05 * np.sin(2 * np.pi * np.arange(t) * _HOP / 0.9 + rng.uniform(0, 2 * np.pi)))
    ctrl_times = (np.arange(t) + 0.5) * hop
    sample_idx = np.arange(n_samples)
    f0 = np.interp(sample_idx, ctrl_times, f0_ctrl)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    n_harm = int((sr / 2.0 - 100.0) // (spk.f0 * 0.95))
    harm = np.arange(1, n_harm + 1)
    hf = f0_ctrl[:, None] * harm[None, :]  # control frames x harmonics
    amp_ctrl = np.empty_like(hf)
    for i in range(t):
        amp_ctrl[i] = np.interp(hf[i], freqs, V[i])
    amp_ctrl[hf >= sr / 2.0 - 50.0] = 0.0
    amp_ctrl /= np.sqrt(harm)[None, :]
    voiced = np.zeros(n_samples)
    for h in range(n_harm):
        a = np.interp(sample_idx, ctrl_times, amp_ctrl[:, h])
        voiced += a * np.sin((h + 1) * phase + rng.uniform(0, 2 * np.pi))

    # noise part: white noise shaped frame by frame in the STFT domain
    nper = 4 * hop
    white = rng.standard_normal(n_samples)
    _, _, S = signal.stft(white, fs=sr, nperseg=nper, noverlap=nper - hop, boundary="even")
    bins = np.linspace(0.0, sr / 2.0, S.shape[0])
    frame_of = np.clip(np.arange(S.shape[1]) - 1, 0, t - 1)
    gain = np.stack([np.interp(bins, freqs, Z[i]) for i in frame_of], axis=1)
    _, noise = signal.istft(S * gain, fs=sr, nperseg=nper, noverlap=nper - hop, boundary=True)
    noise = noise[:n_samples]
    if len(noise) < n_samples:
        noise = np.pad(noise, (0, n_samples - len(noise)))

    x = 0.05 * voiced + 0.25 * noise
    speech_rms = np.sqrt(np.mean(x ** 2)) + 1e-12
    x = x + speech_rms * 10.0 ** (-spk.snr_db / 20.0) * rng.standard_normal(n_samples)
    x *= 0.5 / (np.max(np.abs(x)) + 1e-12)
    return _Rendered(x, phones, word_spans)


def _default_f0(gender: str, rng: np.random.Generator) -> float:
    return float(rng.uniform(180, 230) if gender == "F" else rng.uniform(100, 135))


def synth_corpus(config: SynthConfig, seed: int) -> CorpusManifest:
    """Render a corpus; fully determined by ``(config, seed)``."""
    root = np.random.SeedSequence(seed)
    lex_rng, spk_rng, *utt_seeds = [np.random.default_rng(s) for s in root.spawn(2 + len(config.speakers))]
    lexicons = {lang.name: make_lexicon(lang, lex_rng) for lang in config.languages}

    utterances: dict[str, Utterance] = {}
    speakers: dict[str, Speaker] = {}
    words: list[WordToken] = []
    phones: list[PhoneToken] = []
    for spk, rng in zip(config.speakers, utt_seeds):
        f0 = spk.f0 if spk.f0 is not None else _default_f0(spk.gender, spk_rng)
        spk = SpeakerSpec(**{**spk.__dict__, "f0": f0})
        offsets = {p: config.idiosyncrasy * spk_rng.standard_normal(3) for p in sorted(UNIVERSAL_PHONES)}
        speakers[spk.id] = Speaker(spk.id, spk.gender, spk.warp)
        lex = lexicons[spk.language]
        for k in range(config.utterances_per_speaker):
            n_words = int(rng.integers(config.words_per_utterance[0], config.words_per_utterance[1] + 1))
            chosen = [lex[int(i)] for i in rng.integers(0, len(lex), n_words)]
            r = _render(chosen, spk, config, offsets, rng)
            uid = f"{spk.id}_{k:03d}"
            utterances[uid] = Utterance(
                uid, spk.id, spk.gender, spk.language, config.sample_rate,
                round(len(r.samples) / config.sample_rate, 6), samples=r.samples, split=spk.split,
            )
            words += [WordToken(uid, round(s, 6), round(e, 6), w) for w, s, e in r.words]
            phones += [PhoneToken(uid, round(s, 6), round(e, 6), p) for p, s, e in r.phones]
    words.sort()
    phones.sort()
    return CorpusManifest(utterances, words, phones, [], speakers)


def simple_config(
    n_speakers: int = 6,
    warps: Sequence[float] = (0.9, 1.0, 1.1),
    phones: Sequence[str] | None = None,
    language: str = "syn",
    lexicon_size: int = 20,
    utterances_per_speaker: int = 6,
    tilt_db_per_khz: float = 3.0,
    snr_db: tuple[float, float] = (25.0, 35.0),
    syllable_inventory: int = 0,
    eval_speakers: int = 0,
    seed: int = 0,
    **kw,
) -> SynthConfig:
    """Single-language config with speakers cycling through ``warps``.

    Genders alternate F/M; channel tilts are spread over
    ``[-tilt_db_per_khz, tilt_db_per_khz]``. With ``eval_speakers > 0`` the
    last speakers form an ``eval`` split and the rest a ``train`` split.
    """
    rng = np.random.default_rng(seed)
    phones = tuple(phones) if phones is not None else tuple(UNIVERSAL_PHONES)
    lang = LanguageSpec(language, phones, lexicon_size=lexicon_size, syllable_inventory=syllable_inventory)
    speakers = []
    for i in range(n_speakers):
        speakers.append(SpeakerSpec(
            id=f"{language}{i:02d}",
            gender="F" if i % 2 == 0 else "M",
            language=language,
            warp=float(warps[i % len(warps)]),
            tilt_db_per_khz=float(rng.uniform(-tilt_db_per_khz, tilt_db_per_khz)),
            snr_db=float(rng.uniform(*snr_db)),
            split=None if eval_speakers <= 0 else ("eval" if i >= n_speakers - eval_speakers else "train"),
        ))
    return SynthConfig((lang,), tuple(speakers), utterances_per_speaker=utterances_per_speaker, **kw)
