"""Corpus data model: utterances, time-aligned word/phone tokens, pair lists.

Manifests are tab-separated text files with one record per line. The first
field names the record kind::

    UTT    id  speaker  gender  language  sample_rate  duration  audio  features  split
    SPK    speaker  gender  warp
    WORD   utterance  orthography  start  end
    PHONE  utterance  label  start  end
    PAIR   uttA  startA  endA  uttB  startB  endB  kind

Empty optional fields are written as ``-``. Lines starting with ``#`` are
comments. Audio and feature paths are relative to the manifest directory.
"""

from __future__ import annotations

import itertools
import math
import wave
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

GENDERS = ("F", "M", "unknown")
PAIR_KINDS = ("UTD", "GOLD")
_EPS = 1e-9


class ManifestError(ValueError):
    """Raised when a manifest fails to parse or validate."""


@dataclass(eq=False)
class Utterance:
    id: str
    speaker: str
    gender: str = "unknown"
    language: str = "unk"
    sample_rate: int = 16000
    duration: float = 0.0
    samples: np.ndarray | None = None
    audio_path: str | None = None
    feature_path: str | None = None
    split: str | None = None

    def load_samples(self, root: Path | str = ".") -> np.ndarray:
        if self.samples is None:
            if self.audio_path is None:
                raise ManifestError(f"utterance {self.id} has neither samples nor audio")
            self.samples, sr = read_wav(Path(root) / self.audio_path)
            if sr != self.sample_rate:
                raise ManifestError(
                    f"utterance {self.id}: wav rate {sr} != declared {self.sample_rate}"
                )
        return self.samples


@dataclass(frozen=True, order=True)
class WordToken:
    utterance: str
    start: float
    end: float
    orthography: str

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True, order=True)
class PhoneToken:
    utterance: str
    start: float
    end: float
    label: str


@dataclass(frozen=True, order=True)
class Segment:
    utterance: str
    start: float
    end: float


@dataclass(frozen=True)
class PairEntry:
    a: Segment
    b: Segment
    kind: str = "GOLD"


@dataclass(frozen=True)
class Speaker:
    id: str
    gender: str = "unknown"
    warp: float | None = None


@dataclass
class CorpusManifest:
    utterances: dict[str, Utterance]
    words: list[WordToken] = field(default_factory=list)
    phones: list[PhoneToken] = field(default_factory=list)
    pairs: list[PairEntry] = field(default_factory=list)
    speakers: dict[str, Speaker] = field(default_factory=dict)
    root: Path = Path(".")

    def __post_init__(self):
        for utt in self.utterances.values():
            if utt.speaker not in self.speakers:
                self.speakers[utt.speaker] = Speaker(utt.speaker, utt.gender)
        validate(self)

    @property
    def counts(self) -> tuple[int, int]:
        return len(self.utterances), len(self.words)

    def speaker_of(self, utt_id: str) -> str:
        return self.utterances[utt_id].speaker

    def utterances_by_speaker(self) -> dict[str, list[Utterance]]:
        out: dict[str, list[Utterance]] = {}
        for utt in sorted(self.utterances.values(), key=lambda u: u.id):
            out.setdefault(utt.speaker, []).append(utt)
        return dict(sorted(out.items()))

    def words_of(self, utt_id: str) -> list[WordToken]:
        return [w for w in self.words if w.utterance == utt_id]

    def phones_of(self, utt_id: str) -> list[PhoneToken]:
        return [p for p in self.phones if p.utterance == utt_id]

    def subset(self, utt_ids: Iterable[str]) -> "CorpusManifest":
        keep = set(utt_ids)
        return CorpusManifest(
            utterances={k: v for k, v in self.utterances.items() if k in keep},
            words=[w for w in self.words if w.utterance in keep],
            phones=[p for p in self.phones if p.utterance in keep],
            pairs=[p for p in self.pairs if p.a.utterance in keep and p.b.utterance in keep],
            speakers={
                s: spk for s, spk in self.speakers.items()
                if any(u.speaker == s for u in self.utterances.values() if u.id in keep)
            },
            root=self.root,
        )

    def split(self, name: str) -> "CorpusManifest":
        return self.subset(u.id for u in self.utterances.values() if u.split == name)


def _check_span(kind: str, ident: str, start: float, end: float, manifest: CorpusManifest, utt: str):
    if utt not in manifest.utterances:
        raise ManifestError(f"{kind} {ident}: dangling reference to utterance {utt!r}")
    duration = manifest.utterances[utt].duration
    if not (0.0 <= start < end <= duration + _EPS):
        raise ManifestError(
            f"{kind} {ident}: span [{start}, {end}] outside utterance {utt!r} of duration {duration}"
        )


def validate(manifest: CorpusManifest) -> None:
    for utt in manifest.utterances.values():
        if utt.gender not in GENDERS:
            raise ManifestError(f"utterance {utt.id}: bad gender {utt.gender!r}")
        if utt.sample_rate <= 0:
            raise ManifestError(f"utterance {utt.id}: sample rate must be positive")
        if utt.samples is not None:
            if utt.samples.size == 0 or not np.all(np.isfinite(utt.samples)):
                raise ManifestError(f"utterance {utt.id}: samples empty or non-finite")
        if utt.duration <= 0:
            raise ManifestError(f"utterance {utt.id}: non-positive duration")
    for w in manifest.words:
        _check_span("WORD", f"{w.orthography}@{w.utterance}:{w.start}", w.start, w.end, manifest, w.utterance)
    by_utt: dict[str, list[PhoneToken]] = {}
    for p in manifest.phones:
        _check_span("PHONE", f"{p.label}@{p.utterance}:{p.start}", p.start, p.end, manifest, p.utterance)
        by_utt.setdefault(p.utterance, []).append(p)
    for utt, phones in by_utt.items():
        for prev, nxt in zip(phones, phones[1:]):
            if nxt.start < prev.end - _EPS:
                raise ManifestError(f"PHONE {nxt.label}@{utt}:{nxt.start}: overlaps or out of order")
    for i, pair in enumerate(manifest.pairs):
        for seg in (pair.a, pair.b):
            _check_span("PAIR", str(i), seg.start, seg.end, manifest, seg.utterance)
        if pair.a == pair.b:
            raise ManifestError(f"PAIR {i}: segment paired with itself")
        if pair.kind not in PAIR_KINDS:
            raise ManifestError(f"PAIR {i}: unknown kind {pair.kind!r}")
    split_speakers: dict[str, set[str]] = {}
    for utt in manifest.utterances.values():
        if utt.split is not None:
            split_speakers.setdefault(utt.split, set()).add(utt.speaker)
    for (sa, a), (sb, b) in itertools.combinations(sorted(split_speakers.items()), 2):
        shared = a & b
        if shared:
            raise ManifestError(f"speaker overlap between splits {sa!r} and {sb!r}: {sorted(shared)}")


def _opt(value: str) -> str | None:
    return None if value in ("", "-") else value


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def load_manifest(path: Path | str) -> CorpusManifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    utterances: dict[str, Utterance] = {}
    speakers: dict[str, Speaker] = {}
    words, phones, pairs = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            rec = line.split("\t")
            try:
                kind = rec[0]
                if kind == "UTT":
                    _, uid, spk, gender, lang, sr, dur, audio, feats, split = rec
                    if uid in utterances:
                        raise ManifestError(f"line {lineno}: duplicate utterance id {uid!r}")
                    utterances[uid] = Utterance(
                        uid, spk, gender, lang, int(sr), float(dur),
                        audio_path=_opt(audio), feature_path=_opt(feats), split=_opt(split),
                    )
                elif kind == "SPK":
                    _, spk, gender, warp = rec
                    speakers[spk] = Speaker(spk, gender, None if _opt(warp) is None else float(warp))
                elif kind == "WORD":
                    _, utt, orth, start, end = rec
                    words.append(WordToken(utt, float(start), float(end), orth))
                elif kind == "PHONE":
                    _, utt, label, start, end = rec
                    phones.append(PhoneToken(utt, float(start), float(end), label))
                elif kind == "PAIR":
                    _, ua, sa, ea, ub, sb, eb, pkind = rec
                    pairs.append(PairEntry(
                        Segment(ua, float(sa), float(ea)), Segment(ub, float(sb), float(eb)), pkind
                    ))
                else:
                    raise ManifestError(f"line {lineno}: unknown record kind {kind!r}")
            except ValueError as exc:
                if isinstance(exc, ManifestError):
                    raise
                raise ManifestError(f"line {lineno}: malformed {rec[0]} record: {exc}") from exc
    words.sort()
    phones.sort()
    return CorpusManifest(utterances, words, phones, pairs, speakers, root=path.parent)


def format_manifest(manifest: CorpusManifest) -> str:
    lines = ["# zrsub manifest v1"]
    for spk in sorted(manifest.speakers.values(), key=lambda s: s.id):
        lines.append("\t".join(["SPK", spk.id, spk.gender, _fmt(spk.warp)]))
    for u in sorted(manifest.utterances.values(), key=lambda u: u.id):
        lines.append("\t".join([
            "UTT", u.id, u.speaker, u.gender, u.language, str(u.sample_rate),
            _fmt(float(u.duration)), _fmt(u.audio_path), _fmt(u.feature_path), _fmt(u.split),
        ]))
    for w in manifest.words:
        lines.append("\t".join(["WORD", w.utterance, w.orthography, _fmt(w.start), _fmt(w.end)]))
    for p in manifest.phones:
        lines.append("\t".join(["PHONE", p.utterance, p.label, _fmt(p.start), _fmt(p.end)]))
    for p in manifest.pairs:
        lines.append("\t".join([
            "PAIR", p.a.utterance, _fmt(p.a.start), _fmt(p.a.end),
            p.b.utterance, _fmt(p.b.start), _fmt(p.b.end), p.kind,
        ]))
    return "\n".join(lines) + "\n"


def save_manifest(manifest: CorpusManifest, path: Path | str, write_audio: bool = True) -> None:
    """Write ``manifest`` to ``path``; in-memory audio goes to ``wav/<id>.wav`` beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if write_audio:
        for utt in manifest.utterances.values():
            if utt.samples is not None:
                rel = f"wav/{utt.id}.wav"
                write_wav(path.parent / rel, utt.samples, utt.sample_rate)
                utt.audio_path = rel
    path.write_text(format_manifest(manifest), encoding="utf-8")


def read_wav(path: Path | str) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ManifestError(f"{path}: only mono 16-bit PCM is supported")
        sr = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, sr


def write_wav(path: Path | str, samples: np.ndarray, sample_rate: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


def eligible_word_tokens(
    manifest: CorpusManifest, min_chars: int = 5, min_dur: float = 0.5
) -> list[WordToken]:
    """Word tokens long enough in characters and seconds, sorted by (utterance, start)."""
    keep = [
        w for w in manifest.words
        if len(w.orthography) >= min_chars and w.duration >= min_dur - _EPS
    ]
    return sorted(keep, key=lambda w: (w.utterance, w.start, w.end, w.orthography))


@dataclass(frozen=True)
class LabeledPair:
    a: WordToken
    b: WordToken
    same_word: bool
    same_speaker: bool

    @property
    def label(self) -> str:
        return ("SW" if self.same_word else "DW") + "-" + ("SP" if self.same_speaker else "DP")

    @property
    def swdp(self) -> bool:
        return self.same_word and not self.same_speaker


def generate_eval_pairs(manifest: CorpusManifest, tokens: Sequence[WordToken]) -> list[LabeledPair]:
    """All unordered token pairs labelled same/different word and speaker."""
    if len(tokens) < 2:
        raise ValueError("need at least two tokens to form pairs")
    spk = {w.utterance: manifest.speaker_of(w.utterance) for w in tokens}
    return [
        LabeledPair(a, b, a.orthography == b.orthography, spk[a.utterance] == spk[b.utterance])
        for a, b in itertools.combinations(tokens, 2)
    ]


def pair_label_counts(pairs: Iterable[LabeledPair]) -> Counter:
    return Counter(p.label for p in pairs)


def gold_pairs(manifest: CorpusManifest, min_chars: int = 5, min_dur: float = 0.5) -> list[PairEntry]:
    """All same-word couples among eligible tokens, as a GOLD pair list."""
    tokens = eligible_word_tokens(manifest, min_chars, min_dur)
    by_word: dict[str, list[WordToken]] = {}
    for w in tokens:
        by_word.setdefault(w.orthography, []).append(w)
    out = []
    for word in sorted(by_word):
        for a, b in itertools.combinations(by_word[word], 2):
            out.append(PairEntry(Segment(a.utterance, a.start, a.end),
                                 Segment(b.utterance, b.start, b.end), "GOLD"))
    return out


def n_choose_2(n: int) -> int:
    return math.comb(n, 2)
