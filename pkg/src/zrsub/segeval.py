"""Scoring of unsupervised segmentation and clustering against forced alignments."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import CorpusManifest, PhoneToken, WordToken

_EPS = 1e-9
UNMAPPED = "<unk>"


@dataclass(frozen=True, order=True)
class HypToken:
    utterance: str
    start: float
    end: float
    cluster: str


@dataclass
class Segmentation:
    tokens: list[HypToken]
    full_coverage: bool = False

    def __post_init__(self):
        self.tokens = sorted(self.tokens)
        by_utt = self.by_utterance()
        for utt, toks in by_utt.items():
            for t in toks:
                if not t.start < t.end:
                    raise ValueError(f"token {t} has non-positive duration")
            for a, b in zip(toks, toks[1:]):
                if b.start < a.end - _EPS:
                    raise ValueError(f"overlapping tokens in {utt}: {a} / {b}")

    def by_utterance(self) -> dict[str, list[HypToken]]:
        out: dict[str, list[HypToken]] = defaultdict(list)
        for t in self.tokens:
            out[t.utterance].append(t)
        return dict(out)

    @property
    def clusters(self) -> list[str]:
        return sorted({t.cluster for t in self.tokens})


def load_segmentation(path: Path | str) -> Segmentation:
    tokens = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            utt, start, end, cluster = line.split("\t")
            tokens.append(HypToken(utt, float(start), float(end), cluster))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: expected utterance, start, end, cluster") from exc
    return Segmentation(tokens)


def save_segmentation(seg: Segmentation, path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in seg.tokens:
            fh.write(f"{t.utterance}\t{t.start:.6f}\t{t.end:.6f}\t{t.cluster}\n")


# ---------------------------------------------------------------- embeddings

def downsample_indices(T: int, n: int) -> np.ndarray:
    """``n`` frame indices spread evenly over ``[0, T-1]``, rounded half up."""
    if T < 1:
        raise ValueError("empty segment")
    if n < 1:
        raise ValueError("need at least one output frame")
    if n == 1:
        return np.array([(T - 1) // 2])
    return np.floor(np.arange(n) * (T - 1) / (n - 1) + 0.5).astype(int)


def embed_downsample(segment: np.ndarray, n: int = 10) -> np.ndarray:
    segment = np.asarray(segment)
    if segment.ndim != 2 or segment.shape[0] == 0:
        raise ValueError("empty segment")
    return segment[downsample_indices(segment.shape[0], n)].reshape(-1)


# ---------------------------------------------------------------- cluster mapping

def _words_by_utt(words: Sequence[WordToken]) -> dict[str, list[WordToken]]:
    out: dict[str, list[WordToken]] = defaultdict(list)
    for w in sorted(words):
        out[w.utterance].append(w)
    return out


def overlapped_word(token: HypToken, words: Sequence[WordToken]) -> str | None:
    """Orthography of the true word overlapping the token most (earlier start on ties)."""
    best, best_ov = None, 0.0
    for w in words:
        ov = min(token.end, w.end) - max(token.start, w.start)
        if ov > best_ov + _EPS:
            best, best_ov = w.orthography, ov
    return best


def token_words(seg: Segmentation, words: Sequence[WordToken]) -> list[tuple[HypToken, str | None]]:
    by_utt = _words_by_utt(words)
    return [(t, overlapped_word(t, by_utt.get(t.utterance, []))) for t in seg.tokens]


def match_counts(seg: Segmentation, words: Sequence[WordToken]) -> dict[str, Counter]:
    counts: dict[str, Counter] = defaultdict(Counter)
    for t, w in token_words(seg, words):
        counts[t.cluster]  # register clusters without overlap too
        if w is not None:
            counts[t.cluster][w] += 1
    return dict(counts)


def map_clusters(seg: Segmentation, words: Sequence[WordToken], mode: str = "many_to_one") -> dict[str, str | None]:
    """Cluster -> word type.

    many_to_one: every cluster takes its majority word (ties lexicographic).
    one_to_one_greedy: clusters in decreasing order of their top match
    count (ties by cluster id) each take their best word type not yet
    taken (ties lexicographic); clusters left without one stay unmapped.
    """
    if not seg.tokens:
        raise ValueError("empty segmentation")
    counts = match_counts(seg, words)
    mapping: dict[str, str | None] = {c: None for c in counts}

    def best(cnt, exclude=()):
        avail = [(-n, w) for w, n in cnt.items() if w not in exclude]
        return min(avail)[1] if avail else None

    if mode == "many_to_one":
        for c, cnt in counts.items():
            mapping[c] = best(cnt)
    elif mode == "one_to_one_greedy":
        order = sorted(counts, key=lambda c: (-max(counts[c].values(), default=0), c))
        taken: set[str] = set()
        for c in order:
            w = best(counts[c], taken)
            if w is not None:
                mapping[c] = w
                taken.add(w)
    else:
        raise ValueError(f"unknown mapping mode {mode!r}")
    return dict(sorted(mapping.items()))


def cluster_purity(seg: Segmentation, mapping: Mapping[str, str | None], words: Sequence[WordToken]) -> float:
    pairs = token_words(seg, words)
    if not pairs:
        raise ValueError("no tokens")
    missing = {t.cluster for t, _ in pairs} - set(mapping)
    if missing:
        raise ValueError(f"mapping lacks clusters {sorted(missing)}")
    good = sum(1 for t, w in pairs if w is not None and mapping[t.cluster] == w)
    return 100.0 * good / len(pairs)


def edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def unsupervised_wer(seg: Segmentation, mapping: Mapping[str, str | None], words: Sequence[WordToken]) -> float:
    """Corpus-level WER: total edits over total reference words."""
    refs = _words_by_utt(words)
    n_ref = sum(len(v) for v in refs.values())
    if n_ref == 0:
        raise ValueError("empty ground truth")
    hyps = seg.by_utterance()
    edits = 0
    for utt in sorted(set(refs) | set(hyps)):
        ref = [w.orthography for w in refs.get(utt, [])]
        hyp = [mapping.get(t.cluster) or UNMAPPED for t in hyps.get(utt, [])]
        edits += edit_distance(ref, hyp)
    return 100.0 * edits / n_ref


# ---------------------------------------------------------------- boundaries

def _tolerance(b: float, phones: Sequence[PhoneToken]) -> tuple[float, float]:
    """Open interval around a true boundary: the phone before it and the phone after it."""
    lo, hi = b, b
    for p in phones:
        if abs(p.end - b) < 1e-6:
            lo = p.start
        if abs(p.start - b) < 1e-6:
            hi = p.end
        if p.start < b - 1e-6 and p.end > b + 1e-6:  # boundary inside a phone
            lo, hi = p.start, p.end
    return lo, hi


def _within(h: float, tol: tuple[float, float], b: float) -> bool:
    return abs(h - b) < 1e-6 or tol[0] < h < tol[1]


def _greedy_match(hyp: Sequence[float], ref: Sequence[float], ok) -> int:
    couples = sorted((abs(h - r), i, j) for i, h in enumerate(hyp) for j, r in enumerate(ref) if ok(i, j))
    used_h, used_r, n = set(), set(), 0
    for _, i, j in couples:
        if i not in used_h and j not in used_r:
            used_h.add(i)
            used_r.add(j)
            n += 1
    return n


@dataclass(frozen=True)
class FScore:
    precision: float
    recall: float
    fscore: float


def _f(matched_h: int, n_h: int, matched_r: int, n_r: int) -> FScore:
    p = matched_h / n_h if n_h else 0.0
    r = matched_r / n_r if n_r else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return FScore(p, r, f)


def _phones_by_utt(phones: Sequence[PhoneToken]) -> dict[str, list[PhoneToken]]:
    out: dict[str, list[PhoneToken]] = defaultdict(list)
    for p in sorted(phones):
        out[p.utterance].append(p)
    return out


def boundary_fscore(seg: Segmentation, manifest: CorpusManifest) -> FScore:
    """Word boundary P/R/F; utterance edges are not boundaries.

    A hypothesised boundary is correct when it falls strictly inside the
    true phone on either side of a true word boundary; every true boundary
    can be credited once.
    """
    refs = _words_by_utt(manifest.words)
    phones = _phones_by_utt(manifest.phones)
    hyps = seg.by_utterance()
    n_h = n_r = matched = 0
    for utt in sorted(set(refs) | set(hyps)):
        dur = manifest.utterances[utt].duration

        def interior(times):
            return sorted({round(t, 6) for t in times if _EPS < t < dur - 1e-6})

        r_b = interior([x for w in refs.get(utt, []) for x in (w.start, w.end)])
        h_b = interior([x for t in hyps.get(utt, []) for x in (t.start, t.end)])
        tols = [_tolerance(b, phones.get(utt, [])) for b in r_b]
        matched += _greedy_match(h_b, r_b, lambda i, j: _within(h_b[i], tols[j], r_b[j]))
        n_h += len(h_b)
        n_r += len(r_b)
    return _f(matched, n_h, matched, n_r)


def token_fscore(seg: Segmentation, manifest: CorpusManifest) -> FScore:
    """A true word is found when one hypothesised token matches both its edges."""
    refs = _words_by_utt(manifest.words)
    phones = _phones_by_utt(manifest.phones)
    hyps = seg.by_utterance()
    n_h = n_r = matched = 0
    for utt in sorted(set(refs) | set(hyps)):
        r = refs.get(utt, [])
        h = hyps.get(utt, [])
        ph = phones.get(utt, [])
        tols = [(_tolerance(w.start, ph), _tolerance(w.end, ph)) for w in r]

        def ok(i, j):
            return _within(h[i].start, tols[j][0], r[j].start) and _within(h[i].end, tols[j][1], r[j].end)

        starts_h = [t.start for t in h]
        starts_r = [w.start for w in r]
        matched += _greedy_match(starts_h, starts_r, ok)
        n_h += len(h)
        n_r += len(r)
    return _f(matched, n_h, matched, n_r)


def attribute_purity(seg: Segmentation, attribute: Mapping[str, str]) -> float:
    """Token-weighted share of each cluster's majority attribute value (utterance -> value)."""
    if not seg.tokens:
        raise ValueError("no tokens")
    per_cluster: dict[str, Counter] = defaultdict(Counter)
    for t in seg.tokens:
        per_cluster[t.cluster][attribute.get(t.utterance, "unknown")] += 1
    top = sum(max(c.values()) for c in per_cluster.values())
    return 100.0 * top / len(seg.tokens)


@dataclass
class SegEvalReport:
    wer_one_to_one: float
    wer_many_to_one: float
    token_fscore: float
    boundary_fscore: float
    cluster_purity: float
    gender_purity: float
    speaker_purity: float
    wer_normalization: str = "corpus-wide reference word count"

    def to_dict(self) -> dict:
        return {k: (round(v, 10) if isinstance(v, float) else v) for k, v in asdict(self).items()}


def evaluate_segmentation(seg: Segmentation, manifest: CorpusManifest) -> SegEvalReport:
    words = manifest.words
    m2o = map_clusters(seg, words, "many_to_one")
    o2o = map_clusters(seg, words, "one_to_one_greedy")
    return SegEvalReport(
        wer_one_to_one=unsupervised_wer(seg, o2o, words),
        wer_many_to_one=unsupervised_wer(seg, m2o, words),
        token_fscore=token_fscore(seg, manifest).fscore,
        boundary_fscore=boundary_fscore(seg, manifest).fscore,
        cluster_purity=cluster_purity(seg, m2o, words),
        gender_purity=attribute_purity(seg, {u: v.gender for u, v in manifest.utterances.items()}),
        speaker_purity=attribute_purity(seg, {u: v.speaker for u, v in manifest.utterances.items()}),
    )


def equal_length_segmentation(manifest: CorpusManifest, length: float = 0.5, n_clusters: int = 10) -> Segmentation:
    """Smoke-test segmenter: fixed-length chunks, cluster id = chunk position modulo ``n_clusters``."""
    tokens = []
    for uid, utt in sorted(manifest.utterances.items()):
        n = max(1, int(round(utt.duration / length)))
        edges = np.linspace(0.0, utt.duration, n + 1)
        for k in range(n):
            tokens.append(HypToken(uid, round(float(edges[k]), 6), round(float(edges[k + 1]), 6),
                                   f"c{k % n_clusters}"))
    return Segmentation(tokens, full_coverage=True)
