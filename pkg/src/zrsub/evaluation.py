"""Intrinsic evaluation: same-different AP, ABX error rates, similarity matrices."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .align import cosine_distance_matrix, dtw_cost
from .corpus import CorpusManifest, LabeledPair, PhoneToken, Segment

NORMALIZATION = "dtw cost divided by path length"


class EvaluationError(ValueError):
    pass


# ---------------------------------------------------------------- same-different

@dataclass
class PrecisionRecallCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    average_precision: float
    n_pairs: int = 0
    n_swdp: int = 0

    def to_dict(self) -> dict:
        return {
            "average_precision": round(float(self.average_precision), 10),
            "n_pairs": self.n_pairs,
            "n_swdp": self.n_swdp,
            "cost_normalization": NORMALIZATION,
            "curve": [
                [round(float(t), 10), round(float(p), 10), round(float(r), 10)]
                for t, p, r in zip(self.thresholds, self.precision, self.recall)
            ],
        }


def precision_recall(costs: Sequence[float], same_word: Sequence[bool], swdp: Sequence[bool]) -> PrecisionRecallCurve:
    """Threshold sweep over every distinct cost, ties resolved together.

    Precision counts every same-word match; recall counts same-word
    different-speaker matches only. AP sums precision times recall gain
    over the sweep.
    """
    costs = np.asarray(costs, dtype=np.float64)
    sw = np.asarray(same_word, dtype=bool)
    dp = np.asarray(swdp, dtype=bool)
    if np.any(dp & ~sw):
        raise EvaluationError("an SWDP pair must also be same-word")
    n_swdp = int(dp.sum())
    if n_swdp == 0:
        raise EvaluationError("no same-word different-speaker pairs: average precision undefined")
    order = np.argsort(costs, kind="stable")
    c, sw, dp = costs[order], sw[order], dp[order]
    last = np.r_[np.flatnonzero(np.diff(c) != 0), len(c) - 1]  # end of each tie group
    m_all = last + 1
    m_sw = np.cumsum(sw)[last]
    m_dp = np.cumsum(dp)[last]
    precision = m_sw / m_all
    recall = m_dp / n_swdp
    gain = np.diff(np.r_[0.0, recall])
    ap = float(np.sum(precision * gain))
    return PrecisionRecallCurve(c[last], precision, recall, ap, len(c), n_swdp)


def pair_costs(pairs: Sequence[LabeledPair], store, distance: str = "cosine") -> np.ndarray:
    cache: dict = {}

    def seg(w):
        key = (w.utterance, w.start, w.end)
        if key not in cache:
            cache[key] = np.ascontiguousarray(store.segment(*key))
        return cache[key]

    return np.array([dtw_cost(seg(p.a), seg(p.b), distance) for p in pairs])


def same_different_ap(pairs: Sequence[LabeledPair], store, distance: str = "cosine") -> PrecisionRecallCurve:
    costs = pair_costs(pairs, store, distance)
    return precision_recall(costs, [p.same_word for p in pairs], [p.swdp for p in pairs])


# ---------------------------------------------------------------- ABX

@dataclass(frozen=True)
class TriphoneItem:
    segment: Segment
    phones: tuple[str, str, str]
    speaker: str


@dataclass(frozen=True)
class AbxTriplet:
    a: TriphoneItem
    b: TriphoneItem
    x: TriphoneItem
    condition: str  # within | cross

    @property
    def contrast(self) -> tuple[str, str, str, str]:
        """(left context, right context, A's central phone, B's central phone)."""
        return (self.a.phones[0], self.a.phones[2], self.a.phones[1], self.b.phones[1])

    @property
    def speaker_cell(self) -> tuple[str, str]:
        return (self.a.speaker, self.x.speaker)


def triphone_items(manifest: CorpusManifest, skip: Iterable[str] = ("sil",)) -> list[TriphoneItem]:
    skip = set(skip)
    by_utt: dict[str, list[PhoneToken]] = {}
    for p in manifest.phones:
        by_utt.setdefault(p.utterance, []).append(p)
    items = []
    for utt in sorted(by_utt):
        phones = by_utt[utt]
        spk = manifest.speaker_of(utt)
        for p, q, r in zip(phones, phones[1:], phones[2:]):
            if {p.label, q.label, r.label} & skip:
                continue
            items.append(TriphoneItem(Segment(utt, p.start, r.end), (p.label, q.label, r.label), spk))
    return items


def build_abx_triplets(manifest: CorpusManifest, mode: str = "both", max_per_cell: int | None = None,
                       seed: int = 0) -> list[AbxTriplet]:
    """Every minimal-pair triphone triplet, optionally capped per cell.

    A and B share a speaker and both contexts and differ in the central
    phone; X repeats A's triphone, spoken by the same speaker (within,
    never A's own token) or by another speaker (cross). A cell is one
    (contrast, speaker of A/B, speaker of X) combination; with
    ``max_per_cell`` a seeded sample of each cell is kept.
    """
    if mode not in ("within", "cross", "both"):
        raise ValueError(f"unknown ABX mode {mode!r}")
    groups: dict[tuple, list[TriphoneItem]] = {}
    for it in triphone_items(manifest):
        groups.setdefault((it.phones[0], it.phones[2], it.phones[1], it.speaker), []).append(it)
    speakers = sorted({k[3] for k in groups})
    contexts = sorted({(k[0], k[1]) for k in groups})
    rng = np.random.default_rng(seed)
    out: list[AbxTriplet] = []
    for left, right in contexts:
        centrals = sorted({k[2] for k in groups if k[0] == left and k[1] == right})
        for a_ph, b_ph in itertools.permutations(centrals, 2):
            for s in speakers:
                A_items = groups.get((left, right, a_ph, s), [])
                B_items = groups.get((left, right, b_ph, s), [])
                if not A_items or not B_items:
                    continue
                x_speakers = []
                if mode in ("within", "both"):
                    x_speakers.append((s, "within"))
                if mode in ("cross", "both"):
                    x_speakers += [(t, "cross") for t in speakers if t != s]
                for t, cond in x_speakers:
                    X_items = groups.get((left, right, a_ph, t), [])
                    cell = [
                        AbxTriplet(A, B, X, cond)
                        for A in A_items for B in B_items for X in X_items if X != A
                    ]
                    if max_per_cell is not None and len(cell) > max_per_cell:
                        keep = np.sort(rng.choice(len(cell), max_per_cell, replace=False))
                        cell = [cell[i] for i in keep]
                    out.extend(cell)
    return out


@dataclass
class AbxResult:
    within: float | None
    cross: float | None
    cells: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        r = lambda v: None if v is None else round(float(v), 10)
        return {"within_speaker_error": r(self.within), "cross_speaker_error": r(self.cross),
                "n_cells": len(self.cells)}


def abx_error_rates(triplets: Sequence[AbxTriplet], store, distance: str = "cosine") -> AbxResult:
    """Error percentages per condition.

    X counts as A when cost(A, X) < cost(B, X); a tie scores half an error.
    Averaging: over triplets within each (contrast, speaker cell), then over
    contrasts within a speaker cell, then over speaker cells.
    """
    if not triplets:
        raise EvaluationError("empty triplet set")
    seg_cache: dict = {}
    cost_cache: dict = {}

    def seg(item: TriphoneItem):
        k = item.segment
        if k not in seg_cache:
            seg_cache[k] = np.ascontiguousarray(store.segment(k.utterance, k.start, k.end))
        return seg_cache[k]

    def cost(p: TriphoneItem, q: TriphoneItem) -> float:
        key = (p.segment, q.segment) if p.segment <= q.segment else (q.segment, p.segment)
        if key not in cost_cache:
            cost_cache[key] = dtw_cost(seg(p), seg(q), distance)
        return cost_cache[key]

    cells: dict[tuple, list[float]] = {}
    for t in triplets:
        ax, bx = cost(t.a, t.x), cost(t.b, t.x)
        err = 0.0 if ax < bx else (0.5 if ax == bx else 1.0)
        cells.setdefault((t.condition, t.speaker_cell, t.contrast), []).append(err)
    cell_rows = []
    by_speaker: dict[tuple, list[float]] = {}
    for (cond, spk_cell, contrast), errs in sorted(cells.items()):
        m = float(np.mean(errs))
        cell_rows.append({"condition": cond, "speakers": list(spk_cell), "contrast": list(contrast),
                          "n": len(errs), "error": 100.0 * m})
        by_speaker.setdefault((cond, spk_cell), []).append(m)
    result = {}
    for cond in ("within", "cross"):
        per_spk = [np.mean(v) for (c, _), v in sorted(by_speaker.items()) if c == cond]
        result[cond] = 100.0 * float(np.mean(per_spk)) if per_spk else None
    return AbxResult(result["within"], result["cross"], cell_rows)


# ---------------------------------------------------------------- similarity matrices

def similarity_matrix(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Frame-wise cosine similarity, rows indexed by X."""
    X = getattr(X, "data", X)
    Y = getattr(Y, "data", Y)
    return 1.0 - cosine_distance_matrix(X, Y)


def write_pgm(path: Path | str, S: np.ndarray, clip: float = 0.4) -> None:
    """8-bit grayscale image; values below ``clip`` map to black, 1.0 to white."""
    scaled = (np.clip(S, clip, 1.0) - clip) / (1.0 - clip)
    pix = np.round(255 * scaled).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pix.tobytes())


def read_pgm(path: Path | str) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def write_similarity_csv(path: Path | str, S: np.ndarray) -> None:
    np.savetxt(path, S, delimiter=",", fmt="%.6f")


def block_mean_similarity(S: np.ndarray, spans_x: Sequence[tuple[int, int]],
                          spans_y: Sequence[tuple[int, int]]) -> float:
    """Mean similarity inside the blocks pairing corresponding phone spans."""
    if len(spans_x) != len(spans_y):
        raise ValueError("phone span lists must correspond one to one")
    total, count = 0.0, 0
    for (a0, a1), (b0, b1) in zip(spans_x, spans_y):
        block = S[a0:a1, b0:b1]
        total += block.sum()
        count += block.size
    return total / count if count else float("nan")
