"""Synthetic trend experiments: VTLN recovery, VTLN and cAE gains, multilingual BNF gains, metric agreement.

Every experiment is a pure function of its setup and seed. Reports hold
only rounded numbers and booleans so that re-runs serialize identically;
timings go to the log.
"""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import bnf, cae
from .corpus import CorpusManifest, eligible_word_tokens, generate_eval_pairs, gold_pairs
from .dsp import BNF_INPUT, MfccPipeline
from .evaluation import abx_error_rates, build_abx_triplets, same_different_ap
from .synth import CONSONANTS, VOWELS, LanguageSpec, SpeakerSpec, SynthConfig, simple_config, synth_corpus
from .vtln import train_vtln, utterance_powers, warped_features

log = logging.getLogger(__name__)

MARGIN = 0.02
WARP_TOLERANCE = 0.04
RECOVERY_SHARE = 0.90
GROUPS = ("vtln", "table2", "fig3", "table4")


@contextmanager
def stage(name: str):
    t0 = time.perf_counter()
    log.info("stage %s: start", name)
    yield
    log.info("stage %s: done in %.1fs", name, time.perf_counter() - t0)


def _r(x) -> float | None:
    return None if x is None else round(float(x), 6)


# ---------------------------------------------------------------- setups

@dataclass(frozen=True)
class Table2Setup:
    n_speakers: int = 14
    eval_speakers: int = 6
    warps: tuple[float, ...] = (0.90, 1.00, 1.10)
    syllable_inventory: int = 6
    idiosyncrasy: float = 0.06
    token_jitter: float = 0.05
    snr_db: tuple[float, float] = (6.0, 14.0)
    vtln_components: int = 32
    vtln_rounds: int = 5
    cae: cae.CaeConfig = cae.DESK_CAE


@dataclass(frozen=True)
class VtlnSetup:
    """Warp-recovery corpus: same speaker design as Table 2, less noise."""
    n_speakers: int = 14
    eval_speakers: int = 6
    warps: tuple[float, ...] = (0.90, 1.00, 1.10)
    syllable_inventory: int = 6
    idiosyncrasy: float = 0.06
    token_jitter: float = 0.05
    snr_db: tuple[float, float] = (12.0, 20.0)
    vtln_components: int = 32
    vtln_rounds: int = 5


@dataclass(frozen=True)
class Fig3Setup:
    target_vowels: int = 6
    target_consonants: int = 8
    target_speakers: int = 6
    target_warps: tuple[float, ...] = (0.82, 0.91, 1.00, 1.09, 1.18)
    target_lexicon: int = 20
    target_syllables: int = 6
    drop_consonants: int = 3  # target consonants each training language lacks (plus one vowel)
    train_speakers: int = 8
    train_warps: tuple[float, ...] = (0.82, 0.88, 0.94, 1.00, 1.06, 1.12, 1.18)
    train_lexicon: int = 60
    n_languages: int = 3
    snr_db: tuple[float, float] = (4.0, 10.0)
    target_snr_db: tuple[float, float] = (4.0, 10.0)
    idiosyncrasy: float = 0.06
    token_jitter: float = 0.05
    vtln_components: int = 32
    vtln_rounds: int = 5
    abx_per_cell: int = 4
    bnf_languages: tuple[int, ...] = (1, 2, 3)
    orders: tuple[tuple[int, ...], ...] = ((1, 2, 3), (3, 2, 1))  # languages are added in each order
    bnf_vtln: bool = True
    bnf: bnf.BnfConfig = bnf.DESK_BNF


# ---------------------------------------------------------------- table 2 and VTLN recovery

def table2_corpus(setup: Table2Setup | VtlnSetup, seed: int) -> CorpusManifest:
    cfg = simple_config(
        setup.n_speakers, warps=setup.warps, eval_speakers=setup.eval_speakers,
        syllable_inventory=setup.syllable_inventory, snr_db=setup.snr_db, seed=seed,
        idiosyncrasy=setup.idiosyncrasy, token_jitter=setup.token_jitter,
    )
    return synth_corpus(cfg, seed)


def warp_recovery(estimated: dict[str, float], true: dict[str, float], tol: float = WARP_TOLERANCE) -> float:
    """Share of speakers whose estimate lies within ``tol`` of the warp it should undo."""
    hits = [abs(estimated[s] - w) <= tol + 1e-9 for s, w in sorted(true.items())]
    return sum(hits) / len(hits)


def run_vtln_recovery(seed: int, setup: VtlnSetup = VtlnSetup()) -> dict:
    with stage("vtln/synth"):
        m = table2_corpus(setup, seed)
    with stage("vtln/train"):
        model = train_vtln(m, MfccPipeline(), setup.vtln_components, setup.vtln_rounds, seed=seed)
    true = {k: s.warp for k, s in m.speakers.items()}
    return {
        "warps": {k: {"true": _r(true[k]), "estimated": _r(model.warps[k])} for k in sorted(true)},
        "recovery_per_round": [_r(warp_recovery(h, true)) for h in model.history],
        "recovery": _r(warp_recovery(model.warps, true)),
    }


def run_table2(seed: int, setup: Table2Setup = Table2Setup()) -> dict:
    with stage("table2/synth"):
        m = table2_corpus(setup, seed)
    train, ev = m.split("train"), m.split("eval")
    pairs = generate_eval_pairs(ev, eligible_word_tokens(ev))
    pipe = MfccPipeline()
    powers = utterance_powers(m, pipe)
    with stage("table2/vtln"):
        model = train_vtln(m, pipe, setup.vtln_components, setup.vtln_rounds, seed=seed, powers=powers)
    true = {k: s.warp for k, s in m.speakers.items()}
    raw = warped_features(m, {}, pipe, powers)
    norm = warped_features(m, model.warps, pipe, powers)
    gp = gold_pairs(train)
    ap = {"mfcc": same_different_ap(pairs, raw).average_precision,
          "mfcc+vtln": same_different_ap(pairs, norm).average_precision}
    for name, store in (("cae/gold/mfcc", raw), ("cae/gold/mfcc+vtln", norm)):
        with stage(f"table2/{name}"):
            net = cae.train_cae(train, gp, store, setup.cae, seed).net
            ap[name] = same_different_ap(pairs, cae.extract_store(net, store)).average_precision
    return {
        "n_eval_pairs": len(pairs),
        "n_gold_pairs": len(gp),
        "warps": {k: {"true": _r(true[k]), "estimated": _r(model.warps[k])} for k in sorted(true)},
        "recovery": _r(warp_recovery(model.warps, true)),
        "ap": {k: _r(v) for k, v in ap.items()},
    }


# ---------------------------------------------------------------- fig 3 and table 4

def fig3_languages(setup: Fig3Setup, seed: int) -> dict[str, tuple[str, ...]]:
    """Target inventory plus training languages that each miss a different slice of it."""
    rng = np.random.default_rng(seed)
    vowels, cons = list(VOWELS), list(CONSONANTS)
    rng.shuffle(vowels)
    rng.shuffle(cons)
    nv, nc = setup.target_vowels, setup.target_consonants
    tv, tc = vowels[:nv], cons[:nc]
    ov, oc = vowels[nv:], cons[nc:]
    langs = {"target": tuple(tv + tc)}
    for k in range(setup.n_languages):
        keep_v = [p for i, p in enumerate(tv) if i != k % nv]
        dropped = {(setup.drop_consonants * k + j) % nc for j in range(setup.drop_consonants)}
        keep_c = [p for i, p in enumerate(tc) if i not in dropped]
        extra_v = [ov[(2 * k + j) % len(ov)] for j in range(2)] if ov else []
        extra_c = [oc[(3 * k + j) % len(oc)] for j in range(3)] if oc else []
        langs[f"L{k + 1}"] = tuple(dict.fromkeys(keep_v + keep_c + extra_v + extra_c))
    return langs


def fig3_corpus(setup: Fig3Setup, seed: int) -> CorpusManifest:
    langs = fig3_languages(setup, seed)
    specs, speakers = [], []
    rng = np.random.default_rng(seed + 100)
    for name, phones in langs.items():
        target = name == "target"
        specs.append(LanguageSpec(name, phones,
                                  lexicon_size=setup.target_lexicon if target else setup.train_lexicon,
                                  syllable_inventory=setup.target_syllables if target else 0))
        n = setup.target_speakers if target else setup.train_speakers
        warps = setup.target_warps if target else setup.train_warps
        for i in range(n):
            speakers.append(SpeakerSpec(
                f"{name}{i:02d}", "F" if i % 2 == 0 else "M", name,
                warp=warps[(i + len(name)) % len(warps)],
                tilt_db_per_khz=float(rng.uniform(-3, 3)),
                snr_db=float(rng.uniform(*(setup.target_snr_db if target else setup.snr_db))),
            ))
    cfg = SynthConfig(tuple(specs), tuple(speakers), idiosyncrasy=setup.idiosyncrasy,
                      token_jitter=setup.token_jitter)
    return synth_corpus(cfg, seed)


def _language(m: CorpusManifest, lang: str) -> CorpusManifest:
    return m.subset([u.id for u in m.utterances.values() if u.language == lang])


def run_fig3_table4(seed: int, setup: Fig3Setup = Fig3Setup(), table4: bool = True) -> tuple[dict, dict | None]:
    """BNFs from growing sets of training languages, scored on the held-out target.

    With ``setup.bnf_vtln`` every language's BNF input is warped with VTLN
    factors estimated without labels on that language alone, standing in
    for the speaker adaptation the BNF network would otherwise get.
    """
    top = max(setup.bnf_languages)
    for order in setup.orders:
        if len(order) < top or not set(order) <= set(range(1, setup.n_languages + 1)):
            raise ValueError(f"language order {order} cannot supply {top} of L1..L{setup.n_languages}")
    with stage("fig3/synth"):
        m = fig3_corpus(setup, seed)
    pipe = MfccPipeline()
    bnf_pipe = MfccPipeline(BNF_INPUT, deltas=False)  # same framing, so power spectra are shared

    def prepare(name):
        sub = _language(m, name)
        powers = utterance_powers(sub, pipe)
        warps = {}
        if setup.bnf_vtln or (name == "target" and table4):
            with stage(f"fig3/vtln-{name}"):
                warps = train_vtln(sub, pipe, setup.vtln_components, setup.vtln_rounds, seed=seed,
                                   powers=powers).warps
        bnf_in = warped_features(sub, warps if setup.bnf_vtln else {}, bnf_pipe, powers)
        return sub, powers, warps, bnf_in

    target, powers, target_warps, target_in = prepare("target")
    pairs = generate_eval_pairs(target, eligible_word_tokens(target))
    mfcc = warped_features(target, {}, pipe, powers)

    needed = sorted({k for order in setup.orders for n in setup.bnf_languages for k in order[:n]})
    framesets = {}
    for k in needed:
        sub, _, _, store = prepare(f"L{k}")
        xs, ys, classes = bnf.frame_labels(sub, store)
        framesets[k] = bnf.LabeledFrameSet(f"L{k}", xs, ys, classes)

    ap = {"mfcc": same_different_ap(pairs, mfcc).average_precision}
    per_set, stores = {}, {}
    for n in setup.bnf_languages:
        for order in setup.orders:
            key = tuple(sorted(order[:n]))
            if key in per_set:
                continue
            with stage(f"fig3/bnf-{'+'.join(f'L{k}' for k in key)}"):
                model = bnf.train_multilingual([framesets[k] for k in key], setup.bnf, seed)
                stores[key] = bnf.extract_store(model.net, target_in)
                per_set[key] = same_different_ap(pairs, stores[key]).average_precision
        ap[f"bnf-{n}"] = float(np.mean([per_set[tuple(sorted(o[:n]))] for o in setup.orders]))
    fig3 = {"n_eval_pairs": len(pairs), "ap": {k: _r(v) for k, v in ap.items()},
            "per_language_set": {"+".join(f"L{k}" for k in key): _r(v) for key, v in per_set.items()}}
    if not table4:
        return fig3, None

    top_key = tuple(sorted(setup.orders[0][:top]))
    sets = {"mfcc": mfcc, "mfcc+vtln": warped_features(target, target_warps, pipe, powers), "bnf": stores[top_key]}
    triplets = build_abx_triplets(target, "cross", max_per_cell=setup.abx_per_cell, seed=seed)
    t4 = {"bnf_languages": top, "n_triplets": len(triplets), "ap": {}, "abx_cross": {}}
    with stage("table4/eval"):
        for name, store in sets.items():
            t4["ap"][name] = _r(per_set[top_key] if name == "bnf"
                                else same_different_ap(pairs, store).average_precision)
            t4["abx_cross"][name] = _r(abx_error_rates(triplets, store).cross)
    return fig3, t4


# ---------------------------------------------------------------- checks

@dataclass
class Check:
    name: str
    group: str
    passed: bool
    value: float | list | None
    requirement: str


def _margin(name, group, hi, lo, label):
    d = hi - lo
    return Check(name, group, bool(d >= MARGIN - 1e-12), _r(d), f"{label} >= {MARGIN}")


def rank_order(values: dict[str, float], reverse: bool = False) -> list[str]:
    return sorted(values, key=lambda k: (-values[k] if reverse else values[k], k))


def table4_agreement(t4: dict) -> Check:
    """AP ranking (descending) must equal ABX ranking (ascending error); ties break agreement."""
    ap, err = t4["ap"], t4["abx_cross"]
    distinct = len(set(ap.values())) == len(ap) and len(set(err.values())) == len(err)
    by_ap, by_err = rank_order(ap, reverse=True), rank_order(err)
    return Check("rank_agreement", "table4", bool(distinct and by_ap == by_err), by_ap,
                 f"AP order {by_ap} equals ABX order {by_err}")


@dataclass
class TrendReport:
    seed: int
    results: dict = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [f"{c.group}/{c.name}" for c in self.checks if not c.passed]

    def to_json(self) -> str:
        body = {"seed": self.seed, "results": self.results,
                "checks": [asdict(c) for c in self.checks], "passed": self.passed}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        lines = [f"{'check':<28} {'value':>10}  result"]
        for c in self.checks:
            v = c.value if not isinstance(c.value, float) else f"{c.value:+.3f}"
            lines.append(f"{c.group + '/' + c.name:<28} {str(v):>10}  {'PASS' if c.passed else 'FAIL'}")
        return "\n".join(lines)


def run_trend_suite(seed: int = 0, only: Iterable[str] | None = None,
                    table2: Table2Setup = Table2Setup(), fig3: Fig3Setup = Fig3Setup(),
                    vtln: VtlnSetup = VtlnSetup()) -> TrendReport:
    groups = set(GROUPS if not only else only)
    unknown = groups - set(GROUPS)
    if unknown:
        raise ValueError(f"unknown trend groups {sorted(unknown)}; choose from {GROUPS}")
    rep = TrendReport(seed)
    if "vtln" in groups:
        v = run_vtln_recovery(seed, vtln)
        rep.results["vtln"] = v
        rep.checks.append(Check("warp_recovery", "vtln", v["recovery"] >= RECOVERY_SHARE, v["recovery"],
                                f"share within {WARP_TOLERANCE} >= {RECOVERY_SHARE}"))
    if "table2" in groups:
        t2 = run_table2(seed, table2)
        rep.results["table2"] = t2
        ap = t2["ap"]
        rep.checks.append(_margin("vtln_over_mfcc", "table2", ap["mfcc+vtln"], ap["mfcc"],
                                  "AP(mfcc+vtln) - AP(mfcc)"))
        rep.checks.append(_margin("cae_over_vtln", "table2", ap["cae/gold/mfcc+vtln"], ap["mfcc+vtln"],
                                  "AP(cae on vtln) - AP(mfcc+vtln)"))
    if groups & {"fig3", "table4"}:
        f3, t4 = run_fig3_table4(seed, fig3, table4="table4" in groups)
        rep.results["fig3"] = f3
        if "fig3" in groups:
            ap = f3["ap"]
            rep.checks.append(_margin("bnf1_over_mfcc", "fig3", ap["bnf-1"], ap["mfcc"], "AP(bnf-1) - AP(mfcc)"))
            rep.checks.append(_margin("bnf2_over_bnf1", "fig3", ap["bnf-2"], ap["bnf-1"], "AP(bnf-2) - AP(bnf-1)"))
        if t4 is not None:
            rep.results["table4"] = t4
            rep.checks.append(table4_agreement(t4))
    return rep


def sweep(seeds: Sequence[int], only: Iterable[str] | None = None, need: int | None = None) -> dict:
    """Per-check pass counts over seeds; ``need`` defaults to all but one seed."""
    need = len(seeds) - 1 if need is None else need
    reports = [run_trend_suite(s, only) for s in seeds]
    counts: dict[str, int] = {}
    for r in reports:
        for c in r.checks:
            counts[f"{c.group}/{c.name}"] = counts.get(f"{c.group}/{c.name}", 0) + int(c.passed)
    return {"seeds": list(seeds), "need": need, "passes": counts, "reports": reports}
