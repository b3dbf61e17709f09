"""Config-driven batch runs: corpus -> features -> optional model -> evaluation reports."""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path

from . import bnf as bnf_mod
from . import cae as cae_mod
from .corpus import CorpusManifest, eligible_word_tokens, generate_eval_pairs, gold_pairs, load_manifest, save_manifest
from .dsp import BNF_INPUT, FeatureStore, MfccPipeline
from .evaluation import abx_error_rates, build_abx_triplets, same_different_ap
from .segeval import equal_length_segmentation, evaluate_segmentation, load_segmentation
from .synth import simple_config, synth_corpus
from .vtln import save_gmm, save_warps, train_vtln, utterance_powers, warped_features

log = logging.getLogger(__name__)

#: stage -> stages it needs
STAGES: dict[str, tuple[str, ...]] = {
    "corpus": (),
    "mfcc": ("corpus",),
    "vtln": ("mfcc",),
    "cae": ("mfcc",),
    "bnf": ("corpus",),
    "eval-sd": ("mfcc",),
    "eval-abx": ("mfcc",),
    "eval-seg": ("corpus",),
}
MODEL_STAGES = ("cae", "bnf")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _csv(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.replace("\n", ",").split(",") if v.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    stages: tuple[str, ...] = ("mfcc", "eval-sd")
    output: str = "out"
    manifest: str | None = None
    synth: tuple[tuple[str, str], ...] = ()
    vtln_components: int = 32
    vtln_rounds: int = 5
    vtln_em_iterations: int = 10
    preset: str = "desk"
    cae_inputs: tuple[str, ...] = ("mfcc",)
    cae_pairs: str = "gold"
    train_split: str | None = None
    eval_split: str | None = None
    bnf_train_languages: tuple[str, ...] = ()
    bnf_target_language: str | None = None
    abx_mode: str = "cross"
    abx_per_cell: int | None = None
    segmentation: str | None = None

    def __post_init__(self):
        unknown = set(self.stages) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stages {sorted(unknown)}")
        if (self.manifest is None) == (not self.synth):
            raise ConfigError("give exactly one of [corpus] manifest or a [synth] section")
        if self.preset not in ("desk", "paper"):
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.cae_pairs not in ("gold", "manifest"):
            raise ConfigError("cae pairs must be 'gold' or 'manifest'")
        if set(self.cae_inputs) - {"mfcc", "mfcc+vtln"}:
            raise ConfigError("cae inputs are drawn from mfcc, mfcc+vtln")
        if "mfcc+vtln" in self.cae_inputs and "cae" in self.stages and "vtln" not in self.stages:
            raise ConfigError("cae on mfcc+vtln needs the vtln stage")
        if "bnf" in self.stages and (not self.bnf_train_languages or not self.bnf_target_language):
            raise ConfigError("bnf needs train_languages and target_language")
        self.order()

    def order(self) -> list[str]:
        """Requested stages plus their prerequisites, in dependency order."""
        needed, todo = set(), ["corpus", *self.stages]
        while todo:
            s = todo.pop()
            if s not in needed:
                needed.add(s)
                todo.extend(STAGES[s])
        graph = {s: set(STAGES[s]) for s in needed}
        for s in needed:  # soft edges: consume whatever upstream features were requested
            if s in MODEL_STAGES and "vtln" in needed:
                graph[s].add("vtln")
            if s.startswith("eval-"):
                graph[s] |= needed & {"mfcc", "vtln", *MODEL_STAGES}
        ts = TopologicalSorter(graph)
        try:
            ts.prepare()
        except CycleError as exc:  # cannot happen with the fixed table, kept as a guard
            raise ConfigError(f"stage graph has a cycle: {exc}") from exc
        order = []
        while ts.is_active():  # sorted batches keep the order independent of set hashing
            ready = sorted(ts.get_ready())
            order.extend(ready)
            ts.done(*ready)
        return order

    def canonical(self) -> dict:
        """Semantic content: every resolved field except where outputs land."""
        body = asdict(self)
        body.pop("output")
        body["stages"] = sorted(body["stages"])
        return body

    @property
    def hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_KEYS = {
    "experiment": {"seed", "stages", "output", "preset"},
    "corpus": {"manifest", "train_split", "eval_split"},
    "vtln": {"components", "rounds", "em_iterations"},
    "cae": {"inputs", "pairs"},
    "bnf": {"train_languages", "target_language"},
    "evaluate": {"abx_mode", "abx_per_cell", "segmentation"},
}


def parse_config(text: str, base: Path | str = ".") -> ExperimentConfig:
    """Parse an INI experiment file; relative paths resolve against ``base``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for sec in cp.sections():
        if sec != "synth" and sec not in _KEYS:
            raise ConfigError(f"unknown section [{sec}]")
        if sec in _KEYS:
            bad = set(cp[sec]) - _KEYS[sec]
            if bad:
                raise ConfigError(f"[{sec}]: unknown keys {sorted(bad)}")

    def get(sec, key, default=None):
        return cp.get(sec, key, fallback=default).strip() if cp.has_option(sec, key) else default

    def path(value):
        return None if value is None else str((Path(base) / value).resolve())

    if get("experiment", "seed") is None:
        raise ConfigError("[experiment] seed is mandatory")
    kw: dict = {"seed": int(get("experiment", "seed"))}
    if get("experiment", "stages"):
        kw["stages"] = _csv(get("experiment", "stages"))
    if get("experiment", "output"):
        kw["output"] = path(get("experiment", "output"))
    for key in ("preset",):
        if get("experiment", key):
            kw[key] = get("experiment", key)
    kw["manifest"] = path(get("corpus", "manifest"))
    kw["train_split"] = get("corpus", "train_split")
    kw["eval_split"] = get("corpus", "eval_split")
    if cp.has_section("synth"):
        kw["synth"] = tuple(sorted((k, json.dumps(_synth_value(k, v))) for k, v in cp["synth"].items()))
    for key, name in (("components", "vtln_components"), ("rounds", "vtln_rounds"),
                      ("em_iterations", "vtln_em_iterations")):
        if get("vtln", key):
            kw[name] = int(get("vtln", key))
    if get("cae", "inputs"):
        kw["cae_inputs"] = _csv(get("cae", "inputs"))
    if get("cae", "pairs"):
        kw["cae_pairs"] = get("cae", "pairs")
    if get("bnf", "train_languages"):
        kw["bnf_train_languages"] = _csv(get("bnf", "train_languages"))
    kw["bnf_target_language"] = get("bnf", "target_language")
    if get("evaluate", "abx_mode"):
        kw["abx_mode"] = get("evaluate", "abx_mode")
    if get("evaluate", "abx_per_cell"):
        kw["abx_per_cell"] = int(get("evaluate", "abx_per_cell"))
    seg = get("evaluate", "segmentation")
    kw["segmentation"] = seg if seg in (None, "naive") else path(seg)
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Path | str) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base=path.parent)


_SYNTH_TYPES = {
    "n_speakers": int, "lexicon_size": int, "utterances_per_speaker": int, "syllable_inventory": int,
    "eval_speakers": int, "tilt_db_per_khz": float, "idiosyncrasy": float, "token_jitter": float,
    "warps": lambda v: tuple(float(x) for x in _csv(v)),
    "snr_db": lambda v: tuple(float(x) for x in _csv(v)),
    "phones": _csv, "language": str,
}


def _synth_value(key: str, raw: str):
    if key not in _SYNTH_TYPES:
        raise ConfigError(f"[synth]: unknown key {key!r}")
    try:
        return _SYNTH_TYPES[key](raw.strip())
    except ValueError as exc:
        raise ConfigError(f"[synth] {key}: {exc}") from exc


def synth_from_config(cfg: ExperimentConfig) -> CorpusManifest:
    kw = {k: json.loads(v) for k, v in cfg.synth}
    for k in ("warps", "snr_db", "phones"):
        if k in kw:
            kw[k] = tuple(kw[k])
    return synth_corpus(simple_config(seed=cfg.seed, **kw), cfg.seed)


# ---------------------------------------------------------------- running

@dataclass
class PipelineResult:
    config: ExperimentConfig
    output: Path
    features: dict[str, FeatureStore] = field(default_factory=dict)
    reports: dict[str, dict] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)


def _stamp(cfg: ExperimentConfig, body: dict) -> dict:
    return {"config_hash": cfg.hash, "seed": cfg.seed, **body}


def write_report(path: Path, body: dict) -> None:
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _split(m: CorpusManifest, name: str | None) -> CorpusManifest:
    return m if name is None else m.split(name)


def run_pipeline(cfg: ExperimentConfig) -> PipelineResult:
    """Run every requested stage in dependency order.

    A failing stage raises :class:`StageError` naming it; whatever the
    earlier stages wrote stays on disk.
    """
    out = Path(cfg.output)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    res = PipelineResult(cfg, out)
    state: dict = {}
    handler = logging.FileHandler(out / "pipeline.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    handler.setLevel(logging.INFO)
    root = logging.getLogger("zrsub")
    saved_level = root.level
    if root.getEffectiveLevel() > logging.INFO:
        root.setLevel(logging.INFO)
    root.addHandler(handler)
    try:
        for stage in cfg.order():
            t0 = time.perf_counter()
            log.info("stage %s: start (config %s, seed %d)", stage, cfg.hash, cfg.seed)
            try:
                _STAGE_FNS[stage](cfg, state, res)
            except StageError:
                raise
            except Exception as exc:
                log.error("stage %s failed: %s", stage, exc)
                raise StageError(stage, exc) from exc
            res.timings[stage] = time.perf_counter() - t0
            log.info("stage %s: done in %.2fs", stage, res.timings[stage])
    finally:
        root.setLevel(saved_level)
        root.removeHandler(handler)
        handler.close()
    return res


def _corpus(cfg, state, res):
    if cfg.manifest:
        m = load_manifest(cfg.manifest)
    else:
        m = synth_from_config(cfg)
        save_manifest(m, res.output / "corpus" / "manifest.tsv")
    state["manifest"] = m


def _mfcc(cfg, state, res):
    m = state["manifest"]
    pipe = MfccPipeline()
    state["pipe"] = pipe
    state["powers"] = utterance_powers(m, pipe)
    store = warped_features(m, {}, pipe, state["powers"])
    store.save(res.output / "features" / "mfcc")
    res.features["mfcc"] = store


def _vtln(cfg, state, res):
    m = state["manifest"]
    model = train_vtln(m, state["pipe"], cfg.vtln_components, cfg.vtln_rounds, cfg.vtln_em_iterations,
                       seed=cfg.seed, powers=state["powers"])
    models = res.output / "models"
    models.mkdir(exist_ok=True)
    save_gmm(model.gmm, models / "vtln.gmm")
    save_warps(model.warps, models / "warps.txt")
    state["warps"] = model.warps
    store = warped_features(m, model.warps, state["pipe"], state["powers"])
    store.save(res.output / "features" / "mfcc+vtln")
    res.features["mfcc+vtln"] = store


def _cae(cfg, state, res):
    from .nnet import save_network

    m = state["manifest"]
    train = _split(m, cfg.train_split)
    if cfg.cae_pairs == "gold":
        pairs = gold_pairs(train)
    else:
        ids = set(train.utterances)
        pairs = [p for p in m.pairs if p.a.utterance in ids and p.b.utterance in ids]
    config = cae_mod.DESK_CAE if cfg.preset == "desk" else cae_mod.PAPER_CAE
    for inp in cfg.cae_inputs:
        name = f"cae[{inp}]"
        model = cae_mod.train_cae(train, pairs, res.features[inp], config, cfg.seed)
        save_network(model.net, res.output / "models" / f"{name}.net")
        store = cae_mod.extract_store(model.net, res.features[inp])
        store.save(res.output / "features" / name)
        res.features[name] = store


def _bnf(cfg, state, res):
    from .nnet import save_network

    m = state["manifest"]
    pipe = MfccPipeline(BNF_INPUT, deltas=False)
    warps = state.get("warps", {})

    def lang(name):
        sub = m.subset([u.id for u in m.utterances.values() if u.language == name])
        if not sub.utterances:
            raise ConfigError(f"no utterances in language {name!r}")
        return sub

    framesets = []
    for name in cfg.bnf_train_languages:
        sub = lang(name)
        xs, ys, classes = bnf_mod.frame_labels(sub, warped_features(sub, warps, pipe))
        framesets.append(bnf_mod.LabeledFrameSet(name, xs, ys, classes))
    config = bnf_mod.DESK_BNF if cfg.preset == "desk" else bnf_mod.PAPER_BNF
    model = bnf_mod.train_multilingual(framesets, config, cfg.seed)
    (res.output / "models").mkdir(exist_ok=True)
    save_network(model.net, res.output / "models" / "bnf.net")
    target = lang(cfg.bnf_target_language)
    store = bnf_mod.extract_store(model.net, warped_features(target, warps, pipe))
    store.save(res.output / "features" / "bnf")
    res.features["bnf"] = store


def _eval_manifest(cfg, state) -> CorpusManifest:
    m = _split(state["manifest"], cfg.eval_split)
    if cfg.bnf_target_language and "bnf" in cfg.stages:
        m = m.subset([u for u, v in m.utterances.items() if v.language == cfg.bnf_target_language])
    return m


def _eval_sd(cfg, state, res):
    m = _eval_manifest(cfg, state)
    pairs = generate_eval_pairs(m, eligible_word_tokens(m))
    body = {"n_pairs": len(pairs), "features": {}}
    for name, store in sorted(res.features.items()):
        body["features"][name] = same_different_ap(pairs, store).to_dict()
    body = _stamp(cfg, body)
    write_report(res.output / "reports" / "eval-sd.json", body)
    res.reports["eval-sd"] = body


def _eval_abx(cfg, state, res):
    m = _eval_manifest(cfg, state)
    triplets = build_abx_triplets(m, cfg.abx_mode, cfg.abx_per_cell, cfg.seed)
    body = {"n_triplets": len(triplets), "mode": cfg.abx_mode, "features": {}}
    for name, store in sorted(res.features.items()):
        body["features"][name] = abx_error_rates(triplets, store).to_dict()
    body = _stamp(cfg, body)
    write_report(res.output / "reports" / "eval-abx.json", body)
    res.reports["eval-abx"] = body


def _eval_seg(cfg, state, res):
    m = _split(state["manifest"], cfg.eval_split)
    if cfg.segmentation in (None, "naive"):
        seg = equal_length_segmentation(m)
    else:
        seg = load_segmentation(cfg.segmentation)
    body = _stamp(cfg, evaluate_segmentation(seg, m).to_dict())
    write_report(res.output / "reports" / "eval-seg.json", body)
    res.reports["eval-seg"] = body


_STAGE_FNS = {
    "corpus": _corpus, "mfcc": _mfcc, "vtln": _vtln, "cae": _cae, "bnf": _bnf,
    "eval-sd": _eval_sd, "eval-abx": _eval_abx, "eval-seg": _eval_seg,
}
assert set(_STAGE_FNS) == set(STAGES)
