"""Command-line front end.

Exit codes: 0 success, 1 a trend check failed, 2 any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

THREADS_ENV = "ZRSUB_THREADS"
EXIT_OK, EXIT_TREND, EXIT_ERROR = 0, 1, 2

log = logging.getLogger("zrsub.cli")


def _limit_threads(n: int | None) -> None:
    """Cap BLAS and numba worker pools; must run before numpy work starts."""
    if n is None:
        raw = os.environ.get(THREADS_ENV)
        n = int(raw) if raw else None
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except (ImportError, ValueError):
        pass


def _dump(body: dict, out: str | None) -> None:
    text = json.dumps(body, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _split_manifest(args):
    from .corpus import load_manifest

    m = load_manifest(args.manifest)
    return m.split(args.split) if getattr(args, "split", None) else m


def _store(args, provenance="mfcc"):
    from .dsp import FeatureStore

    return FeatureStore.load(args.features, provenance)


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    from .corpus import save_manifest
    from .synth import simple_config, synth_corpus

    cfg = simple_config(args.speakers, warps=_floats(args.warps), lexicon_size=args.lexicon,
                        utterances_per_speaker=args.utterances, syllable_inventory=args.syllables,
                        eval_speakers=args.eval_speakers, snr_db=_floats(args.snr), seed=args.seed)
    m = synth_corpus(cfg, args.seed)
    out = Path(args.out)
    save_manifest(m, out / "manifest.tsv")
    n_utt, n_words = m.counts
    log.info("wrote %d utterances, %d words to %s", n_utt, n_words, out)
    return EXIT_OK


def cmd_mfcc(args) -> int:
    from .corpus import load_manifest
    from .dsp import FrameConfig, MfccPipeline
    from .vtln import load_warps, warped_features

    m = load_manifest(args.manifest)
    pipe = MfccPipeline(FrameConfig(n_mels=args.mels, n_ceps=args.ceps), deltas=not args.no_deltas,
                        cmn=not args.no_cmn)
    warps = load_warps(args.warps) if args.warps else {}
    store = warped_features(m, warps, pipe)
    store.save(args.out)
    log.info("wrote %d feature files (dim %d) to %s", len(store), store.dim, args.out)
    return EXIT_OK


def cmd_vtln(args) -> int:
    from .corpus import load_manifest
    from .dsp import MfccPipeline
    from .vtln import save_gmm, save_warps, train_vtln, warped_features

    m = load_manifest(args.manifest)
    pipe = MfccPipeline()
    model = train_vtln(m, pipe, args.components, args.rounds, args.em_iterations, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_gmm(model.gmm, out / "vtln.gmm")
    save_warps(model.warps, out / "warps.txt")
    if args.features_out:
        warped_features(m, model.warps, pipe).save(args.features_out)
    return EXIT_OK


def cmd_cae(args) -> int:
    from .cae import DESK_CAE, PAPER_CAE, extract_store, train_cae
    from .corpus import gold_pairs
    from .nnet import save_network

    m = _split_manifest(args)
    store = _store(args)
    pairs = gold_pairs(m) if args.pairs == "gold" else list(m.pairs)
    model = train_cae(m, pairs, store, DESK_CAE if args.preset == "desk" else PAPER_CAE, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_network(model.net, out / "cae.net")
    extract_store(model.net, store).save(out / "features")
    return EXIT_OK


def cmd_bnf(args) -> int:
    from . import bnf
    from .corpus import load_manifest
    from .dsp import BNF_INPUT, MfccPipeline
    from .nnet import save_network
    from .vtln import load_warps, warped_features

    m = load_manifest(args.manifest)
    pipe = MfccPipeline(BNF_INPUT, deltas=False)
    warps = load_warps(args.warps) if args.warps else {}

    def lang(name):
        sub = m.subset([u.id for u in m.utterances.values() if u.language == name])
        if not sub.utterances:
            raise ValueError(f"no utterances in language {name!r}")
        return sub

    framesets = []
    for name in args.train_languages.split(","):
        sub = lang(name)
        xs, ys, classes = bnf.frame_labels(sub, warped_features(sub, warps, pipe))
        framesets.append(bnf.LabeledFrameSet(name, xs, ys, classes))
    model = bnf.train_multilingual(framesets, bnf.DESK_BNF if args.preset == "desk" else bnf.PAPER_BNF, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_network(model.net, out / "bnf.net")
    target = lang(args.target)
    bnf.extract_store(model.net, warped_features(target, warps, pipe)).save(out / "features")
    return EXIT_OK


def cmd_eval_sd(args) -> int:
    from .corpus import eligible_word_tokens, generate_eval_pairs
    from .evaluation import same_different_ap

    m = _split_manifest(args)
    pairs = generate_eval_pairs(m, eligible_word_tokens(m, args.min_chars, args.min_dur))
    _dump(same_different_ap(pairs, _store(args), args.distance).to_dict(), args.out)
    return EXIT_OK


def cmd_eval_abx(args) -> int:
    from .evaluation import abx_error_rates, build_abx_triplets

    m = _split_manifest(args)
    triplets = build_abx_triplets(m, args.mode, args.max_per_cell, args.seed)
    res = abx_error_rates(triplets, _store(args), args.distance)
    body = res.to_dict()
    body["n_triplets"] = len(triplets)
    _dump(body, args.out)
    return EXIT_OK


def cmd_eval_seg(args) -> int:
    from .segeval import equal_length_segmentation, evaluate_segmentation, load_segmentation

    m = _split_manifest(args)
    seg = equal_length_segmentation(m, args.naive) if args.naive else load_segmentation(args.segmentation)
    _dump(evaluate_segmentation(seg, m).to_dict(), args.out)
    return EXIT_OK


def _span(text: str) -> tuple[str, float, float]:
    utt, start, end = text.rsplit(":", 2)
    return utt, float(start), float(end)


def cmd_simmat(args) -> int:
    from .evaluation import similarity_matrix, write_pgm, write_similarity_csv

    store = _store(args)
    S = similarity_matrix(store.segment(*_span(args.a)), store.segment(*_span(args.b)))
    if args.out.endswith(".csv"):
        write_similarity_csv(args.out, S)
    else:
        write_pgm(args.out, S, args.clip)
    return EXIT_OK


def cmd_trends(args) -> int:
    from .trends import run_trend_suite

    only = args.only.split(",") if args.only else None
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    ok = True
    reports = []
    for seed in seeds:
        rep = run_trend_suite(seed, only)
        reports.append(rep)
        print(f"seed {seed}")
        print(rep.table())
        ok &= rep.passed
        if rep.failed():
            print("failed: " + ", ".join(rep.failed()))
    if args.out:
        if len(reports) == 1:
            Path(args.out).write_text(reports[0].to_json(), encoding="utf-8")
        else:
            body = [json.loads(r.to_json()) for r in reports]
            Path(args.out).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK if ok else EXIT_TREND


def cmd_run(args) -> int:
    from .pipeline import load_config, run_pipeline

    cfg = load_config(args.config)
    res = run_pipeline(cfg)
    for name, body in sorted(res.reports.items()):
        print(f"{name}: {res.output / 'reports' / (name + '.json')}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zrsub", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker cap for BLAS/numba (default: ${THREADS_ENV} or library default)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    def manifest(sp, features=False, split=False):
        sp.add_argument("--manifest", required=True)
        if features:
            sp.add_argument("--features", required=True, help="directory of .zrsf files")
        if split:
            sp.add_argument("--split", default=None, help="restrict to one split")

    sp = add("synth", cmd_synth, "render a synthetic corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--speakers", type=int, default=6)
    sp.add_argument("--warps", default="0.9,1.0,1.1")
    sp.add_argument("--lexicon", type=int, default=20)
    sp.add_argument("--utterances", type=int, default=6)
    sp.add_argument("--syllables", type=int, default=0)
    sp.add_argument("--eval-speakers", type=int, default=0)
    sp.add_argument("--snr", default="25,35")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("mfcc", cmd_mfcc, "extract MFCC features")
    manifest(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--warps", help="two-column speaker/alpha file")
    sp.add_argument("--mels", type=int, default=23)
    sp.add_argument("--ceps", type=int, default=13)
    sp.add_argument("--no-deltas", action="store_true")
    sp.add_argument("--no-cmn", action="store_true")

    sp = add("vtln", cmd_vtln, "estimate per-speaker warp factors")
    manifest(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--features-out")
    sp.add_argument("--components", type=int, default=64)
    sp.add_argument("--rounds", type=int, default=5)
    sp.add_argument("--em-iterations", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("cae", cmd_cae, "train a correspondence autoencoder and extract features")
    manifest(sp, features=True, split=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pairs", choices=("gold", "manifest"), default="gold")
    sp.add_argument("--preset", choices=("desk", "paper"), default="desk")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("bnf", cmd_bnf, "train multilingual bottleneck features and extract them for a target language")
    manifest(sp)
    sp.add_argument("--train-languages", required=True, help="comma-separated language ids")
    sp.add_argument("--target", required=True)
    sp.add_argument("--warps")
    sp.add_argument("--out", required=True)
    sp.add_argument("--preset", choices=("desk", "paper"), default="desk")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("eval-sd", cmd_eval_sd, "same-different average precision")
    manifest(sp, features=True, split=True)
    sp.add_argument("--min-chars", type=int, default=5)
    sp.add_argument("--min-dur", type=float, default=0.5)
    sp.add_argument("--distance", choices=("cosine", "euclidean"), default="cosine")
    sp.add_argument("--out")

    sp = add("eval-abx", cmd_eval_abx, "ABX within/cross-speaker error rates")
    manifest(sp, features=True, split=True)
    sp.add_argument("--mode", choices=("within", "cross", "both"), default="both")
    sp.add_argument("--max-per-cell", type=int)
    sp.add_argument("--distance", choices=("cosine", "euclidean"), default="cosine")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")

    sp = add("eval-seg", cmd_eval_seg, "score a segmentation/clustering")
    manifest(sp, split=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--segmentation", help="TSV: utterance, start, end, cluster")
    g.add_argument("--naive", type=float, help="score equal-length chunks of this many seconds")
    sp.add_argument("--out")

    sp = add("simmat", cmd_simmat, "frame-wise cosine similarity between two segments")
    sp.add_argument("--features", required=True)
    sp.add_argument("--a", required=True, help="utterance:start:end")
    sp.add_argument("--b", required=True, help="utterance:start:end")
    sp.add_argument("--clip", type=float, default=0.4)
    sp.add_argument("--out", required=True, help=".pgm image or .csv matrix")

    sp = add("trends", cmd_trends, "synthetic trend checks")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--seeds", help="comma-separated seeds (overrides --seed)")
    sp.add_argument("--only", help="comma-separated groups: vtln,table2,fig3,table4")
    sp.add_argument("--out")

    sp = add("run", cmd_run, "run an INI experiment config")
    sp.add_argument("config")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        _limit_threads(args.threads)
        return args.fn(args)
    except Exception as exc:  # every failure maps to the error exit code
        if args.verbose:
            log.exception("failed")
        else:
            log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
