from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from zrsub.segeval import (HypToken, Segmentation, attribute_purity, boundary_fscore, cluster_purity,
                           downsample_indices, embed_downsample, equal_length_segmentation,
                           evaluate_segmentation, load_segmentation, map_clusters, save_segmentation,
                           token_fscore, unsupervised_wer)

from fixtures import word_manifest as _manifest
from oracles import levenshtein

def _gold_segmentation(manifest, clusters=None):
    toks = [HypToken(w.utterance, w.start, w.end, (clusters or {}).get(w.orthography, w.orthography))
            for w in manifest.words]
    return Segmentation(toks, full_coverage=True)


def _single_word(assign):
    """One-word utterances; ``assign`` is a list of (cluster, word)."""
    m = _manifest({f"u{i:03d}": [(w, 2)] for i, (_, w) in enumerate(assign)})
    seg = Segmentation([HypToken(f"u{i:03d}", 0.0, 0.2, c) for i, (c, _) in enumerate(assign)])
    return seg, m


# ------------------------------------------------------------- purity and mapping

def test_purity_of_a_mixed_cluster():
    m = _manifest({"u": [("a", 2), ("b", 2), ("a", 2)]})
    seg = _gold_segmentation(m, {"a": "c1", "b": "c1"})
    mapping = map_clusters(seg, m.words)
    assert mapping == {"c1": "a"}
    assert cluster_purity(seg, mapping, m.words) == pytest.approx(200 / 3)


def test_homogeneous_clusters_are_pure():
    m = _manifest({"u": [("a", 2), ("b", 3), ("a", 2)], "v": [("b", 3)]})
    seg = _gold_segmentation(m)
    assert cluster_purity(seg, map_clusters(seg, m.words), m.words) == 100.0


def test_single_cluster_maps_to_its_word():
    seg, m = _single_word([("c", "water")] * 4)
    for mode in ("many_to_one", "one_to_one_greedy"):
        assert map_clusters(seg, m.words, mode) == {"c": "water"}


def test_only_the_stronger_cluster_gets_the_word_one_to_one():
    seg, m = _single_word([("a", "water")] * 3 + [("b", "water")] * 2)
    assert map_clusters(seg, m.words, "many_to_one") == {"a": "water", "b": "water"}
    assert map_clusters(seg, m.words, "one_to_one_greedy") == {"a": "water", "b": None}


def test_hand_worked_four_cluster_mapping():
    assign = ([("c1", "water")] * 3 + [("c1", "fire")] + [("c2", "water")] * 2 + [("c2", "air")]
              + [("c3", "fire")] * 2 + [("c4", "water")])
    seg, m = _single_word(assign)
    assert map_clusters(seg, m.words, "many_to_one") == {"c1": "water", "c2": "water", "c3": "fire", "c4": "water"}
    o2o = map_clusters(seg, m.words, "one_to_one_greedy")
    assert o2o == {"c1": "water", "c2": "air", "c3": "fire", "c4": None}
    # c1: 3/4, c2: 1/3, c3: 2/2, c4: 0/1
    assert cluster_purity(seg, o2o, m.words) == pytest.approx(100 * 6 / 10)


def test_many_to_one_ties_break_lexicographically():
    seg, m = _single_word([("c", "water"), ("c", "earth")])
    assert map_clusters(seg, m.words) == {"c": "earth"}


def test_mapping_errors():
    m = _manifest({"u": [("a", 2)]})
    with pytest.raises(ValueError):
        map_clusters(Segmentation([]), m.words)
    seg = _gold_segmentation(m)
    with pytest.raises(ValueError):
        map_clusters(seg, m.words, "many_to_many")
    with pytest.raises(ValueError):
        cluster_purity(seg, {}, m.words)


# ------------------------------------------------------------- WER

def test_wer_zero_when_equal_and_hundred_when_empty():
    m = _manifest({"u": [("a", 2), ("b", 2)], "v": [("c", 3)]})
    seg = _gold_segmentation(m)
    mapping = map_clusters(seg, m.words)
    assert unsupervised_wer(seg, mapping, m.words) == 0.0
    only_v = Segmentation([HypToken("v", 0.0, 0.3, "c")])
    assert unsupervised_wer(only_v, {"c": "c"}, m.words) == pytest.approx(200 / 3)
    assert unsupervised_wer(Segmentation([]), {}, m.words) == 100.0


def test_wer_substitution_plus_insertion():
    m = _manifest({"u": [(w, 2) for w in "abcde"]})
    hyp = ["a", "x", "c", "d", "e", "e"]
    seg = Segmentation([HypToken("u", k / 6, (k + 1) / 6, f"k{k}") for k in range(6)])
    mapping = {f"k{k}": w for k, w in enumerate(hyp)}
    wer = unsupervised_wer(seg, mapping, m.words)
    assert wer == pytest.approx(40.0)
    assert wer == pytest.approx(100 * levenshtein(list("abcde"), hyp) / 5)


def test_wer_needs_ground_truth():
    with pytest.raises(ValueError):
        unsupervised_wer(Segmentation([HypToken("u", 0, 1, "c")]), {"c": "a"}, [])


# ------------------------------------------------------------- boundaries and tokens

@pytest.fixture
def three_words():
    # boundaries at 0.2 and 0.5; tolerance windows (0.1, 0.3) and (0.4, 0.6)
    return _manifest({"u": [("w1", 2), ("w2", 3), ("w3", 2)]})


def _seg(*edges):
    return Segmentation([HypToken("u", a, b, f"c{k}") for k, (a, b) in enumerate(zip(edges, edges[1:]))],
                        full_coverage=True)


def test_boundary_fscore_identical(three_words):
    f = boundary_fscore(_gold_segmentation(three_words), three_words)
    assert (f.precision, f.recall, f.fscore) == (1.0, 1.0, 1.0)


def test_boundary_fscore_without_boundaries(three_words):
    f = boundary_fscore(_seg(0.0, 0.7), three_words)
    assert (f.recall, f.fscore) == (0.0, 0.0)


def test_boundary_tolerance_is_one_phone(three_words):
    near = boundary_fscore(_seg(0.0, 0.25, 0.7), three_words)
    assert (near.precision, near.recall) == (1.0, 0.5)
    assert near.fscore == pytest.approx(2 / 3)
    # 0.25 hits the first boundary, 0.35 falls outside both windows
    both = boundary_fscore(_seg(0.0, 0.25, 0.35, 0.7), three_words)
    assert (both.precision, both.recall, both.fscore) == (0.5, 0.5, 0.5)
    # two hypotheses near one boundary: credited once
    twice = boundary_fscore(_seg(0.0, 0.15, 0.25, 0.7), three_words)
    assert (twice.precision, twice.recall) == (0.5, 0.5)


def test_token_fscore_cases(three_words):
    assert token_fscore(_gold_segmentation(three_words), three_words).fscore == 1.0
    halves = _seg(0.0, 0.1, 0.2, 0.35, 0.5, 0.6, 0.7)
    assert token_fscore(halves, three_words).recall == 0.0
    mixed = token_fscore(_seg(0.0, 0.25, 0.7), three_words)
    assert (mixed.precision, mixed.recall) == (0.5, pytest.approx(1 / 3))
    assert mixed.fscore == pytest.approx(0.4)


# ------------------------------------------------------------- speaker and gender purity

def _attribute_fixture(n_speakers, tokens_per_speaker, genders=None):
    speakers = {f"u{s}": f"s{s}" for s in range(n_speakers)}
    m = _manifest({u: [("a", 2)] * tokens_per_speaker for u in speakers}, speakers, genders)
    return _gold_segmentation(m), m


def test_single_speaker_cluster_is_speaker_pure():
    seg, m = _attribute_fixture(1, 5)
    assert evaluate_segmentation(seg, m).speaker_purity == 100.0


def test_balanced_gender_floor():
    seg, m = _attribute_fixture(2, 4, {"s0": "M", "s1": "F"})
    assert evaluate_segmentation(seg, m).gender_purity == pytest.approx(50.0)


def test_balanced_speaker_floor():
    seg, m = _attribute_fixture(12, 3)
    assert evaluate_segmentation(seg, m).speaker_purity == pytest.approx(100 / 12)
    per_speaker = Segmentation([HypToken(t.utterance, t.start, t.end, m.utterances[t.utterance].speaker)
                                for t in seg.tokens])
    assert evaluate_segmentation(per_speaker, m).speaker_purity == 100.0


def test_unknown_attribute_is_its_own_class():
    seg = Segmentation([HypToken("a", 0, 1, "c"), HypToken("b", 0, 1, "c"), HypToken("z", 0, 1, "c")])
    assert attribute_purity(seg, {"a": "m", "b": "m"}) == pytest.approx(200 / 3)


# ------------------------------------------------------------- embeddings

def _index_oracle(T, n):
    if n == 1:
        return [(T - 1) // 2]
    return [int(Fraction(k * (T - 1), n - 1) + Fraction(1, 2)) for k in range(n)]


@pytest.mark.parametrize("T,n", [(10, 10), (1, 10), (20, 10), (7, 3), (5, 1), (100, 10)])
def test_downsample_indices(T, n):
    assert downsample_indices(T, n).tolist() == _index_oracle(T, n)


def test_embed_downsample_shape_and_order():
    seg = np.arange(40, dtype=float).reshape(20, 2)
    e = embed_downsample(seg, 10)
    assert e.shape == (20,)
    np.testing.assert_array_equal(e.reshape(10, 2)[:, 0], 2 * np.array(_index_oracle(20, 10)))
    np.testing.assert_array_equal(embed_downsample(seg[:1], 10), np.tile(seg[0], 10))
    with pytest.raises(ValueError):
        embed_downsample(np.zeros((0, 2)), 10)


# ------------------------------------------------------------- properties

_words = st.sampled_from(["aa", "bb", "cc", "dd"])
_clusters = st.sampled_from(["k0", "k1", "k2", "k3", "k4"])


@given(st.lists(st.tuples(_clusters, _words), min_size=1, max_size=30))
def test_many_to_one_purity_dominates(assign):
    seg, m = _single_word(assign)
    m2o = map_clusters(seg, m.words, "many_to_one")
    o2o = map_clusters(seg, m.words, "one_to_one_greedy")
    assert cluster_purity(seg, m2o, m.words) >= cluster_purity(seg, o2o, m.words) - 1e-12
    # one token per one-word utterance: WER = 100 - purity, so the stricter mapping costs edits
    assert unsupervised_wer(seg, o2o, m.words) >= unsupervised_wer(seg, m2o, m.words) - 1e-12


@given(st.lists(st.tuples(_clusters, _words), min_size=1, max_size=30),
       st.permutations(["k0", "k1", "k2", "k3", "k4"]))
def test_purities_ignore_cluster_names(assign, perm):
    rename = dict(zip(["k0", "k1", "k2", "k3", "k4"], perm))
    seg, m = _single_word(assign)
    seg2 = Segmentation([HypToken(t.utterance, t.start, t.end, rename[t.cluster]) for t in seg.tokens])
    p1 = cluster_purity(seg, map_clusters(seg, m.words), m.words)
    p2 = cluster_purity(seg2, map_clusters(seg2, m.words), m.words)
    assert p1 == pytest.approx(p2)
    attr = {u: f"s{i % 3}" for i, u in enumerate(sorted(m.utterances))}
    assert attribute_purity(seg, attr) == pytest.approx(attribute_purity(seg2, attr))


@given(st.lists(st.integers(1, 4), min_size=2, max_size=6),
       st.lists(st.sampled_from([0.0, 0.04, -0.04, None, "extra"]), min_size=6, max_size=6))
def test_perfect_boundaries_imply_perfect_tokens(lengths, moves):
    m = _manifest({"u": [(f"w{i}", n) for i, n in enumerate(lengths)]})
    true_b = [w.end for w in sorted(m.words)][:-1]
    edges = []
    for b, mv in zip(true_b, moves):
        if mv is None:
            continue
        if mv == "extra":
            edges += [b, round(b + 0.05, 6)]
        else:
            edges.append(round(b + mv, 6))
    dur = m.utterances["u"].duration
    seg = _seg(0.0, *sorted(set(edges)), dur)
    bf = boundary_fscore(seg, m)
    if all(mv not in (None, "extra") for mv in moves[:len(true_b)]):
        assert bf.fscore == 1.0
    if bf.fscore == 1.0:
        assert token_fscore(seg, m).fscore == 1.0


# ------------------------------------------------------------- I/O and smoke segmenter

def test_segmentation_round_trip(tmp_path, three_words):
    seg = _seg(0.0, 0.25, 0.7)
    save_segmentation(seg, tmp_path / "seg.tsv")
    assert load_segmentation(tmp_path / "seg.tsv").tokens == seg.tokens
    (tmp_path / "bad.tsv").write_text("u\t0.0\t0.5\n")
    with pytest.raises(ValueError):
        load_segmentation(tmp_path / "bad.tsv")


def test_segmentation_rejects_overlap_and_empty_tokens():
    with pytest.raises(ValueError):
        Segmentation([HypToken("u", 0.0, 0.5, "a"), HypToken("u", 0.4, 0.8, "b")])
    with pytest.raises(ValueError):
        Segmentation([HypToken("u", 0.3, 0.3, "a")])


def test_equal_length_segmentation_covers_utterances(small_corpus):
    seg = equal_length_segmentation(small_corpus, 0.5, 10)
    for uid, toks in seg.by_utterance().items():
        assert toks[0].start == 0.0
        assert toks[-1].end == pytest.approx(small_corpus.utterances[uid].duration, abs=1e-6)
        assert all(a.end == b.start for a, b in zip(toks, toks[1:]))
    assert len(seg.clusters) <= 10
    report = evaluate_segmentation(seg, small_corpus).to_dict()
    assert set(report) >= {"wer_one_to_one", "wer_many_to_one", "token_fscore", "boundary_fscore",
                           "cluster_purity", "gender_purity", "speaker_purity"}
    assert report["wer_one_to_one"] >= 0 and 0 <= report["speaker_purity"] <= 100
