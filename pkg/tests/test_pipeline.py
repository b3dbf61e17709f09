import json

import pytest

from zrsub.pipeline import ConfigError, ExperimentConfig, StageError, load_config, parse_config, run_pipeline

MINIMAL = """
[experiment]
seed = 3
stages = mfcc, eval-sd, eval-seg
output = {out}

[synth]
n_speakers = 4
utterances_per_speaker = 3
lexicon_size = 12

[evaluate]
segmentation = naive
"""


def _write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def minimal_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = load_config(_write(root, MINIMAL.format(out="run1")))
    return root, cfg, run_pipeline(cfg)


def test_minimal_run_writes_reports(minimal_run):
    root, cfg, res = minimal_run
    assert res.output == root / "run1"
    assert set(res.reports) == {"eval-sd", "eval-seg"}
    sd = json.loads((res.output / "reports" / "eval-sd.json").read_text())
    assert sd["config_hash"] == cfg.hash and sd["seed"] == 3
    assert 0.0 <= sd["features"]["mfcc"]["average_precision"] <= 1.0
    assert (res.output / "corpus" / "manifest.tsv").exists()
    assert any((res.output / "features" / "mfcc").iterdir())
    assert "stage eval-sd: done" in (res.output / "pipeline.log").read_text()


def test_rerun_is_byte_identical_and_hash_ignores_output(minimal_run):
    root, cfg, res = minimal_run
    cfg2 = load_config(_write(root, MINIMAL.format(out="run2"), "exp2.ini"))
    assert cfg2.hash == cfg.hash
    res2 = run_pipeline(cfg2)
    for name in ("eval-sd", "eval-seg"):
        a = (res.output / "reports" / f"{name}.json").read_bytes()
        b = (res2.output / "reports" / f"{name}.json").read_bytes()
        assert a == b


def test_stage_order_follows_dependencies():
    cfg = ExperimentConfig(seed=0, stages=("eval-abx", "cae", "vtln"), synth=(("n_speakers", "4"),))
    order = cfg.order()
    assert order[0] == "corpus"
    assert order.index("mfcc") < order.index("vtln") < order.index("cae") < order.index("eval-abx")


def test_stage_order_is_stable():
    cfg = ExperimentConfig(seed=0, stages=("eval-seg", "eval-sd", "eval-abx", "vtln"), synth=(("n_speakers", "4"),))
    assert cfg.order() == ["corpus", "mfcc", "vtln", "eval-abx", "eval-sd", "eval-seg"]


def test_hash_depends_on_content_not_stage_order():
    a = ExperimentConfig(seed=0, stages=("mfcc", "eval-sd"), synth=(("n_speakers", "4"),))
    b = ExperimentConfig(seed=0, stages=("eval-sd", "mfcc"), synth=(("n_speakers", "4"),), output="elsewhere")
    c = ExperimentConfig(seed=1, stages=("mfcc", "eval-sd"), synth=(("n_speakers", "4"),))
    assert a.hash == b.hash != c.hash


@pytest.mark.parametrize("text", [
    "[experiment]\nstages = mfcc\n[synth]\nn_speakers = 4\n",               # no seed
    "[experiment]\nseed = 1\nstages = mfcc, tea\n[synth]\nn_speakers = 4\n",  # unknown stage
    "[experiment]\nseed = 1\n",                                               # no corpus
    "[experiment]\nseed = 1\n[synth]\nn_speakers = 4\n[colour]\nx = 1\n",     # unknown section
    "[experiment]\nseed = 1\ncolour = red\n[synth]\nn_speakers = 4\n",        # unknown key
    "[experiment]\nseed = 1\n[synth]\nwidth = 4\n",                           # unknown synth key
    "[experiment]\nseed = 1\nstages = bnf\n[synth]\nn_speakers = 4\n",        # bnf without languages
    "[experiment]\nseed = 1\nstages = cae\n[cae]\ninputs = mfcc+vtln\n[synth]\nn_speakers = 4\n",
    "[experiment\nseed = 1\n",                                                # syntax
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_failing_stage_is_named(tmp_path):
    cfg = parse_config(MINIMAL.format(out="x").replace("naive", "missing.tsv"), base=tmp_path)
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "eval-seg"
    assert (tmp_path / "x" / "corpus" / "manifest.tsv").exists()
    assert "eval-seg failed" in (tmp_path / "x" / "pipeline.log").read_text()


def test_relative_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "sub").mkdir()
    cfg = load_config(_write(tmp_path / "sub", "[experiment]\nseed = 1\n[corpus]\nmanifest = m.tsv\n"))
    assert cfg.manifest == str((tmp_path / "sub" / "m.tsv").resolve())
