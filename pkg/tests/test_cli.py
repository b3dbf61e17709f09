import json
import shutil
import subprocess
import sys

import pytest

from zrsub import cli, trends


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    assert cli.main(["synth", "--out", str(out), "--speakers", "4", "--utterances", "3", "--seed", "2"]) == 0
    return out


def test_synth_mfcc_and_evaluation(synth_dir, tmp_path):
    manifest = str(synth_dir / "manifest.tsv")
    feats = tmp_path / "mfcc"
    assert cli.main(["mfcc", "--manifest", manifest, "--out", str(feats)]) == 0
    assert len(list(feats.glob("*.zrsf"))) > 0
    report = tmp_path / "sd.json"
    assert cli.main(["eval-sd", "--manifest", manifest, "--features", str(feats), "--out", str(report)]) == 0
    assert 0 <= json.loads(report.read_text())["average_precision"] <= 1
    seg = tmp_path / "seg.json"
    assert cli.main(["eval-seg", "--manifest", manifest, "--naive", "0.5", "--out", str(seg)]) == 0
    assert "speaker_purity" in json.loads(seg.read_text())


def test_simmat_writes_pgm(synth_dir, tmp_path):
    manifest = str(synth_dir / "manifest.tsv")
    feats = tmp_path / "mfcc"
    cli.main(["mfcc", "--manifest", manifest, "--out", str(feats)])
    utt = sorted(p.stem for p in feats.glob("*.zrsf"))[0]
    out = tmp_path / "sim.pgm"
    assert cli.main(["simmat", "--features", str(feats), "--a", f"{utt}:0.0:0.3", "--b", f"{utt}:0.1:0.4",
                     "--out", str(out)]) == 0
    assert out.read_bytes().startswith(b"P")


@pytest.mark.parametrize("argv", [
    [],
    ["no-such-command"],
    ["mfcc", "--manifest", "/nonexistent/manifest.tsv", "--out", "x"],
    ["trends", "--only", "fig4"],
    ["--threads", "0", "trends", "--only", "vtln"],
])
def test_errors_exit_two(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(argv) == cli.EXIT_ERROR


def test_help_exits_zero(capsys):
    assert cli.main(["--help"]) == cli.EXIT_OK
    assert "trends" in capsys.readouterr().out


def test_failed_trend_check_exits_one(monkeypatch, tmp_path, capsys):
    def fake(seed, only):
        return trends.TrendReport(seed, {}, [trends.Check("x", "vtln", False, 0.5, "share >= 0.9")])

    monkeypatch.setattr(trends, "run_trend_suite", fake)
    out = tmp_path / "t.json"
    assert cli.main(["trends", "--only", "vtln", "--out", str(out)]) == cli.EXIT_TREND
    assert "FAIL" in capsys.readouterr().out
    assert json.loads(out.read_text())["passed"] is False


@pytest.mark.slow
def test_trends_vtln_only_passes(tmp_path):
    out = tmp_path / "t.json"
    assert cli.main(["trends", "--only", "vtln", "--seed", "1", "--out", str(out)]) == cli.EXIT_OK
    body = json.loads(out.read_text())
    assert [c["group"] for c in body["checks"]] == ["vtln"]
    assert set(body["results"]) == {"vtln"}


@pytest.mark.skipif(shutil.which("zrsub") is None, reason="console script not installed")
def test_console_script_exit_code():
    done = subprocess.run(["zrsub", "trends", "--only", "nothing"], capture_output=True, text=True)
    assert done.returncode == 2
    done = subprocess.run([sys.executable, "-m", "zrsub.cli", "--help"], capture_output=True, text=True)
    assert done.returncode == 0
