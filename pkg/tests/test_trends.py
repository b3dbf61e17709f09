import json

import pytest

from zrsub import trends
from zrsub.trends import Check, TrendReport, rank_order, table4_agreement, warp_recovery


def test_warp_recovery_tolerance():
    true = {"a": 0.9, "b": 1.0, "c": 1.1, "d": 1.1}
    est = {"a": 0.94, "b": 1.05, "c": 1.1, "d": 1.06}
    assert warp_recovery(est, true) == 0.75
    assert warp_recovery(est, true, tol=0.05) == 1.0


def test_rank_order_breaks_ties_by_name():
    assert rank_order({"b": 0.5, "a": 0.5, "c": 0.1}) == ["c", "a", "b"]
    assert rank_order({"b": 0.5, "a": 0.5, "c": 0.1}, reverse=True) == ["a", "b", "c"]


def test_table4_agreement():
    ok = {"ap": {"x": 0.9, "y": 0.8, "z": 0.7}, "abx_cross": {"x": 5.0, "y": 10.0, "z": 20.0}}
    assert table4_agreement(ok).passed
    swapped = {"ap": ok["ap"], "abx_cross": {"x": 10.0, "y": 5.0, "z": 20.0}}
    assert not table4_agreement(swapped).passed
    tied = {"ap": ok["ap"], "abx_cross": {"x": 5.0, "y": 5.0, "z": 20.0}}
    assert not table4_agreement(tied).passed


def test_margin_threshold():
    assert trends._margin("m", "g", 0.52, 0.50, "d").passed
    assert not trends._margin("m", "g", 0.519, 0.50, "d").passed


def test_report_serialization_is_canonical():
    rep = TrendReport(3, {"b": {"y": 1.0}, "a": [0.5]}, [Check("n", "vtln", True, 1.0, "r")])
    text = rep.to_json()
    assert text == TrendReport(3, {"a": [0.5], "b": {"y": 1.0}}, list(rep.checks)).to_json()
    assert json.loads(text)["passed"] is True
    assert "vtln/n" in rep.table() and "PASS" in rep.table()


def test_unknown_group_rejected():
    with pytest.raises(ValueError):
        trends.run_trend_suite(0, ["fig4"])


def test_fig3_orders_must_share_languages():
    with pytest.raises(ValueError):
        trends.run_fig3_table4(0, trends.Fig3Setup(orders=((1, 2, 3), (1, 2, 4))))


def test_training_languages_miss_different_target_phones():
    setup = trends.Fig3Setup()
    langs = trends.fig3_languages(setup, 0)
    target = set(langs.pop("target"))
    missing = [frozenset(target - set(p)) for p in langs.values()]
    assert len(missing) == setup.n_languages
    assert all(len(m) == setup.drop_consonants + 1 for m in missing)
    assert len(set(missing)) == len(missing)
    assert trends.fig3_languages(setup, 0) == trends.fig3_languages(setup, 0)
