from __future__ import annotations

import json

import pytest

from idsorch import report
from idsorch.simnet import run_scenario, scenario_dns_jit, scenario_dns_prebuilt


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    out = {}
    for make in (scenario_dns_jit, scenario_dns_prebuilt):
        s = make()
        out[s.name] = (base / s.name, report.write_run(run_scenario(s), base / s.name))
    return out


def test_run_directory_files(runs):
    d, summary = runs["scenario_dns_jit"]
    assert sorted(p.name for p in d.iterdir()) == sorted(report.RUN_FILES)
    assert json.loads((d / "summary.json").read_text()) == summary
    assert summary["hosts"]["VM1"]["A"] is None and summary["hosts"]["VM1"]["C"] is not None
    assert summary["post_mitigation_max_rate"] <= 5
    assert (d / "timeline.csv").read_text().splitlines()[0] == "label,host,timestamp_s,detail"


def test_summary_recomputable_from_csvs(runs):
    d, summary = runs["scenario_dns_prebuilt"]
    again = report.summarize(summary["scenario"], report.read_timeline(d / "timeline.csv"),
                             report.read_rates(d / "rates.csv"))
    assert again == summary


def test_compare_jit_vs_prebuilt(runs):
    jit = report.load_summary(runs["scenario_dns_jit"][0])
    pre = report.load_summary(runs["scenario_dns_prebuilt"][0])
    assert pre["total_response_time"] < jit["total_response_time"]
    cmp = report.compare(jit, pre)
    assert not cmp["same_scenario"]
    assert all(h["delta"] > 0 for h in cmp["hosts"].values())
    same = report.compare(jit, jit)
    assert all(h["delta"] == 0 for h in same["hosts"].values()) and same["total"]["delta"] == 0
    assert "total" in report.format_comparison(cmp)


def test_load_summary_errors(tmp_path):
    with pytest.raises(report.ReportError, match="missing"):
        report.load_summary(tmp_path)
    (tmp_path / "summary.json").write_text("{not json")
    with pytest.raises(report.ReportError, match="corrupt"):
        report.load_summary(tmp_path)
    (tmp_path / "summary.json").write_text("[]")
    with pytest.raises(report.ReportError, match="corrupt"):
        report.load_summary(tmp_path)


def test_figures(tmp_path):
    report.write_run(run_scenario(scenario_dns_jit()), tmp_path, figures=True)
    for name in ("rates.png", "timeline.png"):
        assert (tmp_path / name).read_bytes()[:4] == b"\x89PNG"
