"""
Run artifacts: CSV exports and summaries, plus comparison of two runs.

A run directory holds ``timeline.csv``, ``rates.csv``, ``alerts.csv`` and
``summary.json``.  The summary is computed from the two CSVs alone, so it can
be recomputed by anyone holding the run directory.  Figures are optional and
written next to the CSVs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .model import Label
from .orchestrator import ALERT_CSV_COLUMNS
from .simnet import ScenarioResult

TIMELINE_COLUMNS = ("label", "host", "timestamp_s", "detail")
RATE_COLUMNS = ("host", "second", "delivered_queries")
RUN_FILES = ("timeline.csv", "rates.csv", "alerts.csv", "summary.json")


class ReportError(ValueError):
    pass


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def timeline_csv(result: ScenarioResult) -> str:
    return _csv(
        TIMELINE_COLUMNS,
        ((e.label.value, e.host, f"{e.timestamp:.6f}", e.detail) for e in result.timeline),
    )


def rates_csv(result: ScenarioResult) -> str:
    return _csv(
        RATE_COLUMNS,
        ((host, sec, n) for host, series in result.rates.items() for sec, n in enumerate(series)),
    )


def alerts_csv(result: ScenarioResult) -> str:
    return _csv(ALERT_CSV_COLUMNS, result.alerts.rows())


def read_timeline(path: str | Path) -> list[dict[str, Any]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["timestamp_s"] = float(r["timestamp_s"])
    return rows


def read_rates(path: str | Path) -> dict[str, list[int]]:
    series: dict[str, list[int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            series.setdefault(r["host"], []).append(int(r["delivered_queries"]))
    return series


# ---------------------------------------------------------------------------
# Summary
# ---------------------------------------------------------------------------


def summarize(
    scenario: str,
    timeline: Sequence[Mapping[str, Any]],
    rates: Mapping[str, Sequence[int]],
) -> dict[str, Any]:
    """RunSummary as a plain dict.

    Per-host response time is that host's first D minus the first A anywhere
    in the run.  ``post_mitigation_max_rate`` is the largest per-second DNS
    count a host delivered in any whole second starting at or after its D.
    """
    hosts: dict[str, dict[str, Optional[float]]] = {}
    for h in rates:
        hosts.setdefault(h, {})
    for r in timeline:
        per = hosts.setdefault(r["host"], {})
        letter = r["label"][0]
        if per.get(letter) is None:
            per[letter] = r["timestamp_s"]
    a_times = [r["timestamp_s"] for r in timeline if r["label"] == Label.A_ALERT_RAISED.value]
    d_times = [r["timestamp_s"] for r in timeline if r["label"] == Label.D_RESPONSE_EFFECTIVE.value]
    first_a = min(a_times) if a_times else None

    total = None
    if first_a is not None and d_times:
        total = _r(max(d_times) - first_a)

    post_max: Optional[int] = None
    out_hosts = {}
    for h in sorted(hosts):
        per = {k: hosts[h].get(k) for k in "ABCD"}
        d = per["D"]
        response = None if (d is None or first_a is None) else _r(d - first_a)
        out_hosts[h] = {**per, "response_time": response}
        # hosts that sent no DNS at all have no rate to report
        if d is not None and any(rates.get(h, ())):
            tail = list(rates[h][math.ceil(d):])
            if tail:
                post_max = max(post_max or 0, max(tail))
    return {
        "scenario": scenario,
        "hosts": out_hosts,
        "first_alert": first_a,
        "last_response": max(d_times) if d_times else None,
        "total_response_time": total,
        "post_mitigation_max_rate": post_max,
        "alert_count": len(a_times),
    }


def _r(seconds: float) -> float:
    return round(seconds, 6)


def format_summary(summary: Mapping[str, Any]) -> str:
    def f(v):
        return "-" if v is None else f"{v:.3f}"

    lines = [f"scenario: {summary['scenario']}", f"{'host':<8} {'A':>9} {'B':>9} {'C':>9} {'D':>9} {'response':>9}"]
    for h, per in summary["hosts"].items():
        lines.append(
            f"{h:<8} {f(per['A']):>9} {f(per['B']):>9} {f(per['C']):>9} {f(per['D']):>9} {f(per['response_time']):>9}"
        )
    lines.append(f"alerts raised: {summary['alert_count']}")
    lines.append(f"total response time (first A -> last D): {f(summary['total_response_time'])} s")
    rate = summary["post_mitigation_max_rate"]
    lines.append(f"max delivered DNS rate after D: {'-' if rate is None else f'{rate} q/s'}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Run directories
# ---------------------------------------------------------------------------


def write_run(result: ScenarioResult, out_dir: str | Path, figures: bool = False) -> dict[str, Any]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "timeline.csv").write_text(timeline_csv(result), encoding="utf-8")
    (out / "rates.csv").write_text(rates_csv(result), encoding="utf-8")
    (out / "alerts.csv").write_text(alerts_csv(result), encoding="utf-8")
    summary = summarize(result.scenario.name, read_timeline(out / "timeline.csv"), read_rates(out / "rates.csv"))
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    if figures:
        render_figures(out)
    return summary


def load_summary(run_dir: str | Path) -> dict[str, Any]:
    path = Path(run_dir) / "summary.json"
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError:
        raise ReportError(f"missing summary: {path}") from None
    except json.JSONDecodeError as exc:
        raise ReportError(f"corrupt summary {path}: {exc}") from None
    if not isinstance(data, dict) or not {"scenario", "hosts", "total_response_time"} <= set(data):
        raise ReportError(f"corrupt summary {path}: missing fields")
    return data


def compare(a: Mapping[str, Any], b: Mapping[str, Any]) -> dict[str, Any]:
    """Response-time deltas ``a - b`` per host and in total."""

    def delta(x, y):
        return None if x is None or y is None else _r(x - y)

    hosts = {}
    for h in sorted(set(a["hosts"]) | set(b["hosts"])):
        ra = a["hosts"].get(h, {}).get("response_time")
        rb = b["hosts"].get(h, {}).get("response_time")
        hosts[h] = {"a": ra, "b": rb, "delta": delta(ra, rb)}
    return {
        "a": a["scenario"],
        "b": b["scenario"],
        "same_scenario": a["scenario"] == b["scenario"],
        "hosts": hosts,
        "total": {
            "a": a["total_response_time"],
            "b": b["total_response_time"],
            "delta": delta(a["total_response_time"], b["total_response_time"]),
        },
    }


def format_comparison(cmp: Mapping[str, Any]) -> str:
    def f(v, sign=""):
        return "-" if v is None else format(v, f"{sign}.3f")

    lines = [f"A: {cmp['a']}  B: {cmp['b']}", f"{'host':<8} {'A':>9} {'B':>9} {'A-B':>9}"]
    for h, d in [*cmp["hosts"].items(), ("total", cmp["total"])]:
        lines.append(f"{h:<8} {f(d['a']):>9} {f(d['b']):>9} {f(d['delta'], '+'):>9}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

_LABEL_STYLE = {"A": ":", "B": "--", "C": "-.", "D": "-"}


def render_figures(run_dir: str | Path) -> list[Path]:
    """Write rates.png (delivered DNS q/s with A-D markers) and timeline.png."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run = Path(run_dir)
    timeline = read_timeline(run / "timeline.csv")
    rates = read_rates(run / "rates.csv")
    hosts = sorted({*rates, *(r["host"] for r in timeline)})
    colors = {h: f"C{i}" for i, h in enumerate(hosts)}
    written = []

    if any(any(series) for series in rates.values()):
        fig, ax = plt.subplots(figsize=(8, 4))
        for h in hosts:
            series = rates.get(h, [])
            ax.step(range(len(series)), series, where="post", color=colors[h], label=h)
        ax.set_ylim(bottom=0)
        for h in hosts:
            seen = set()
            for r in timeline:
                letter = r["label"][0]
                if r["host"] != h or letter in seen:
                    continue
                seen.add(letter)
                ax.axvline(r["timestamp_s"], color=colors[h], ls=_LABEL_STYLE[letter], lw=0.8, alpha=0.7)
                ax.annotate(letter, (r["timestamp_s"], ax.get_ylim()[1]), color=colors[h],
                            fontsize=7, ha="center", va="bottom", annotation_clip=False)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("delivered DNS queries / s")
        ax.legend(loc="upper right", fontsize=8)
        fig.tight_layout()
        path = run / "rates.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(8, 0.6 * len(hosts) + 1.5))
    markers = {"A": "o", "B": "s", "C": "^", "D": "D"}
    for letter, marker in markers.items():
        xs = [r["timestamp_s"] for r in timeline if r["label"][0] == letter]
        ys = [hosts.index(r["host"]) for r in timeline if r["label"][0] == letter]
        if xs:
            ax.scatter(xs, ys, marker=marker, label=letter, s=30)
    ax.set_yticks(range(len(hosts)), hosts)
    ax.set_xlabel("time (s)")
    ax.legend(loc="upper left", fontsize=8, ncol=4)
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    path = run / "timeline.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
