"""Matplotlib figures for run reports, attack suites and STRIDE coverage."""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .stride import THREATS, CoverageReport  # noqa: E402

VERDICT_COLORS = {"Blocked": "#4c9a2a", "Succeeded": "#c0392b", "NotTriggered": "#999999"}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def message_timeline(trace: list[dict[str, Any]], path: Path) -> Path:
    """One lane per sending entity; boundary-crossing messages drawn solid."""
    msgs = [r for r in trace if r["kind"] == "msg"]
    lanes = sorted({r["src"] for r in msgs} | {r["dst"] for r in msgs})
    row = {e: i for i, e in enumerate(lanes)}
    fig, ax = plt.subplots(figsize=(10, max(3, 0.35 * len(lanes) + 1)))
    for crossed, marker, label in ((True, "o", "crosses boundary"), (False, "x", "within boundary")):
        sel = [r for r in msgs if r["boundary_crossed"] is crossed]
        if sel:
            ax.scatter([r["seq"] for r in sel], [row[r["src"]] for r in sel], marker=marker, s=14, label=label)
    for r in trace:
        if r["kind"] == "step" and r["label"].endswith(".1"):
            ax.axvline(r["seq"], color="#dddddd", lw=0.6, zorder=0)
    ax.set_yticks(range(len(lanes)), lanes, fontsize=7)
    ax.set_xlabel("trace sequence")
    ax.set_title("Messages by sender")
    ax.legend(fontsize=7, loc="upper left")
    return _save(fig, path)


def messages_per_step(report: dict[str, Any], trace: list[dict[str, Any]], path: Path) -> Path:
    counts = []
    for s in report["steps"]:
        n = sum(1 for r in trace if r["kind"] == "msg" and s["start_seq"] < r["seq"] < s["end_seq"])
        counts.append((s["label"], n, s["status"]))
    fig, ax = plt.subplots(figsize=(8, 3.5))
    colors = ["#3b6ea5" if st == "ok" else "#c0392b" for _, _, st in counts]
    ax.bar(range(len(counts)), [n for _, n, _ in counts], color=colors)
    ax.set_xticks(range(len(counts)), [lbl for lbl, _, _ in counts], rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("messages")
    ax.set_title(f"{report['scenario']} (seed {report['seed']})")
    return _save(fig, path)


def attack_verdicts(outcomes: list[dict[str, Any]], path: Path) -> Path:
    """Verdict matrix: message type rows, adversary kind columns."""
    kinds = sorted({o["kind"] for o in outcomes})
    types = sorted({o["type"] for o in outcomes})
    grid = {(o["type"], o["kind"]): o["verdict"] for o in outcomes}
    fig, ax = plt.subplots(figsize=(1.2 * len(kinds) + 3, 0.28 * len(types) + 1.5))
    for i, t in enumerate(types):
        for j, k in enumerate(kinds):
            v = grid.get((t, k))
            if v is not None:
                ax.add_patch(plt.Rectangle((j, i), 1, 1, color=VERDICT_COLORS[v]))
    ax.set_xlim(0, len(kinds))
    ax.set_ylim(len(types), 0)
    ax.set_xticks([j + 0.5 for j in range(len(kinds))], kinds, fontsize=8)
    ax.set_yticks([i + 0.5 for i in range(len(types))], types, fontsize=6)
    tally = Counter(o["verdict"] for o in outcomes)
    ax.set_title(", ".join(f"{v} {tally[v]}" for v in VERDICT_COLORS if tally[v]), fontsize=9)
    return _save(fig, path)


def coverage_heatmap(report: CoverageReport, path: Path) -> Path:
    """Number of effective mitigations per (element, threat); uncovered cells in red."""
    elements = list(dict.fromkeys(p.element for p in report.pairs))
    cell = {(p.element, p.threat): len(p.mitigations) for p in report.pairs}
    fig, ax = plt.subplots(figsize=(5, 0.2 * len(elements) + 1.5))
    for i, e in enumerate(elements):
        for j, t in enumerate(THREATS):
            n = cell.get((e, t))
            if n is None:
                continue
            color = "#c0392b" if n == 0 else plt.cm.Greens(min(0.3 + 0.2 * n, 1.0))
            ax.add_patch(plt.Rectangle((j, i), 1, 1, color=color))
            ax.text(j + 0.5, i + 0.5, str(n), ha="center", va="center", fontsize=5)
    ax.set_xlim(0, len(THREATS))
    ax.set_ylim(len(elements), 0)
    ax.set_xticks([j + 0.5 for j in range(len(THREATS))], list(THREATS))
    ax.set_yticks([i + 0.5 for i in range(len(elements))], elements, fontsize=5)
    ax.set_title(f"{report.mode.value} mapping: {len(report.uncovered)} uncovered", fontsize=9)
    return _save(fig, path)


def deletion_impact(sweep: dict[str, list], path: Path) -> Path:
    ids = list(sweep)
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(range(len(ids)), [len(sweep[m]) for m in ids], color="#3b6ea5")
    ax.set_xticks(range(len(ids)), ids, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("pairs left uncovered")
    ax.set_title("Single-mitigation removal")
    return _save(fig, path)


def run_figures(report: dict[str, Any], trace: list[dict[str, Any]], out: Path) -> list[Path]:
    out = Path(out)
    paths = [message_timeline(trace, out / "message_timeline.png"),
             messages_per_step(report, trace, out / "messages_per_step.png")]
    if report["attacks"]:
        paths.append(attack_verdicts(report["attacks"], out / "attack_verdicts.png"))
    return paths


def stride_figures(report: CoverageReport, sweep: dict[str, list] | None, out: Path) -> list[Path]:
    out = Path(out)
    paths = [coverage_heatmap(report, out / "coverage.png")]
    if sweep is not None:
        paths.append(deletion_impact(sweep, out / "deletion_impact.png"))
    return paths
