from __future__ import annotations

import json

from nada.cli import main, resolve_scenario
from nada.stride import bundled_paths


def test_run_bundled_scenario(tmp_path, capsys):
    report, trace, figs = tmp_path / "r.json", tmp_path / "t.jsonl", tmp_path / "figs"
    code = main(["run", "service_bringup", "--report", str(report), "--trace", str(trace), "--figures", str(figs)])
    out = capsys.readouterr().out
    assert code == 0 and out.rstrip().endswith("PASS")
    data = json.loads(report.read_text())
    assert data["scenario"] == "service_bringup" and all(data["invariants"].values())
    lines = trace.read_text().splitlines()
    assert len(lines) == data["trace_events"] and json.loads(lines[0])["seq"] == 0
    assert (figs / "message_timeline.png").stat().st_size > 0
    assert (figs / "messages_per_step.png").stat().st_size > 0


def test_run_reports_are_byte_stable(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["run", "reference", "--report", str(a)]) == 0
    assert main(["run", "reference", "--report", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_seed_override_changes_digest(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["run", "reference", "--report", str(a)])
    main(["run", "reference", "--seed", "99", "--report", str(b)])
    da, db = json.loads(a.read_text()), json.loads(b.read_text())
    assert db["seed"] == 99 and da["trace_digest"] != db["trace_digest"]


def test_ablated_scenario_fails(tmp_path, capsys):
    report, figs = tmp_path / "r.json", tmp_path / "figs"
    assert main(["run", "m5_ablated", "--report", str(report), "--figures", str(figs)]) == 1
    assert capsys.readouterr().out.rstrip().endswith("FAIL")
    attacks = json.loads(report.read_text())["attacks"]
    assert [(a["kind"], a["type"], a["verdict"]) for a in attacks] == [("tamper", "CONTENT_CHUNK", "Succeeded")]
    assert (figs / "attack_verdicts.png").exists()


def test_disable_flag_matches_bundled_ablation(tmp_path):
    scenario = tmp_path / "s.yaml"
    text = resolve_scenario("m5_ablated").read_text().replace("  disabled: [M5]", "  disabled: []")
    scenario.write_text(text)
    assert main(["run", str(scenario)]) == 0
    assert main(["run", str(scenario), "--disable", "M5"]) == 1


def test_missing_or_invalid_scenario(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\nnodes: [{id: n1}]\nscript: [warp_drive]\n")
    assert main(["run", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


def test_stride_bundled_passes(tmp_path, capsys):
    checklist, report, figs = tmp_path / "c.md", tmp_path / "r.json", tmp_path / "figs"
    code = main(["stride", "check", "--checklist", str(checklist), "--report", str(report),
                 "--figures", str(figs)])
    assert code == 0
    assert "0 uncovered" in capsys.readouterr().out
    data = json.loads(report.read_text())
    body = [ln for ln in checklist.read_text().splitlines() if ln.startswith("- [ ]")]
    assert len(body) == sum(len(p["mitigations"]) for p in data["coverage"])
    assert (figs / "coverage.png").exists() and (figs / "deletion_impact.png").exists()


def test_stride_outputs_byte_stable(tmp_path):
    for name in ("a", "b"):
        main(["stride", "check", "--sweep", "--report", str(tmp_path / f"{name}.json"),
              "--checklist", str(tmp_path / f"{name}.md")])
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.md").read_bytes() == (tmp_path / "b.md").read_bytes()


def test_stride_ablated_catalog_fails(tmp_path, capsys):
    _, _, measures = bundled_paths()
    text = measures.read_text()
    start = text.index("  - id: M5\n")
    end = text.index("  - id: M6.1\n")
    ablated = tmp_path / "measures.yaml"
    ablated.write_text(text[:start] + text[end:])
    assert main(["stride", "check", "--measures", str(ablated)]) == 1
    assert "uncovered: nada_content_mgmt T" in capsys.readouterr().out


def test_stride_standard_mode(capsys):
    assert main(["stride", "check", "--mode", "standard"]) == 0
    assert capsys.readouterr().out.startswith("standard mapping")


def test_stride_bad_input_exits_2(tmp_path, capsys):
    bad = tmp_path / "dfd.yaml"
    bad.write_text("elements: [\n")
    assert main(["stride", "check", "--dfd", str(bad)]) == 2
    assert main(["stride", "check", "--dfd", str(tmp_path / "missing.yaml")]) == 2
    assert "dfd.yaml" in capsys.readouterr().err
