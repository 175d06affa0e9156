from __future__ import annotations

import time

import pytest

from nada.errors import ConfigInvalid
from nada.simnet import invariants as inv
from nada.simnet.scenario import bundled_scenarios, exit_code, load_config, parse_config, run_scenario

CLEAN = ["service_bringup", "slice_install", "user_request", "monitoring", "content_distribution", "reference"]


@pytest.mark.parametrize("name", CLEAN)
def test_bundled_scenario_passes_all_invariants(name):
    run = run_scenario(load_config(bundled_scenarios()[name]))
    assert run.report["invariants"] == {k: True for k in inv.INVARIANTS}
    assert all(s.status == "ok" for s in run.steps)
    assert exit_code(run.report) == 0


def labels_of(run, kind):
    return [inv.step_labels(run.trace, s.start_seq, s.end_seq) for s in run.steps if s.kind == kind]


def test_label_sequences_are_the_documented_ones():
    # Written out by hand, not derived from the invariant module.
    assert inv.USER_REQUEST == [f"user_request.{i}" for i in (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12)]
    assert inv.COLLECTION == ["collection.I", "collection.II", "collection.III", "collection.IV", "collection.V"]
    assert inv.END_USER_REQUEST[-6:] == ["content_distribution.7", "content_distribution.8",
                                         "content_distribution.9", "content_distribution.10",
                                         "content_distribution.11", "content_distribution.12"]


def test_reference_labels_in_order(reference_run):
    run = reference_run
    assert labels_of(run, "bringup") == [[f"bringup.{i}" for i in range(1, 6)] * 2]
    assert labels_of(run, "install")[0] == [f"slice_install.{i}" for i in range(1, 5)] * 3
    assert labels_of(run, "user_request") == [[f"user_request.{i}" for i in range(1, 13)]]
    assert labels_of(run, "internal_monitoring") == [[f"internal_monitoring.{i}" for i in range(1, 10)]]
    assert labels_of(run, "collection") == [["collection.I", "collection.II", "collection.III", "collection.IV",
                                             "collection.V"] * 2]
    assert labels_of(run, "export") == [[f"export.{i}" for i in range(1, 6)]]
    assert labels_of(run, "end_user_request") == [[f"end_user_request.{i}" for i in range(1, 8)]
                                                  + [f"content_distribution.{i}" for i in range(7, 13)]]


def test_reboot_repeats_bringup():
    run = run_scenario(load_config(bundled_scenarios()["service_bringup"]))
    assert labels_of(run, "reboot") == [[f"bringup.{i}" for i in range(1, 6)]]


@pytest.mark.parametrize("name", CLEAN)
def test_scenarios_are_fast(name):
    t = time.perf_counter()
    run_scenario(load_config(bundled_scenarios()[name]))
    assert time.perf_counter() - t < 5


@pytest.mark.parametrize("name", sorted(bundled_scenarios()))
def test_fixed_seed_reproduces_trace(name):
    config = load_config(bundled_scenarios()[name])
    digests = {run_scenario(config).report["trace_digest"] for _ in range(3)}
    assert len(digests) == 1


def test_seed_changes_trace(reference_config):
    a = run_scenario(reference_config, 1).report["trace_digest"]
    b = run_scenario(reference_config, 2).report["trace_digest"]
    assert a != b


def test_m5_ablation_reports_succeeded_tamper():
    run = run_scenario(load_config(bundled_scenarios()["m5_ablated"]))
    assert exit_code(run.report) == 1
    assert [a["verdict"] for a in run.report["attacks"]] == ["Succeeded"]
    assert run.report["attacks"][0]["action"] == "tamper:CONTENT_CHUNK#0"


@pytest.mark.parametrize("raw,needle", [
    ([], "mapping"),
    ({"nodes": []}, "at least one node"),
    ({"nodes": ["n1", "n1"]}, "duplicate node"),
    ({"nodes": ["n1"], "slices": [{"rid": "NM2", "nodes": ["n1"]}]}, "customer/app"),
    ({"nodes": ["n1"], "slices": [{"rid": "C1/A1", "nodes": ["n9"]}]}, "unknown nodes"),
    ({"nodes": ["n1"], "slices": [{"rid": "NM/A1", "nodes": ["n1"]}]}, "NM"),
    ({"nodes": ["n1"], "script": ["dance"]}, "unknown step"),
    ({"nodes": ["n1"], "adversary": [{"kind": "teleport", "type": "X"}]}, "adversary"),
    ({"nodes": [{"id": "n1", "log_sink": "void"}]}, "log_sink"),
])
def test_invalid_configs_rejected(raw, needle):
    with pytest.raises(ConfigInvalid) as err:
        parse_config(raw)
    assert needle in str(err.value)


def test_bad_step_arguments_rejected():
    config = parse_config({"nodes": ["n1"], "script": [{"reboot": {"nod": "n1"}}]})
    with pytest.raises(ConfigInvalid):
        run_scenario(config)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("nodes: [unclosed\n")
    with pytest.raises(ConfigInvalid):
        load_config(bad)
