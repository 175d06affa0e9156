"""The eight acceptance criteria, one test each. Each prints a PASS/FAIL line."""

from __future__ import annotations

import time

from nada import stride
from nada.core import signing_bytes
from nada.crypto import verify_signature
from nada.errors import Deny
from nada.node import split_payload
from nada.policy import Request, Rule, pdp_evaluate
from nada.records import ExportQuery
from nada.simnet.scenario import bundled_scenarios, load_config, run_scenario
from nada.simnet.suite import ABLATION_TARGETS, ablation_sweep, run_suite
from nada.trust_anchor import verify_log_chain

from .oracles import (CUSTOMERS, acceptance_line, log_sweep, overlay_mismatches, overlay_sweep,
                      pdp_ordering_mismatches, seal_sweep)
from .test_management import _monitoring_world
from .test_stride import STANDARD_CELLS


def report(number: int, title: str, ok: bool, detail: str) -> None:
    print(acceptance_line(number, title, ok, detail))
    assert ok, detail


# Hand-written label sequences, one repetition per node or per (slice, node).
BRINGUP = [f"bringup.{i}" for i in range(1, 6)]
EXPECTED_LABELS = {
    "bringup": BRINGUP,
    "reboot": BRINGUP,
    "install": [f"slice_install.{i}" for i in range(1, 5)],
    "user_request": [f"user_request.{i}" for i in range(1, 13)],
    "internal_monitoring": [f"internal_monitoring.{i}" for i in range(1, 10)],
    "collection": ["collection.I", "collection.II", "collection.III", "collection.IV", "collection.V"],
    "export": [f"export.{i}" for i in range(1, 6)],
    "end_user_request": [f"end_user_request.{i}" for i in range(1, 8)]
    + [f"content_distribution.{i}" for i in range(7, 13)],
}
SCENARIO_KINDS = {
    "service_bringup": {"bringup", "reboot"},
    "slice_install": {"install"},
    "user_request": {"user_request"},
    "monitoring": {"internal_monitoring", "collection", "export"},
    "content_distribution": {"end_user_request"},
}


def _labels(trace, start, end):
    return [r["label"] for r in trace if r["kind"] == "step" and start < r["seq"] < end]


def _repeats_of(labels, unit):
    n, rem = divmod(len(labels), len(unit))
    return n >= 1 and rem == 0 and labels == unit * n


def test_criterion_1_scenario_fidelity():
    problems, slowest = [], 0.0
    for name, kinds in SCENARIO_KINDS.items():
        t = time.perf_counter()
        run = run_scenario(load_config(bundled_scenarios()[name]))
        elapsed = time.perf_counter() - t
        slowest = max(slowest, elapsed)
        if elapsed >= 5:
            problems.append(f"{name} took {elapsed:.1f}s")
        seen = set()
        for s in run.steps:
            labels = _labels(run.trace, s.start_seq, s.end_seq)
            if s.status != "ok" or not _repeats_of(labels, EXPECTED_LABELS[s.kind]):
                problems.append(f"{name}/{s.kind}: {s.status} {labels}")
            seen.add(s.kind)
        if not kinds <= seen:
            problems.append(f"{name} never ran {sorted(kinds - seen)}")
    report(1, "scenario fidelity", not problems,
           f"{len(SCENARIO_KINDS)} scenarios, slowest {slowest:.2f}s" + (f"; {problems}" if problems else ""))


def test_criterion_2_sealing_invariant():
    cases = seal_sweep()
    bad = [c for c in cases if not c.ok]
    ok = len(cases) >= 20 and not bad and any(c.expected for c in cases) and any(not c.expected for c in cases)
    report(2, "sealing invariant", ok, f"{len(cases)} perturbations, {len(bad)} mismatches or exceptions")


def test_criterion_3_overlay_confinement():
    t = time.perf_counter()
    rows = overlay_sweep(range(512))
    elapsed = time.perf_counter() - t
    bad = overlay_mismatches(rows)
    matrices = len({r[0] for r in rows})
    ok = matrices == 512 and not bad and elapsed < 60
    report(3, "overlay confinement", ok,
           f"{matrices} matrices, {len(rows)} pairs x 3 routes, {len(bad)} mismatches, {elapsed:.1f}s")


def test_criterion_4_attack_suite(reference_config):
    catalog = stride.load_bundled().catalog
    ids = {m.id for m in catalog}
    suite = run_suite(reference_config)
    unnamed = [o["action"] for o in suite.blocked if o["mitigation"] not in ids]
    names = [o["mitigation"] for o in suite.blocked]
    unknown = stride.unknown_verdict_mitigations(catalog, names)
    untested = stride.unreferenced_testable(catalog, names)
    ablations = ablation_sweep(reference_config)
    flipped = {m: len(r.succeeded) for m, r in ablations.items()}
    ok = (bool(suite.outcomes) and suite.all_blocked and not unnamed and not unknown and not untested
          and set(flipped) == set(ABLATION_TARGETS) and all(flipped.values()))
    report(4, "attack suite", ok,
           f"{len(suite.blocked)}/{len(suite.outcomes)} blocked, unnamed {unnamed}, testable never blocking "
           f"{untested}; Succeeded after ablation {flipped}")


def test_criterion_5_non_repudiation():
    problems, commands = [], 0
    for name in ("user_request", "content_distribution", "reference"):
        run = run_scenario(load_config(bundled_scenarios()[name]))
        for node_id, node in run.world.nodes.items():
            entries = [e for e in node.anchor.log if split_payload(e)[0] == "user_request"]
            commands += node.user_commands
            if len(entries) != node.user_commands or len({e.signature for e in entries}) != len(entries):
                problems.append(f"{name}/{node_id}: {node.user_commands} commands, {len(entries)} entries")
            if not all(verify_signature(node.anchor.log_public, signing_bytes(e), e.signature) for e in entries):
                problems.append(f"{name}/{node_id}: bad signature")
            if not verify_log_chain(node.anchor.log, node.anchor.log_public).accepted:
                problems.append(f"{name}/{node_id}: chain rejected")
    sweep = log_sweep(10)
    missed = [n for n, ok in sweep if not ok]
    ok = commands > 0 and not problems and not missed
    report(5, "non-repudiation", ok,
           f"{commands} user commands mapped 1:1; {len(sweep) - len(missed)}/{len(sweep)} chain mutations "
           f"detected at the right index" + (f"; {problems} {missed}" if problems or missed else ""))


def test_criterion_6_monitoring_access_control(fresh_reference):
    from nada.core import parse_rid

    queries = [Request({"customer": s, "role": role}, {"customer": r}, a)
               for s in CUSTOMERS + ("C3", "*") for r in CUSTOMERS + ("C3", "NM")
               for role in ("controller", "slice") for a in ("read", "export")]
    empty_permits = sum(pdp_evaluate([], q).permitted for q in queries)

    world = fresh_reference.world
    node, rival = world.nodes["n1"], parse_rid("C2/A1")
    rival_attempts, rival_denied = 0, 0
    for subject in ("C1/A1", "NM"):
        for metric in ("cpu", "mem", "bandwidth", "*"):
            rival_attempts += 1
            try:
                node.internal_monitoring_request(rival, subject, metric)
            except Deny:
                rival_denied += 1
    # A world where the rival customer also has a controller; only C1 holds a grant.
    mworld = _monitoring_world([Rule.from_dict({"id": "c1-own", "subject": {"role": "controller", "customer": "C1"},
                                                "resource": {"customer": "C1"}, "effect": "permit"})])
    for q in (ExportQuery("C1", "*"), ExportQuery("C1", "cpu"), ExportQuery("*", "*"), ExportQuery("NM", "*")):
        rival_attempts += 1
        try:
            mworld.controllers["ctl-c2"].request_export(mworld.monitoring, q)
        except Deny:
            rival_denied += 1

    checked, bad = pdp_ordering_mismatches()
    ok = empty_permits == 0 and rival_denied == rival_attempts and not bad
    report(6, "monitoring access control", ok,
           f"{empty_permits} permits over {len(queries)} queries with no rules; rival {rival_denied}/"
           f"{rival_attempts} denied; ordering oracle {checked} decisions, {len(bad)} mismatches")


def test_criterion_7_stride_fidelity():
    problems = []
    if stride.marked_cells(stride.Mode.STANDARD) != STANDARD_CELLS:
        problems.append("standard mapping differs from the transcribed table")
    deltas = stride.mapping_deltas()
    if deltas != [("S", "added", ("DataFlow",)), ("R", "added", ("DataFlow",)),
                  ("R", "removed", ("ExternalEntity", "Process"))]:
        problems.append(f"deltas {deltas}")
    model = stride.load_bundled()
    coverage = stride.coverage_of(model)
    sweep = stride.deletion_sweep(model)
    silent = [m for m, pairs in sweep.items() if not pairs]
    if coverage.uncovered:
        problems.append(f"{len(coverage.uncovered)} uncovered")
    if silent:
        problems.append(f"deleting {silent} uncovers nothing")
    report(7, "STRIDE fidelity", not problems,
           f"{len(STANDARD_CELLS)} standard cells, 3 deltas, {len(coverage.pairs)} pairs, "
           f"{len(coverage.uncovered)} uncovered, {len(sweep)} deletions each uncover >=1"
           + (f"; {problems}" if problems else ""))


def test_criterion_8_determinism():
    spread = {}
    for name, path in sorted(bundled_scenarios().items()):
        config = load_config(path)
        spread[name] = len({run_scenario(config).report["trace_digest"] for _ in range(10)})
    varying = [n for n, k in spread.items() if k != 1]
    report(8, "determinism", not varying, f"{len(spread)} scenarios x 10 runs, varying: {varying or 'none'}")
