from __future__ import annotations

import pytest

from nada.simnet.adversary import LOG_CHAIN, AdversaryAction, Kind
from nada.simnet.scenario import exit_code, inject_adversary
from nada.simnet.suite import boundary_targets, standard_actions


def one(config, kind, mtype, n=0, mode=None, disabled=()):
    cfg = config.with_disabled(set(disabled)) if disabled else config
    run = inject_adversary(cfg, [AdversaryAction(Kind(kind), mtype, n, mode=mode)])
    return run, run.report["attacks"][0]


@pytest.mark.parametrize("kind,mtype,mitigation", [
    ("eavesdrop", "CONTENT_CHUNK", "M12"),
    ("tamper", "AUTH_KEY", "M10"),
    ("spoof", "META_DATA", "M11"),
    ("elevate", "TICKET_REQUEST", "M3"),
])
def test_attacks_blocked_by_named_mitigation(reference_config, kind, mtype, mitigation):
    targets = boundary_targets(reference_config)
    run, outcome = one(reference_config, kind, mtype, targets[mtype])
    assert outcome["verdict"] == "Blocked"
    assert outcome["mitigation"] == mitigation
    assert exit_code(run.report) == 0


def test_drop_is_detected_and_logged(reference_config):
    targets = boundary_targets(reference_config)
    run, outcome = one(reference_config, "drop", "CONTENT_CHUNK", targets["CONTENT_CHUNK"])
    assert outcome["verdict"] == "Blocked" and outcome["mitigation"] == "M4.1"
    assert any(r["kind"] == "incident" for r in run.trace)


@pytest.mark.parametrize("mode,index", [("mutate", 3), ("reorder", 3), ("duplicate", 3), ("mutate", 0)])
def test_log_chain_tampering_blocked(reference_config, mode, index):
    kind = "replay" if mode == "duplicate" else "tamper"
    _, outcome = one(reference_config, kind, LOG_CHAIN, index, mode=mode)
    assert outcome["verdict"] == "Blocked"
    assert outcome["mitigation"].startswith("M4")


@pytest.mark.parametrize("kind,mtype,disabled", [
    ("tamper", "CONTENT_CHUNK", "M5"),
    ("spoof", "META_DATA", "M11"),
    ("tamper", "AUTH_KEY", "M10"),
    ("elevate", "TICKET_REQUEST", "M3"),
])
def test_ablating_the_mitigation_lets_attack_through(reference_config, kind, mtype, disabled):
    targets = boundary_targets(reference_config)
    run, outcome = one(reference_config, kind, mtype, targets[mtype], disabled=(disabled,))
    assert outcome["verdict"] == "Succeeded"
    assert exit_code(run.report) == 1


def test_standard_actions_cover_every_kind_and_boundary_type(reference_config):
    actions = standard_actions(reference_config)
    targets = boundary_targets(reference_config)
    pairs = {(a.kind, a.mtype) for a in actions if a.mtype != LOG_CHAIN}
    assert pairs == {(k, t) for k in Kind for t in targets}
    assert sum(a.mtype == LOG_CHAIN for a in actions) == 3


def test_untriggered_action_is_reported(reference_config):
    _, outcome = one(reference_config, "tamper", "CONTENT_CHUNK", 10_000)
    assert outcome["verdict"] == "NotTriggered"
