from __future__ import annotations

import dataclasses

import pytest

from nada.core import AppSlicePolicy, RequestKind, UserRequest, parse_rid, signing_bytes
from nada.crypto import verify_signature
from nada.errors import Deny, IntegrityFailure, UncertifiedPolicy, UnknownContent
from nada.node import Phase, split_payload
from nada.simnet.scenario import bundled_scenarios, load_config, run_scenario
from nada.trust_anchor import verify_log_chain

C1, C2 = parse_rid("C1/A1"), parse_rid("C2/A1")


def user_command_entries(node):
    return [e for e in node.anchor.log if split_payload(e)[0] == "user_request"]


def test_every_user_command_has_one_verifying_log_entry():
    run = run_scenario(load_config(bundled_scenarios()["user_request"]))
    node = run.world.nodes["n1"]
    entries = user_command_entries(node)
    # CONTENT, PLAY, STOP
    assert node.user_commands == 3 == len(entries)
    assert len({e.signature for e in entries}) == 3
    for e in entries:
        assert verify_signature(node.anchor.log_public, signing_bytes(e), e.signature)
    received = {e.signature for e in node.slices[C1].app.received_logs}
    assert {e.signature for e in entries} <= received
    assert verify_log_chain(node.anchor.log, node.anchor.log_public).accepted


def test_play_intervals_produce_periodic_play_logs():
    run = run_scenario(load_config(bundled_scenarios()["user_request"]))
    plays = [e for e in run.world.nodes["n1"].anchor.log if split_payload(e)[0] == "play"]
    assert len(plays) == 2
    assert plays[1].timestamp > plays[0].timestamp


def test_unknown_content_is_refused_by_the_slice(fresh_reference):
    node = fresh_reference.world.nodes["n1"]
    with pytest.raises(UnknownContent):
        node.handle_user_request(C1, UserRequest(RequestKind.CONTENT, "nope", 99))


def test_ui_shows_certified_provider(fresh_reference):
    node = fresh_reference.world.nodes["n1"]
    resp = node.handle_user_request(C1, UserRequest(RequestKind.CONTENT, "movie-1", 50))
    assert resp.provider_identity == "Acme Video"


def test_rival_slice_internal_monitoring_denied(fresh_reference):
    node = fresh_reference.world.nodes["n1"]
    for subject in ("C1/A1", "NM"):
        for metric in ("cpu", "mem", "bandwidth"):
            with pytest.raises(Deny):
                node.internal_monitoring_request(C2, subject, metric)
    rows = node.internal_monitoring_request(C2, "C2/A1", "cpu")
    assert all(r.subject == "C2/A1" for r in rows)


def test_slice_cannot_read_host_measurements(fresh_reference):
    node = fresh_reference.world.nodes["n1"]
    with pytest.raises(Deny):
        node.internal_monitoring_request(C1, "NM", "cpu")


def test_untrusted_slice_gets_nothing(fresh_reference):
    node = fresh_reference.world.nodes["n1"]
    node.images[C1] = node.images[C1] + b"patched on disk"
    with pytest.raises(Deny) as err:
        node.internal_monitoring_request(C1, "C1/A1", "cpu")
    assert err.value.reason == "UntrustedSlice"


def test_store_of_one_slice_unreadable_with_anothers_key(fresh_reference):
    node = fresh_reference.world.nodes["n1"]
    c2_key = node.anchor.get_storage_key(node.tds, C2)
    store = node.stores[C1]
    name = store.names()[0]
    with pytest.raises(IntegrityFailure):
        store.read(c2_key, name)


def test_store_blocks_are_not_plaintext(fresh_reference):
    world = fresh_reference.world
    data = world.contents["movie-1"]
    for node in world.nodes.values():
        for store in node.stores.values():
            assert data[:64] not in store.dump()
        assert data[:64] not in node.tds.dump()


def test_firewall_defaults_to_separation(fresh_reference):
    node = fresh_reference.world.nodes["n1"]
    assert node.firewall_permits(C1, C1)
    assert not node.firewall_permits(C1, C2)
    assert not node.firewall_permits(C2, C1)


def test_uncertified_policy_refused(fresh_reference):
    node = fresh_reference.world.nodes["n1"]
    forged = AppSlicePolicy(C2, frozenset({C1, C2}))
    with pytest.raises(UncertifiedPolicy):
        node.install_policy(forged)
    real = node.policy_of(C2)
    widened = dataclasses.replace(real, allowed_overlay_peers=frozenset({C1, C2}))
    with pytest.raises(UncertifiedPolicy):
        node.install_policy(widened)


def test_nodes_end_operational(reference_run):
    assert all(n.phase is Phase.OPERATIONAL for n in reference_run.world.nodes.values())
