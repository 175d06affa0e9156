from __future__ import annotations

import pytest

from nada.core import AppSlicePolicy, ResourceId, parse_rid
from nada.errors import Deny, StateMismatch, ManagementUnreachable, NoHolder, RejectedPolicy
from nada.records import ExportQuery, DownloadDefinitionFile
from nada.management import export_matches, route_holder
from nada.core import Measurement
from nada.node import Phase
from nada.policy import Rule
from nada.simnet.scenario import Runner, World, bundled_scenarios, load_config, parse_config


def world_of(name: str) -> World:
    config = load_config(bundled_scenarios()[name])
    return World(config, config.seed)


def test_second_maintenance_overlay_rejected():
    mgmt = world_of("service_bringup").management
    other = ResourceId.management("NM2")
    with pytest.raises(RejectedPolicy):
        mgmt.certify_policy(AppSlicePolicy(other, frozenset({other})))
    with pytest.raises(RejectedPolicy):
        mgmt.certify_policy(AppSlicePolicy(mgmt.maintenance, frozenset({mgmt.maintenance})))


def test_customer_policy_cannot_grant_maintenance_overlay():
    mgmt = world_of("service_bringup").management
    c1 = parse_rid("C1/A1")
    with pytest.raises(RejectedPolicy):
        mgmt.certify_policy(AppSlicePolicy(c1, frozenset({c1, mgmt.maintenance})))


def test_customer_id_equal_to_management_id_rejected():
    mgmt = world_of("service_bringup").management
    with pytest.raises(RejectedPolicy):
        mgmt.certify_policy(AppSlicePolicy(ResourceId.app_slice("NM", "A1")))


def test_registration_is_idempotent_across_reboots():
    world = world_of("slice_install")
    Runner(world).run()
    before = world.management.registry_state()
    for _ in range(2):
        for node in world.nodes.values():
            node.boot_and_register(world.management)
        assert world.management.registry_state() == before
    assert all(e.registrations == 3 for e in world.management.registry.values())


def test_patched_firmware_fails_attestation():
    config = parse_config({"name": "bad-fw", "seed": 3, "nodes": [{"id": "n1", "firmware": "firmware-evil"}],
                           "script": ["bringup"]})
    world = World(config, 3)
    steps = Runner(world).run()
    assert steps[0].status == "error" and "AttestationFailure" in steps[0].error
    assert world.nodes["n1"].phase is not Phase.OPERATIONAL


def test_offline_management_blocks_bringup():
    world = world_of("service_bringup")
    world.management.online = False
    node = world.nodes["n1"]
    node.provision()
    with pytest.raises(ManagementUnreachable):
        node.boot_and_register(world.management)


def test_holder_route_prefers_lowest_other_node():
    from nada.core import ContentLocation, Domain, MetaData, MetaKind

    meta = MetaData("m", "0" * 64, (ContentLocation("n3", Domain.NADA_NETWORK),
                                    ContentLocation("n2", Domain.NADA_NETWORK),
                                    ContentLocation("mgmt", Domain.ISP_DOMAIN)), "t", MetaKind.APP_CONTENT)
    def dd(requester, locs):
        return DownloadDefinitionFile(b"", "m", "0" * 64, requester, parse_rid("C1/A1"), locs, "app-tracker")

    assert route_holder(dd("n2", meta.locations)) == "n3"
    assert route_holder(dd("n1", meta.locations)) == "n2"
    with pytest.raises(NoHolder):
        route_holder(dd("n3", (ContentLocation("n3", Domain.NADA_NETWORK),)))
    with pytest.raises(NoHolder):
        route_holder(dd("n1", (ContentLocation("mgmt", Domain.ISP_DOMAIN),)))


@pytest.mark.parametrize("customer,metric,subject,m,expected", [
    ("C1", "*", "C1/A1", "cpu", True),
    ("C1", "cpu", "C1/A1", "mem", False),
    ("C1", "*", "C10/A1", "cpu", False),
    ("*", "*", "C2/A1", "cpu", True),
])
def test_export_filter(customer, metric, subject, m, expected):
    assert export_matches(Measurement(subject, m, 1, "u", 0), ExportQuery(customer, metric)) is expected


def _monitoring_world(rules):
    config = load_config(bundled_scenarios()["monitoring"])
    raw_controllers = [{"id": "ctl-c1", "customer": "C1"}, {"id": "ctl-c2", "customer": "C2"}]
    import dataclasses

    from nada.simnet.scenario import ControllerConfig

    config = dataclasses.replace(config, rules=tuple(rules),
                                 controllers=tuple(ControllerConfig(c["id"], "controller", c["customer"])
                                                   for c in raw_controllers),
                                 script=config.script[:4])
    world = World(config, config.seed)
    steps = Runner(world).run()
    assert all(s.status == "ok" for s in steps)
    return world


def test_export_default_denies_with_empty_rules():
    world = _monitoring_world([])
    for ctl in world.controllers.values():
        for q in (ExportQuery("C1", "*"), ExportQuery("C2", "cpu"), ExportQuery("*", "*")):
            with pytest.raises(Deny) as err:
                ctl.request_export(world.monitoring, q)
            assert err.value.reason == "NoGrant"
    permits = [r for r in world.net.trace if r["kind"] == "decision" and r["site"] == "exporter"
               and r["effect"] == "permit"]
    assert permits == []


def test_export_grants_own_customer_only_and_fires_obligations():
    rule = Rule.from_dict({"id": "own", "subject": {"role": "controller", "customer": "C1"},
                           "resource": {"customer": "C1"}, "effect": "permit", "obligations": ["audit"]})
    world = _monitoring_world([rule])
    rows = world.controllers["ctl-c1"].request_export(world.monitoring, ExportQuery("C1", "*"))
    assert rows and all(r.subject.startswith("C1/") for r in rows)
    with pytest.raises(Deny):
        world.controllers["ctl-c2"].request_export(world.monitoring, ExportQuery("C1", "*"))
    with pytest.raises(Deny):
        world.controllers["ctl-c1"].request_export(world.monitoring, ExportQuery("C2", "*"))
    fired = [r for r in world.net.trace if r["kind"] == "obligation" and r["site"] == "exporter"]
    assert len(fired) == 1 and fired[0]["obligation"] == "audit"


def test_mib_sealed_to_server_state():
    world = _monitoring_world([])
    world.monitoring.drift()
    with pytest.raises(StateMismatch):
        world.monitoring._rows("export_measurements")
    with pytest.raises(StateMismatch):
        world.controllers["ctl-c1"].request_export(world.monitoring, ExportQuery("C1", "*"))
    world.monitoring.restore()
    assert world.monitoring._rows("export_measurements")
