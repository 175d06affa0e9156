"""Post-run invariant checks over a finished world and its trace.

Each check returns True when the property holds. ``check_all`` evaluates the
full declared set, so a report's verdicts are exhaustive.
"""

from __future__ import annotations

from collections import Counter
from typing import TYPE_CHECKING, Callable

from ..core import ResourceId, parse_rid
from ..errors import NadaError
from ..management import MIB_OPERATIONS
from ..node import Phase, split_payload
from ..trust_anchor import verify_log_chain

if TYPE_CHECKING:
    from .scenario import StepResult, World

# Labels each script step must mark, in order, per protocol run.
BRINGUP = [f"bringup.{i}" for i in range(1, 6)]
SLICE_INSTALL = [f"slice_install.{i}" for i in range(1, 5)]
USER_REQUEST = [f"user_request.{i}" for i in range(1, 13)]
INTERNAL_MONITORING = [f"internal_monitoring.{i}" for i in range(1, 10)]
COLLECTION = [f"collection.{n}" for n in ("I", "II", "III", "IV", "V")]
EXPORT = [f"export.{i}" for i in range(1, 6)]
END_USER_REQUEST = ([f"end_user_request.{i}" for i in range(1, 8)]
                    + [f"content_distribution.{i}" for i in range(7, 13)])


def expected_labels(world: "World", step: "StepResult") -> list[str]:
    kind = step.kind
    if kind == "bringup":
        return BRINGUP * len(world.nodes)
    if kind == "reboot":
        return BRINGUP
    if kind == "install":
        return SLICE_INSTALL * step.units
    if kind == "user_request":
        return USER_REQUEST
    if kind == "internal_monitoring":
        return INTERNAL_MONITORING
    if kind == "collection":
        return COLLECTION * step.units
    if kind == "export":
        return EXPORT
    if kind == "end_user_request":
        return END_USER_REQUEST
    return []


def step_labels(trace: list[dict], start: int, end: int) -> list[str]:
    return [r["label"] for r in trace if r["kind"] == "step" and start < r["seq"] < end]


# ---------------------------------------------------------------------------


def namespace_disjoint(world: "World", steps) -> bool:
    ns = world.namespace
    customers = {p.first for p in world.management.policies if not p.is_management}
    return not (ns.management & customers)


def maintenance_overlay_unique(world: "World", steps) -> bool:
    owners = {p.owner for p in world.management.policies.values() if p.owner.is_management}
    for node in world.nodes.values():
        try:
            owners |= {p.owner for p in node.policies() if p.owner.is_management}
        except NadaError:
            continue
    return owners <= {world.maintenance}


def overlay_confinement(world: "World", steps) -> bool:
    """Every node-to-node session runs on an overlay whose policy admits its requester."""
    policies = world.management.policies
    for r in world.net.trace:
        if r["kind"] != "session" or r["via"] != "ticket":
            continue
        overlay, requester = parse_rid(r["overlay"]), r["requester"]
        if overlay == world.maintenance and requester == str(world.maintenance):
            continue
        policy = policies.get(overlay)
        if policy is None or requester is None or parse_rid(requester) not in policy.allowed_overlay_peers:
            return False
    return True


def eavesdropper_exclusion(world: "World", steps) -> bool:
    """No key and no sentinel plaintext is readable in inter-host traffic."""
    needles = world.secrets() + world.sentinels()
    return not any(n in blob for blob in world.net.knowledge for n in needles)


def key_confinement(world: "World", steps) -> bool:
    """Storage keys never appear on any link, intra-node ones included."""
    keys = []
    for node in world.nodes.values():
        for (rid, slot), blob in node.tds.entries.items():
            if slot == "store_key":
                try:
                    keys.append(node.anchor.unseal(blob))
                except NadaError:
                    continue
    return not any(k in blob for blob in world.net.wire for k in keys)


def sealed_persistence(world: "World", steps) -> bool:
    """Operational nodes can still open every sealed item they hold."""
    for node in world.nodes.values():
        if node.phase is not Phase.OPERATIONAL:
            continue
        for key in sorted(node.tds.entries, key=lambda k: (k[0].sort_key(), k[1])):
            try:
                node.anchor.unseal(node.tds.get(*key))
            except NadaError:
                return False
    return True


def accounting_completeness(world: "World", steps) -> bool:
    """Each user command has exactly one signed log entry, also delivered to its slice."""
    for node in world.nodes.values():
        entries = [e for e in node.anchor.log if split_payload(e)[0] == "user_request"]
        if len(entries) != node.user_commands:
            return False
        delivered = {e.signature for rt in node.slices.values() for e in rt.app.received_logs}
        if any(e.signature not in delivered for e in entries):
            return False
    return True


def log_chains_verify(world: "World", steps) -> bool:
    anchors = [n.anchor for n in world.nodes.values()] + [world.management.anchor, world.monitoring.anchor]
    return all(verify_log_chain(a.log, a.log_public).accepted for a in anchors)


def store_isolation(world: "World", steps) -> bool:
    """Store reads and writes happen only by the owner, the node management or an overlay peer."""
    maint = str(world.maintenance)
    policies = world.management.policies
    for r in world.net.trace:
        if r["kind"] != "access" or r["store"].startswith("mib:"):
            continue
        store, actor = r["store"], r["actor"]
        if actor in (store, maint):
            continue
        if r["grant"] == "overlay":
            policy = policies.get(parse_rid(store))
            if policy is not None and parse_rid(actor) in policy.allowed_overlay_peers:
                continue
        return False
    return True


def pep_non_bypass(world: "World", steps) -> bool:
    """MIB reads only through the two server operations or after a node PDP permit."""
    permitted: set[tuple[str, str]] = set()
    for r in world.net.trace:
        if r["kind"] == "mib_access" and r["op"] not in MIB_OPERATIONS:
            return False
        if r["kind"] == "decision" and r["site"].startswith("node:") and r["effect"] == "permit":
            permitted.add((r["site"][5:], r["requester"]))
        if r["kind"] == "access" and r["store"].startswith("mib:"):
            if (r["node"], r["actor"]) not in permitted:
                return False
    return True


def default_deny(world: "World", steps) -> bool:
    """A permit always names the rule that granted it; no rules means no permit."""
    for r in world.net.trace:
        if r["kind"] != "decision" or r["effect"] != "permit":
            continue
        if r["rule"] is None:
            return False
        if r["site"] == "exporter" and not world.config.rules:
            return False
    return True


def obligation_completeness(world: "World", steps) -> bool:
    expected: Counter = Counter()
    fired: Counter = Counter()
    for r in world.net.trace:
        if r["kind"] == "decision" and r["effect"] == "permit":
            for ob in r["obligations"]:
                expected[(r["site"], ob)] += 1
        elif r["kind"] == "obligation":
            fired[(r["site"], r["obligation"])] += 1
    return expected == fired


def step_order(world: "World", steps) -> bool:
    """Each completed step marked exactly its protocol's labels, in order."""
    for s in steps:
        if s.status != "ok":
            continue
        if step_labels(world.net.trace, s.start_seq, s.end_seq) != expected_labels(world, s):
            return False
    return True


def script_completed(world: "World", steps) -> bool:
    """Every step ran, unless a security check halted the run against an attack."""
    for s in steps:
        if s.status == "ok" or s.status == "skipped":
            continue
        if world.adversary is None or not any(o.verdict != "NotTriggered" for o in world.adversary.outcomes):
            return False
    return all(s.status != "skipped" for s in steps) or any(s.status == "error" for s in steps)


INVARIANTS: dict[str, Callable[["World", list], bool]] = {
    "namespace_disjoint": namespace_disjoint,
    "maintenance_overlay_unique": maintenance_overlay_unique,
    "overlay_confinement": overlay_confinement,
    "eavesdropper_exclusion": eavesdropper_exclusion,
    "key_confinement": key_confinement,
    "sealed_persistence": sealed_persistence,
    "accounting_completeness": accounting_completeness,
    "log_chains_verify": log_chains_verify,
    "store_isolation": store_isolation,
    "pep_non_bypass": pep_non_bypass,
    "default_deny": default_deny,
    "obligation_completeness": obligation_completeness,
    "step_order": step_order,
    "script_completed": script_completed,
}


def check_all(world: "World", steps: list["StepResult"]) -> dict[str, bool]:
    return {name: bool(check(world, steps)) for name, check in INVARIANTS.items()}
