"""Scenario files: load, build a world, run the script, report.

A scenario is YAML with ``nodes``, ``slices``, ``contents``, ``monitoring``,
``controllers``, ``mitigations``, ``adversary``, ``seed`` and ``script``.
Script steps run in order; each is one of ``bringup``, ``install``,
``user_request``, ``internal_monitoring``, ``collection``, ``export``,
``end_user_request`` and ``reboot``.
"""

from __future__ import annotations

import dataclasses
import inspect
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import yaml

from ..core import (
    AppSlicePolicy,
    ContentLocation,
    Domain,
    MetaKind,
    Mitigations,
    Namespace,
    RequestKind,
    ResourceId,
    UserRequest,
    parse_rid,
)
from ..crypto import Rng, SigningKey, hexdigest
from ..errors import ConfigInvalid, NadaError
from ..management import AppController, AppTracker, Management, MonitoringServer, NadaTracker, issue_certificate
from ..node import METRICS, Node, Phase
from ..policy import Rule
from ..records import ExportQuery
from ..trust_anchor import verify_log_chain
from .adversary import LOG_CHAIN, LOG_MODES, Adversary, AdversaryAction
from .network import SLICE, Envelope, Network

log = logging.getLogger("nada.simnet")

MAINTENANCE = "NM"
STEP_KINDS = ("bringup", "install", "user_request", "internal_monitoring", "collection", "export",
              "end_user_request", "reboot")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeConfig:
    id: str
    firmware: str = "firmware-v1"
    nm_image: str = "node-management-v1"
    log_sink: str = "tds"
    canary: str | None = None


@dataclass(frozen=True)
class SliceConfig:
    rid: ResourceId
    provider: str
    nodes: tuple[str, ...]
    overlay_peers: tuple[ResourceId, ...]
    slice_traffic: tuple[ResourceId, ...] = ()
    mib_read: tuple[ResourceId, ...] = ()
    image_size: int = 2048


@dataclass(frozen=True)
class ContentConfig:
    id: str
    slice: ResourceId
    size: int
    holders: tuple[str, ...]


@dataclass(frozen=True)
class ControllerConfig:
    id: str
    role: str = "controller"
    customer: str | None = None


@dataclass(frozen=True)
class Step:
    kind: str
    args: dict[str, Any] = field(default_factory=dict)

    def label(self) -> str:
        return self.kind if not self.args else f"{self.kind}({', '.join(f'{k}={v}' for k, v in sorted(self.args.items()))})"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    nodes: tuple[NodeConfig, ...]
    slices: tuple[SliceConfig, ...]
    contents: tuple[ContentConfig, ...]
    rules: tuple[Rule, ...]
    controllers: tuple[ControllerConfig, ...]
    script: tuple[Step, ...]
    disabled: frozenset[str] = frozenset()
    adversary: tuple[AdversaryAction, ...] = ()
    latency: int = 1
    collection_interval: int = 10

    def with_adversary(self, actions: list[AdversaryAction] | tuple[AdversaryAction, ...]) -> "ScenarioConfig":
        return dataclasses.replace(self, adversary=tuple(actions))

    def with_disabled(self, disabled: set[str] | frozenset[str]) -> "ScenarioConfig":
        return dataclasses.replace(self, disabled=frozenset(disabled))


def _rid(text: Any, where: str) -> ResourceId:
    if not isinstance(text, str) or not text or text.startswith("/") or text.endswith("/"):
        raise ConfigInvalid(f"{where}: bad resource id {text!r}")
    return parse_rid(text)


def _list(d: dict, key: str, where: str) -> list:
    value = d.get(key) or []
    if not isinstance(value, list):
        raise ConfigInvalid(f"{where}: {key} must be a list")
    return value


def parse_config(raw: Any, *, default_name: str = "scenario") -> ScenarioConfig:
    """Validate a scenario mapping. Every problem raises ConfigInvalid."""
    if not isinstance(raw, dict):
        raise ConfigInvalid("scenario must be a mapping")
    try:
        return _parse(raw, default_name)
    except ConfigInvalid:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigInvalid(f"malformed scenario: {type(err).__name__}: {err}") from None


def _parse(raw: dict, default_name: str) -> ScenarioConfig:
    nodes = []
    for i, n in enumerate(_list(raw, "nodes", "scenario")):
        n = {"id": n} if isinstance(n, str) else dict(n)
        nodes.append(NodeConfig(str(n["id"]), str(n.get("firmware", "firmware-v1")),
                                str(n.get("nm_image", "node-management-v1")), str(n.get("log_sink", "tds")),
                                n.get("canary")))
    if not nodes:
        raise ConfigInvalid("scenario needs at least one node")
    node_ids = [n.id for n in nodes]
    if len(set(node_ids)) != len(node_ids):
        raise ConfigInvalid("duplicate node id")
    for n in nodes:
        if n.log_sink not in ("tds", "monitoring", "both"):
            raise ConfigInvalid(f"node {n.id}: log_sink must be tds, monitoring or both")

    namespace = Namespace()
    namespace.claim(ResourceId.management(MAINTENANCE))
    slices = []
    for i, s in enumerate(_list(raw, "slices", "scenario")):
        where = f"slices[{i}]"
        rid = _rid(s.get("rid"), where)
        if rid.is_management:
            raise ConfigInvalid(f"{where}: slice id must be customer/app")
        try:
            namespace.claim(rid)
        except NadaError as err:
            raise ConfigInvalid(f"{where}: {err}") from None
        hosts = tuple(str(x) for x in _list(s, "nodes", where))
        unknown = sorted(set(hosts) - set(node_ids))
        if unknown:
            raise ConfigInvalid(f"{where}: unknown nodes {unknown}")
        pol = s.get("policy") or {}
        peers = tuple(_rid(x, where) for x in pol.get("overlay_peers", [str(rid)]))
        slices.append(SliceConfig(rid, str(s.get("provider", rid.first)), hosts, peers,
                                  tuple(_rid(x, where) for x in pol.get("slice_traffic", [])),
                                  tuple(_rid(x, where) for x in pol.get("mib_read", [])),
                                  int(s.get("image_size", 2048))))
    rids = [s.rid for s in slices]
    if len(set(rids)) != len(rids):
        raise ConfigInvalid("duplicate slice id")

    contents = []
    for i, c in enumerate(_list(raw, "contents", "scenario")):
        where = f"contents[{i}]"
        rid = _rid(c.get("slice"), where)
        if rid not in rids:
            raise ConfigInvalid(f"{where}: unknown slice {rid}")
        hosting = next(s.nodes for s in slices if s.rid == rid)
        holders = tuple(str(x) for x in _list(c, "holders", where))
        if any(h not in hosting for h in holders):
            raise ConfigInvalid(f"{where}: holders must host {rid}")
        size = int(c.get("size", 3000))
        if size <= 0:
            raise ConfigInvalid(f"{where}: size must be positive")
        contents.append(ContentConfig(str(c["id"]), rid, size, holders))

    mon = raw.get("monitoring") or {}
    rules = tuple(Rule.from_dict(r) for r in (mon.get("rules") or []))
    controllers = tuple(ControllerConfig(str(c["id"]), str(c.get("role", "controller")), c.get("customer"))
                        for c in _list(raw, "controllers", "scenario"))

    script = []
    for i, entry in enumerate(_list(raw, "script", "scenario")):
        if isinstance(entry, str):
            kind, args = entry, {}
        elif isinstance(entry, dict) and len(entry) == 1:
            kind, args = next(iter(entry.items()))
            args = dict(args or {})
        else:
            raise ConfigInvalid(f"script[{i}]: expected a step name or a one-key mapping")
        if kind not in STEP_KINDS:
            raise ConfigInvalid(f"script[{i}]: unknown step {kind!r}")
        script.append(Step(kind, args))

    mitig = raw.get("mitigations") or {}
    disabled = frozenset(str(m) for m in (mitig.get("disabled") or []))
    actions = []
    for i, a in enumerate(_list(raw, "adversary", "scenario")):
        try:
            action = AdversaryAction.from_dict(a)
        except (KeyError, ValueError) as err:
            raise ConfigInvalid(f"adversary[{i}]: {err}") from None
        if action.mtype == LOG_CHAIN and action.mode not in LOG_MODES:
            raise ConfigInvalid(f"adversary[{i}]: log chain attacks need mode in {LOG_MODES}")
        actions.append(action)
    mgmt = raw.get("management") or {}
    return ScenarioConfig(str(raw.get("name", default_name)), int(raw.get("seed", 0)), tuple(nodes), tuple(slices),
                          tuple(contents), rules, controllers, tuple(script), disabled, tuple(actions),
                          int(raw.get("latency", 1)), int(mgmt.get("collection_interval", 10)))


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigInvalid(f"cannot read {path}: {err.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigInvalid(f"{path}: not valid YAML: {err}") from None
    return parse_config(raw, default_name=path.stem)


def bundled_scenarios() -> dict[str, Path]:
    root = Path(__file__).resolve().parent.parent / "data" / "scenarios"
    return {p.stem: p for p in sorted(root.glob("*.yaml"))}


# ---------------------------------------------------------------------------
# World
# ---------------------------------------------------------------------------


class World:
    """Every entity of one run, wired to one network."""

    def __init__(self, config: ScenarioConfig, seed: int):
        self.config = config
        self.seed = seed
        self.rng = Rng(seed)
        self.net = Network(latency=config.latency)
        self.mitigations = Mitigations(config.disabled)
        self.maintenance = ResourceId.management(MAINTENANCE)
        self.namespace = Namespace()
        self.namespace.claim(self.maintenance)
        self.isp_key = SigningKey.generate(self.rng.child("isp"))
        self.management = Management("mgmt", rng=self.rng.child("mgmt"), net=self.net, isp_key=self.isp_key,
                                     maintenance=self.maintenance, mitigations=self.mitigations,
                                     namespace=self.namespace)
        self.nodes: dict[str, Node] = {}
        for nc in config.nodes:
            node = Node(nc.id, rng=self.rng.child(f"node:{nc.id}"), net=self.net, isp_public=self.isp_key.public,
                        maintenance=self.maintenance, issue_certificate=self._node_cert,
                        firmware=nc.firmware.encode(), nm_image=nc.nm_image.encode(),
                        mitigations=self.mitigations, log_sink=nc.log_sink, canary=nc.canary)
            # Reference measurements always come from the known-good images.
            self.management.enroll(node.cert, b"firmware-v1", b"node-management-v1")
            self.nodes[nc.id] = node
        for node in self.nodes.values():
            for other in self.nodes.values():
                if other is not node:
                    node.agent.directory[other.id] = other.agent
            node.agent.directory[self.management.entity] = self.management
        self.app_tracker = AppTracker("app-tracker", rng=self.rng.child("app-tracker"), net=self.net,
                                      isp_key=self.isp_key, node_cert=lambda n: self.management.reference(n)[0],
                                      mitigations=self.mitigations)
        self.nada_tracker = NadaTracker("nada-tracker", net=self.net, tracker_cert=self._tracker_cert,
                                        isp_public=self.isp_key.public, mitigations=self.mitigations)
        self.management.trackers.append(self.app_tracker)
        self.monitoring = MonitoringServer("monitoring", rng=self.rng.child("monitoring"), net=self.net,
                                           isp_key=self.isp_key, maintenance=self.maintenance,
                                           reference=self.management.reference, mitigations=self.mitigations)
        self.monitoring.set_rules(config.rules)
        self.controllers = {c.id: AppController(c.id, rng=self.rng.child(f"ctl:{c.id}"), net=self.net,
                                                isp_key=self.isp_key, maintenance=self.maintenance, role=c.role,
                                                customer=c.customer, mitigations=self.mitigations)
                            for c in config.controllers}
        self.contents: dict[str, bytes] = {}
        self._publish()
        self.net.rival_reach = self.rival_reach
        self.net.incident_sink = self.incident
        self.adversary: Adversary | None = None
        if config.adversary:
            customer = config.slices[0].rid if config.slices else None
            self.adversary = Adversary(list(config.adversary), self.rng.child("adversary"),
                                       incident_logging=self.mitigations.on("M4.1"),
                                       customer_overlay=customer, maintenance=self.maintenance)
            self.net.adversary = self.adversary

    def _node_cert(self, node_id: str, keys):
        return issue_certificate(self.isp_key, node_id, "node", tuple(keys))

    def _tracker_cert(self, entity: str):
        if entity != self.app_tracker.entity:
            from ..errors import UnknownNode

            raise UnknownNode(f"{entity} is not a known tracker")
        return self.app_tracker.cert

    def _publish(self) -> None:
        for sc in self.config.slices:
            policy = AppSlicePolicy(sc.rid, frozenset(sc.overlay_peers), frozenset(sc.slice_traffic),
                                    frozenset(sc.mib_read))
            certified = self.management.certify_policy(policy)
            image = self.rng.child(f"image:{sc.rid}").bytes(sc.image_size)
            self.management.publish_slice(sc.rid, sc.provider, image, certified)
            for n in sc.nodes:
                self.management.assign(n, sc.rid)
        for cc in self.config.contents:
            data = self.rng.child(f"content:{cc.id}").bytes(cc.size)
            self.contents[cc.id] = data
            locations = [ContentLocation(h, Domain.NADA_NETWORK) for h in sorted(cc.holders)]
            meta = self.management.publish_content(cc.id, data, locations, MetaKind.APP_CONTENT)
            hosting = next(s.nodes for s in self.config.slices if s.rid == cc.slice)
            for n in hosting:
                self.nodes[n].app_catalog.setdefault(cc.slice, {})[cc.id] = (meta, cc.size)

    # -- adversary hooks -----------------------------------------------------------

    def _node_of(self, entity: str) -> Node | None:
        return self.nodes.get(self.net.hosts.get(entity, ""))

    def rival_reach(self, env: Envelope) -> tuple[bool, str | None]:
        node = self._node_of(env.src)
        if node is None:
            return False, None
        endpoint = None
        for entity in (env.src, env.dst):
            if self.net.levels.get(entity) == SLICE:
                endpoint = next((r for r in node.slices if node.slice_entity(r) == entity), None)
        if endpoint is None:
            return False, None
        for rival in sorted(node.slices, key=ResourceId.sort_key):
            if rival != endpoint and node.firewall_permits(rival, endpoint):
                return True, str(rival)
        return False, None

    def incident(self, entity: str, detail: str) -> None:
        node = self._node_of(entity)
        if node is not None:
            node.report_incident(detail)
        elif entity == self.monitoring.entity:
            self.monitoring.report_incident(detail)
        else:
            self.management._log("incident", detail.encode())
            self.net.record("incident", entity=entity, detail=detail, signed=True)

    # -- secrets ---------------------------------------------------------------------

    def secrets(self) -> list[bytes]:
        out = self.management.secrets() + self.monitoring.secrets() + self.app_tracker.secrets()
        for c in self.controllers.values():
            out += c.secrets()
        for n in sorted(self.nodes):
            out += self.nodes[n].secrets()
        return [s for s in out if s]

    def sentinels(self) -> list[bytes]:
        return [nc.canary.encode() for nc in self.config.nodes if nc.canary]


# ---------------------------------------------------------------------------
# Script execution
# ---------------------------------------------------------------------------


@dataclass
class StepResult:
    index: int
    kind: str
    label: str
    status: str = "ok"      # ok | error | skipped
    error: str | None = None
    mitigation: str | None = None
    start_seq: int = 0
    end_seq: int = 0
    units: int = 0


class Runner:
    def __init__(self, world: World):
        self.world = world
        self.net = world.net
        self.results: list[StepResult] = []

    def _unit(self, fn: Callable[[], Any]) -> None:
        """One atomic protocol run; pending adversary verdicts resolve at its end."""
        error: NadaError | None = None
        try:
            fn()
        except NadaError as err:
            error = err
            raise
        finally:
            if self.world.adversary is not None:
                self.world.adversary.finish_step(error)

    def run(self) -> list[StepResult]:
        halted = False
        for i, step in enumerate(self.world.config.script):
            res = StepResult(i, step.kind, step.label())
            self.results.append(res)
            if halted:
                res.status = "skipped"
                continue
            self.net.step_label = None
            res.start_seq = self.net.record("script", index=i, step=step.kind, label=res.label)["seq"]
            fn = getattr(self, f"step_{step.kind}")
            try:
                inspect.signature(fn).bind(**step.args)
            except TypeError as err:
                raise ConfigInvalid(f"script[{i}] {step.kind}: {err}") from None
            try:
                res.units = fn(**step.args)
            except NadaError as err:
                res.status, res.error, res.mitigation = "error", f"{type(err).__name__}: {err}", err.mitigation
                self.net.record("step_error", index=i, error=type(err).__name__, mitigation=err.mitigation)
                log.info("step %s aborted: %s", res.label, res.error)
                halted = True
            res.end_seq = self.net.record("script_end", index=i, status=res.status)["seq"]
            self.net.step_label = None
            self.net.tick()
        return self.results

    # -- steps --------------------------------------------------------------------------

    def _node(self, node_id: str) -> Node:
        if node_id not in self.world.nodes:
            raise ConfigInvalid(f"unknown node {node_id!r}")
        return self.world.nodes[node_id]

    def step_bringup(self) -> int:
        order = sorted(self.world.nodes)
        self.world.rng.child("bringup-order").shuffle(order)
        for node_id in order:
            node = self.world.nodes[node_id]
            if node.phase is Phase.POWERED_OFF and not node.tds.has(node.maintenance, "store_key"):
                node.provision()
            self._unit(lambda: node.boot_and_register(self.world.management))
        return len(order)

    def step_install(self) -> int:
        w = self.world
        n = 0
        for sc in w.config.slices:
            for node_id in sorted(sc.nodes):
                node = w.nodes[node_id]
                if sc.rid in node.slices:
                    continue

                def install(node=node, rid=sc.rid) -> None:
                    self.net.mark("slice_install.1")
                    cid = w.management.send_metadata(node, rid)
                    node.install_slice(cid)

                self._unit(install)
                n += 1
        for cc in w.config.contents:
            for holder in cc.holders:
                node = w.nodes[holder]
                if cc.id not in node.stores[cc.slice].names():
                    node.seed_content(cc.slice, cc.id, w.contents[cc.id])
        return n

    def step_reboot(self, node: str) -> int:
        target = self._node(node)
        self._unit(lambda: target.boot_and_register(self.world.management))
        return 1

    def step_user_request(self, node: str, slice: str, content: str, play_intervals: int = 1) -> int:
        target, rid = self._node(node), parse_rid(slice)
        seq = [UserRequest(RequestKind.CONTENT, content, 1), UserRequest(RequestKind.PLAY, content, 2),
               UserRequest(RequestKind.STOP, content, 3)]
        for req in seq:
            self._unit(lambda req=req: target.handle_user_request(rid, req, play_intervals=play_intervals))
        return len(seq)

    def step_internal_monitoring(self, node: str, requester: str, subject: str,
                                 metric: str = METRICS[0]) -> int:
        target = self._node(node)
        self._unit(lambda: target.internal_monitoring_request(parse_rid(requester), subject, metric))
        return 1

    def step_collection(self, nodes: list[str] | None = None) -> int:
        ids = sorted(nodes) if nodes else sorted(self.world.nodes)
        for node_id in ids:
            node = self._node(node_id)
            self._unit(lambda node=node: self.world.monitoring.collect_measurements(node))
        return len(ids)

    def step_export(self, controller: str, customer: str, metric: str = "*") -> int:
        ctl = self.world.controllers.get(controller)
        if ctl is None:
            raise ConfigInvalid(f"unknown controller {controller!r}")
        self._unit(lambda: ctl.request_export(self.world.monitoring, ExportQuery(customer, metric)))
        return 1

    def step_end_user_request(self, node: str, slice: str, content: str) -> int:
        target, rid = self._node(node), parse_rid(slice)
        w = self.world
        self._unit(lambda: target.end_user_request(rid, content, w.app_tracker, w.nada_tracker, w.nodes))
        return 1


# ---------------------------------------------------------------------------
# Post-hoc log tampering
# ---------------------------------------------------------------------------


def tamper_chain(entries: list, mode: str, index: int) -> list:
    out = list(entries)
    if mode == "mutate":
        e = out[index]
        payload = e.payload[:-1] + bytes([e.payload[-1] ^ 0x01]) if e.payload else b"\x01"
        out[index] = dataclasses.replace(e, payload=payload)
    elif mode == "reorder":
        out[index], out[index + 1] = out[index + 1], out[index]
    elif mode == "duplicate":
        out.insert(index + 1, out[index])
    else:
        raise ValueError(mode)
    return out


def _resolve_log_attacks(world: World) -> None:
    adv = world.adversary
    if adv is None:
        return
    for i, action in enumerate(adv.actions):
        if action.mtype != LOG_CHAIN:
            continue
        node = world.nodes[action.src] if action.src else world.nodes[sorted(world.nodes)[0]]
        entries = list(node.anchor.log)
        if action.occurrence + 1 >= len(entries):
            continue
        altered = tamper_chain(entries, action.mode or "mutate", action.occurrence)
        verdict = verify_log_chain(altered, node.anchor.log_public)
        world.net.record("log_attack", node=node.id, mode=action.mode, index=action.occurrence,
                         detected=not verdict.accepted, at=verdict.index)
        adv.resolve_log_attack(i, not verdict.accepted, verdict.index)


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    world: World
    steps: list[StepResult]
    invariants: dict[str, bool]
    report: dict[str, Any]

    @property
    def trace(self) -> list[dict[str, Any]]:
        return self.world.net.trace

    @property
    def passed(self) -> bool:
        return exit_code(self.report) == 0


def exit_code(report: dict[str, Any]) -> int:
    """0 iff every invariant holds and no attack succeeded."""
    if not all(report["invariants"].values()):
        return 1
    if any(a["verdict"] == "Succeeded" for a in report["attacks"]):
        return 1
    return 0


def run_scenario(config: ScenarioConfig, seed: int | None = None) -> RunResult:
    from .invariants import check_all

    seed = config.seed if seed is None else seed
    world = World(config, seed)
    runner = Runner(world)
    steps = runner.run()
    _resolve_log_attacks(world)
    if world.adversary is not None:
        world.adversary.finish_run(world.secrets())
    invariants = check_all(world, steps)
    report = build_report(world, steps, invariants)
    return RunResult(world, steps, invariants, report)


def inject_adversary(config: ScenarioConfig, actions: list[AdversaryAction], seed: int | None = None) -> RunResult:
    return run_scenario(config.with_adversary(actions), seed)


def build_report(world: World, steps: list[StepResult], invariants: dict[str, bool]) -> dict[str, Any]:
    net = world.net
    attacks = [o.to_dict() for o in world.adversary.outcomes] if world.adversary else []
    return {
        "scenario": world.config.name,
        "seed": world.seed,
        "mitigations_disabled": sorted(world.config.disabled),
        "steps": [dataclasses.asdict(s) for s in steps],
        "phases": {n: world.nodes[n].phase.value for n in sorted(world.nodes)},
        "invariants": dict(sorted(invariants.items())),
        "attacks": attacks,
        "trace_digest": net.digest(),
        "trace_events": len(net.trace),
        "registry_digest": hexdigest(repr(world.management.registry_state()).encode()),
        "mib_digest": world.monitoring.mib_digest(),
        "notes": ["denial of service is handled by detection and incident logging only"],
    }
