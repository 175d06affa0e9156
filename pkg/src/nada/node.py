"""The NaDa node: node management, slice lifecycle, stores, firewall, PEP/PDP.

Entities a node registers on the network (all on one host)::

    <id>          node management + overlay agent     tcb
    <id>:ui       user interface                      tcb
    <id>:comm     COMM/API                            tcb
    <id>:monitor  node monitoring (local PDP)         tcb
    <id>:user     local end user                      user
    <id>:<rid>    one per installed slice             slice
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Callable

from .core import (
    ALL_ON,
    Action,
    AppSliceConfiguration,
    AppSlicePolicy,
    Certificate,
    ConfigureCommand,
    Domain,
    LogEntry,
    Measurement,
    MetaData,
    MetaKind,
    Mitigations,
    RequestKind,
    ResourceId,
    UserRequest,
    UserResponse,
    canonical_decode,
    canonical_encode,
    fingerprint,
    signing_bytes,
)
from .crypto import NONCE_SIZE, InvalidTag, Rng, aead_decrypt, aead_encrypt, digest, verify_signature
from .errors import (
    AuthenticationFailure,
    BadSignature,
    Deny,
    FingerprintMismatch,
    IntegrityFailure,
    ManagementUnreachable,
    NadaError,
    NoHolder,
    OverlayViolation,
    ReplayDetected,
    SessionError,
    SliceInactive,
    StoreKeyExists,
    UncertifiedPolicy,
    UnknownContent,
    UnknownSlice,
)
from .overlay import (
    CHUNK_SIZE,
    OverlayAgent,
    Session,
    chunk_count,
    connect,
    nada_authenticate,
    start_p2p_download,
    verify_metadata,
)
from .policy import Decision, Request, Rule, pdp_evaluate
from .records import (
    AuthzDecision,
    AuthzRequest,
    ContentOffer,
    DownloadDefinitionFile,
    Installed,
    LogBatch,
    MeasurementRows,
    Registration,
    RegistrationAck,
    SignedRequest,
    SliceBundle,
    SliceLogRequest,
)
from .simnet.network import SLICE, TCB, USER, Envelope, Network
from .trust_anchor import PCR_FIRMWARE, PCR_NODE_MANAGEMENT, PCR_SLICES, TrustAnchor, TrustedDataStore, measure_and_extend

METRICS = ("link_utilization", "storage_utilization")
AUDIT = "audit"


class Phase(str, enum.Enum):
    POWERED_OFF = "PoweredOff"
    BOOTED = "Booted"
    REGISTERED = "Registered"
    OPERATIONAL = "Operational"


class SliceStatus(str, enum.Enum):
    INSTALLED = "Installed"
    ACTIVE = "Active"
    DEACTIVATED = "Deactivated"


TRANSITIONS = {
    Action.ACTIVATE: SliceStatus.ACTIVE,
    Action.DEACTIVATE: SliceStatus.DEACTIVATED,
    Action.RESTART: SliceStatus.ACTIVE,
}


def next_status(status: SliceStatus, action: Action) -> SliceStatus:
    """Slice status after a configure action. Every action is legal from every status."""
    return TRANSITIONS[action]


def policy_certified(policy: AppSlicePolicy, isp_public: bytes) -> bool:
    return verify_signature(isp_public, signing_bytes(policy), policy.certified_by_isp)


def log_payload(kind: str, body: bytes = b"") -> bytes:
    return kind.encode() + b"|" + body


def split_payload(entry: LogEntry) -> tuple[str, bytes]:
    kind, _, body = entry.payload.partition(b"|")
    return kind.decode("utf-8", "replace"), body


def measurement_of(entry: LogEntry) -> Measurement | None:
    kind, body = split_payload(entry)
    return canonical_decode(Measurement, body) if kind == "measurement" else None


# ---------------------------------------------------------------------------
# Stores
# ---------------------------------------------------------------------------


@dataclass
class NodeStore:
    """Per-slice encrypted block map. Readable only with the owner's storage key."""

    owner: ResourceId
    blocks: dict[str, tuple[bytes, bytes]] = field(default_factory=dict)

    def _aad(self, name: str) -> bytes:
        return str(self.owner).encode() + b"|" + name.encode()

    def write(self, key: bytes, name: str, data: bytes, rng: Rng) -> None:
        nonce = rng.bytes(NONCE_SIZE)
        self.blocks[name] = (nonce, aead_encrypt(key, nonce, data, self._aad(name)))

    def read(self, key: bytes, name: str) -> bytes:
        if name not in self.blocks:
            raise UnknownContent(f"{name} not in store of {self.owner}")
        nonce, ct = self.blocks[name]
        try:
            return aead_decrypt(key, nonce, ct, self._aad(name))
        except InvalidTag:
            raise IntegrityFailure(f"block {name} of {self.owner} failed its integrity check",
                                   mitigation="M7.2") from None

    def names(self) -> list[str]:
        return sorted(self.blocks)

    def dump(self) -> bytes:
        return b"".join(canonical_encode((name, nonce, ct)) for name, (nonce, ct) in sorted(self.blocks.items()))


# ---------------------------------------------------------------------------
# Slices
# ---------------------------------------------------------------------------


class SliceApp:
    """Customer code inside a slice. Only the interface the node requires is modeled."""

    def __init__(self, node: "Node", rid: ResourceId):
        self.node = node
        self.rid = rid
        self.entity = f"{node.id}:{rid}"
        self.received_logs: list[LogEntry] = []
        self.log_responses: list[tuple[Measurement, ...]] = []
        self.playing: str | None = None

    def _check_log(self, env: Envelope) -> LogEntry:
        entry = canonical_decode(LogEntry, env.body)
        if not verify_signature(self.node.anchor.log_public, signing_bytes(entry), entry.signature):
            raise BadSignature("log entry not signed by the node", mitigation="M4.0")
        if any(e.signature == entry.signature for e in self.received_logs):
            raise ReplayDetected("log entry delivered twice", mitigation="M4.0")
        self.received_logs.append(entry)
        return entry

    on_app_log = _check_log
    on_nada_log = _check_log

    def on_user_request(self, env: Envelope) -> UserRequest:
        req = canonical_decode(UserRequest, env.body)
        if req.kind is not RequestKind.STOP and req.content_id not in self.node.app_catalog.get(self.rid, {}):
            raise UnknownContent(f"{self.rid} offers no content {req.content_id!r}")
        return req

    def fetch(self, content_id: str) -> bytes:
        meta, size = self.node.app_catalog[self.rid][content_id]
        names = self.node.stores[self.rid].names()
        if content_id in names:
            return self.node.store_read(self.rid, content_id, actor=self.rid, grant="own")
        data = start_p2p_download(self.node.agent, meta, self.rid, self.rid, size)
        self.node.store_write(self.rid, content_id, data, actor=self.rid)
        return data

    def on_log_response(self, env: Envelope) -> tuple[Measurement, ...]:
        rows = canonical_decode(MeasurementRows, env.body).rows
        self.log_responses.append(rows)
        return rows

    def on_content_request(self, env: Envelope) -> str:
        return env.body.decode()


@dataclass
class SliceRuntime:
    config: AppSliceConfiguration
    status: SliceStatus
    provider: str
    app: SliceApp


# ---------------------------------------------------------------------------
# Node
# ---------------------------------------------------------------------------


class Node:
    def __init__(self, node_id: str, *, rng: Rng, net: Network, isp_public: bytes, maintenance: ResourceId,
                 issue_certificate: Callable[[str, tuple[tuple[str, bytes], ...]], Certificate],
                 firmware: bytes, nm_image: bytes, mitigations: Mitigations = ALL_ON,
                 log_sink: str = "tds", play_interval: int = 1, canary: str | None = None):
        if log_sink not in ("tds", "monitoring", "both"):
            raise ValueError(f"log_sink must be tds, monitoring or both, not {log_sink!r}")
        self.id = node_id
        self.rng = rng
        self.net = net
        self.isp_public = isp_public
        self.maintenance = maintenance
        self.mitigations = mitigations
        self.firmware = firmware
        self.nm_image = nm_image
        self.log_sink = log_sink
        self.play_interval = play_interval
        self.canary = canary
        self.anchor = TrustAnchor(node_id, rng.child("anchor"))
        self.cert = issue_certificate(node_id, self.anchor.public_keys())
        self.tds = TrustedDataStore()
        self.phase = Phase.POWERED_OFF
        self.adopted_clock: int | None = None
        self.slices: dict[ResourceId, SliceRuntime] = {}
        self.stores: dict[ResourceId, NodeStore] = {maintenance: NodeStore(maintenance)}
        self.images: dict[ResourceId, bytes] = {}
        self.install_order: list[ResourceId] = []
        self.image_content: dict[str, ResourceId] = {}
        self.app_catalog: dict[ResourceId, dict[str, tuple[MetaData, int]]] = {}
        self.pending_meta: dict[str, tuple[MetaData, int]] = {}
        self.upload_queue: list[LogEntry] = []
        self.user_commands = 0
        self.management = None
        self._request_ids = 0
        self._seen_meta: set[bytes] = set()
        self._seen_log_requests: set[str] = set()
        self._seen_dd: set[bytes] = set()
        self._awaiting_dd: set[bytes] = set()
        self._mib_cursor = 0
        self._incoming: dict[str, dict[int, bytes]] = {}
        self.ui = f"{node_id}:ui"
        self.comm = f"{node_id}:comm"
        self.monitor = f"{node_id}:monitor"
        self.user = f"{node_id}:user"
        for entity in (node_id, self.ui, self.comm, self.monitor):
            net.register(entity, node_id, TCB)
        net.register(self.user, node_id, USER)
        self.agent = OverlayAgent(node_id, self.anchor, self.cert, rng.child("agent"), net, isp_public,
                                  maintenance, mitigations, self.policy_of, self.serve_content)

    # -- bookkeeping ---------------------------------------------------------

    def now(self) -> int:
        return self.net.clock

    def slice_entity(self, rid: ResourceId) -> str:
        return f"{self.id}:{rid}"

    def log(self, kind: str, body: bytes = b"") -> LogEntry:
        entry = self.anchor.sign_log(log_payload(kind, body), self.now())
        index = len(self.anchor.log) - 1
        if self.log_sink in ("tds", "both"):
            self.tds.put(self.maintenance, f"log:{index:06d}", self.anchor.seal(canonical_encode(entry)))
        if self.log_sink in ("monitoring", "both"):
            self.upload_queue.append(entry)
        self.net.record("log", node=self.id, entry=kind, index=index)
        return entry

    def report_incident(self, detail: str) -> None:
        if self.anchor.clock_synchronized:
            self.log("incident", detail.encode())
            self.net.record("incident", entity=self.id, detail=detail, signed=True)
        else:
            self.net.record("incident", entity=self.id, detail=detail, signed=False)

    def _transition(self, phase: Phase) -> None:
        self.phase = phase
        self.net.record("phase", node=self.id, phase=phase.value)

    # -- sealed state ----------------------------------------------------------

    def policy_of(self, owner: ResourceId) -> AppSlicePolicy | None:
        if not self.tds.has(owner, "policy"):
            return None
        return canonical_decode(AppSlicePolicy, self.anchor.unseal(self.tds.get(owner, "policy")))

    def config_of(self, rid: ResourceId) -> AppSliceConfiguration:
        return canonical_decode(AppSliceConfiguration, self.anchor.unseal(self.tds.get(rid, "config")))

    def policies(self) -> list[AppSlicePolicy]:
        owners = sorted({rid for rid, slot in self.tds.entries if slot == "policy"}, key=ResourceId.sort_key)
        return [p for p in (self.policy_of(o) for o in owners) if p is not None]

    def install_policy(self, policy: AppSlicePolicy) -> None:
        if self.mitigations.on("M1") and not policy_certified(policy, self.isp_public):
            raise UncertifiedPolicy(f"policy of {policy.owner} carries no valid ISP certification")
        self.tds.put(policy.owner, "policy", self.anchor.seal(canonical_encode(policy)))

    def store_write(self, owner: ResourceId, name: str, data: bytes, *, actor: ResourceId | str) -> None:
        key = self.anchor.get_storage_key(self.tds, owner)
        self.stores.setdefault(owner, NodeStore(owner)).write(key, name, data, self.rng)
        self.net.record("access", node=self.id, store=str(owner), actor=str(actor), op="write", grant="own")

    def store_read(self, owner: ResourceId, name: str, *, actor: ResourceId | str, grant: str) -> bytes:
        key = self.anchor.get_storage_key(self.tds, owner)
        data = self.stores[owner].read(key, name)
        self.net.record("access", node=self.id, store=str(owner), actor=str(actor), op="read", grant=grant)
        return data

    # -- factory provisioning and boot ------------------------------------------

    def _measure_base(self) -> None:
        self.anchor.reset()
        self.anchor.extend(PCR_FIRMWARE, "firmware", self.firmware)
        self.anchor.extend(PCR_NODE_MANAGEMENT, "node_management", self.nm_image)

    def provision(self) -> None:
        """Factory install in a trusted environment, then power off."""
        self._measure_base()
        self.anchor.compute_storage_key(self.tds, self.maintenance)
        self.anchor.reset()
        self._transition(Phase.POWERED_OFF)

    def reboot(self) -> None:
        self._measure_base()
        for rid in self.install_order:
            self.anchor.extend(PCR_SLICES, f"slice:{rid}", self.images[rid])
        self.agent.sessions.clear()
        self.agent.management_session = None
        self._transition(Phase.BOOTED)

    def boot_and_register(self, management) -> RegistrationAck:
        self.net.mark("bringup.1")
        self.reboot()
        if not getattr(management, "online", True):
            raise ManagementUnreachable(f"{management.entity} does not answer")
        self.management = management
        self.agent.directory.setdefault(management.entity, management)
        self.net.mark("bringup.2")
        session = nada_authenticate(self.agent, management)
        self.agent.management_session = session
        self.net.mark("bringup.3")
        reg = Registration(self.id, digest(b"".join(self.anchor.platform.pcrs)))
        frame = session.seal("REGISTER", canonical_encode(reg))
        reply = self.net.send(Envelope("REGISTER", self.id, management.entity, self.maintenance, frame),
                              management.on_register)
        ack = self.net.send(Envelope("CONFIGURE", management.entity, self.id, self.maintenance, reply),
                            self._on_configure)
        self.adopted_clock = ack.clock
        self.anchor.synchronize_clock()
        self._transition(Phase.REGISTERED)
        self.net.mark("bringup.4")
        self.report_measurements()
        self.net.mark("bringup.5")
        for policy in ack.policies:
            self.install_policy(policy)
        for cmd in ack.commands:
            self.apply_configure(cmd)
        self._transition(Phase.OPERATIONAL)
        return ack

    def _on_configure(self, env: Envelope) -> RegistrationAck:
        _, payload = self.agent.open_frame(env)
        return canonical_decode(RegistrationAck, payload)

    # -- measurements ------------------------------------------------------------

    def sample_measurements(self) -> list[LogEntry]:
        """Node monitoring: measure the node and every slice, sign, append to the local MIB."""
        subjects = [self.id] + [str(r) for r in sorted(self.slices, key=ResourceId.sort_key)]
        rows = [Measurement(s, m, self.rng.randrange(100), "percent", self.now()) for s in subjects for m in METRICS]
        if self.canary:
            rows.append(Measurement(self.id, "canary", 0, self.canary, self.now()))
        entries = [self.log("measurement", canonical_encode(m)) for m in rows]
        self._mib_save(self._mib_load() + entries)
        return entries

    def _mib_load(self) -> list[LogEntry]:
        store = self.stores[self.maintenance]
        if "mib" not in store.blocks:
            return []
        key = self.anchor.get_storage_key(self.tds, self.maintenance)
        return list(canonical_decode(LogBatch, store.read(key, "mib")).entries)

    def _mib_save(self, entries: list[LogEntry]) -> None:
        key = self.anchor.get_storage_key(self.tds, self.maintenance)
        self.stores[self.maintenance].write(key, "mib", canonical_encode(LogBatch(self.id, tuple(entries))), self.rng)

    def _drain(self) -> tuple[LogEntry, ...]:
        rows = self._mib_load()
        fresh = rows[self._mib_cursor:]
        self._mib_cursor = len(rows)
        queued, self.upload_queue = self.upload_queue, []
        seen = {e.signature for e in fresh}
        return tuple(fresh) + tuple(e for e in queued if e.signature not in seen)

    def report_measurements(self) -> None:
        """Periodic report to management over the management session."""
        session = self.agent.management_session
        if session is None:
            raise SessionError("no management session")
        self.sample_measurements()
        batch = LogBatch(self.id, self._drain())
        frame = session.seal("MEASURE_LOG", canonical_encode(batch))
        self.net.send(Envelope("MEASURE_LOG", self.monitor, self.management.entity, self.maintenance, frame),
                      self.management.on_measure_log)

    # -- configuration -------------------------------------------------------------

    def apply_configure(self, cmd: ConfigureCommand) -> SliceStatus | None:
        rid = cmd.policy.owner
        if self.mitigations.on("M1") and not policy_certified(cmd.policy, self.isp_public):
            raise UncertifiedPolicy(f"configure for {rid} carries an uncertified policy")
        runtime = self.slices.get(rid)
        if runtime is None and cmd.action is not Action.ACTIVATE:
            raise UnknownSlice(f"{rid} is not installed on {self.id}")
        if runtime is not None and self.mitigations.on("M5") and cmd.slice_fingerprint != fingerprint(self.images[rid]):
            raise FingerprintMismatch(f"configure for {rid} names a different image")
        self.install_policy(cmd.policy)
        if runtime is None:
            # Policy is in place; the slice boots once its image is installed.
            self.net.record("configure", node=self.id, slice=str(rid), action=cmd.action.name, status="pending")
            return None
        runtime.status = next_status(runtime.status, cmd.action)
        self.net.record("configure", node=self.id, slice=str(rid), action=cmd.action.name,
                        status=runtime.status.value)
        return runtime.status

    def firewall_permits(self, a: ResourceId, b: ResourceId) -> bool:
        """Traffic between two slices needs a grant in the certified policies of both."""
        if a == b:
            return True
        if not self.mitigations.on("M2"):
            return True
        pa, pb = self.policy_of(a), self.policy_of(b)
        return bool(pa and pb and b in pa.allowed_slice_traffic and a in pb.allowed_slice_traffic)

    def slice_trusted(self, rid: ResourceId) -> bool:
        """Trust level: the image on disk still matches the certified fingerprint."""
        return fingerprint(self.images[rid]) == self.config_of(rid).fingerprint

    # -- slice installation ----------------------------------------------------------

    def on_metadata(self, env: Envelope) -> MetaData:
        if self.mitigations.on("M3") and env.overlay != self.maintenance:
            raise OverlayViolation(f"meta data arrived on {env.overlay}")
        offer = canonical_decode(ContentOffer, env.body)
        meta = offer.meta
        if self.mitigations.on("M11") and not verify_metadata(meta, self.isp_public):
            raise BadSignature(f"meta data for {meta.content_id} is not ISP-signed")
        key = digest(env.body)
        if key in self._seen_meta or meta.content_id in self.image_content:
            raise ReplayDetected(f"meta data for {meta.content_id} already processed", mitigation="M19")
        self._seen_meta.add(key)
        self.pending_meta[meta.content_id] = (meta, offer.size)
        return meta

    def install_slice(self, content_id: str) -> SliceRuntime:
        meta, size = self.pending_meta[content_id]
        self.net.mark("slice_install.2")
        data = start_p2p_download(self.agent, meta, self.maintenance, self.maintenance, size)
        self.net.mark("slice_install.3")
        runtime = self.install_bundle(data, content_id)
        del self.pending_meta[content_id]
        self.net.mark("slice_install.4")
        rid = runtime.config.resource_id
        body = canonical_encode((rid, runtime.config.fingerprint, digest(canonical_encode(runtime.config.policy))))
        entry = self.log("app_log", body)
        self.net.send(Envelope("APP_LOG", self.id, runtime.app.entity, rid, canonical_encode(entry)),
                      runtime.app.on_app_log)
        return runtime

    def install_bundle(self, data: bytes, content_id: str) -> SliceRuntime:
        bundle = canonical_decode(SliceBundle, data)
        rid = bundle.resource_id
        if rid.is_management:
            raise UncertifiedPolicy("a slice cannot carry the maintenance resource id")
        if self.mitigations.on("M1"):
            if not policy_certified(bundle.policy, self.isp_public) or bundle.policy.owner != rid:
                raise UncertifiedPolicy(f"policy delivered with {rid} is not certified for it")
        if rid in self.slices or self.tds.has(rid, "store_key"):
            raise StoreKeyExists(f"{rid} already installed on {self.id}")
        # Move the sealed state to the post-install measurement, then measure.
        future = measure_and_extend(self.anchor.platform, PCR_SLICES, f"slice:{rid}", data)
        self.anchor.reseal(self.tds, future)
        self.anchor.extend(PCR_SLICES, f"slice:{rid}", data)
        self.images[rid] = data
        self.install_order.append(rid)
        self.image_content[content_id] = rid
        handle = self.anchor.compute_storage_key(self.tds, rid)
        config = AppSliceConfiguration(rid, handle, bundle.policy, fingerprint(data))
        self.tds.put(rid, "config", self.anchor.seal(canonical_encode(config)))
        self.install_policy(bundle.policy)
        self.stores[rid] = NodeStore(rid)
        app = SliceApp(self, rid)
        self.net.register(app.entity, self.id, SLICE)
        runtime = SliceRuntime(config, SliceStatus.ACTIVE, bundle.provider, app)
        self.slices[rid] = runtime
        self.net.record("install", node=self.id, slice=str(rid), fingerprint=config.fingerprint)
        session = self.agent.management_session
        if session is not None and self.management is not None:
            frame = session.seal("INSTALLED", canonical_encode(Installed(self.id, rid, content_id)))
            self.net.send(Envelope("INSTALLED", self.id, self.management.entity, self.maintenance, frame),
                          self.management.on_installed)
        return runtime

    def serve_content(self, content_id: str, session: Session) -> bytes:
        if session.overlay == self.maintenance:
            rid = self.image_content.get(content_id)
            if rid is None:
                raise UnknownContent(content_id)
            return self.images[rid]
        owner = session.overlay
        if owner not in self.slices:
            raise UnknownContent(f"{owner} is not on {self.id}")
        return self.store_read(owner, content_id, actor=session.requester or owner, grant="overlay")

    def seed_content(self, rid: ResourceId, content_id: str, data: bytes) -> None:
        """Content injected by the customer into its own slice."""
        self.store_write(rid, content_id, data, actor=rid)

    # -- user requests ------------------------------------------------------------------

    def _ui_on_request(self, env: Envelope) -> UserRequest:
        return canonical_decode(UserRequest, env.body)

    def _ui_on_response(self, env: Envelope) -> UserResponse:
        return canonical_decode(UserResponse, env.body)

    def handle_user_request(self, rid: ResourceId, req: UserRequest, *, play_intervals: int = 1) -> UserResponse:
        base = {RequestKind.CONTENT: 0, RequestKind.PLAY: 5, RequestKind.STOP: 9}[req.kind]
        runtime = self.slices.get(rid)
        if runtime is None:
            raise UnknownSlice(f"{rid} is not installed on {self.id}")
        app = runtime.app
        body = canonical_encode(req)
        self.net.mark(f"user_request.{base + 1}")
        req = self.net.send(Envelope("USER_REQUEST", self.user, self.ui, rid, body), self._ui_on_request)
        if runtime.status is not SliceStatus.ACTIVE:
            raise SliceInactive(f"{rid} is {runtime.status.value}")
        self.net.mark(f"user_request.{base + 2}")
        req = self.net.send(Envelope("APP_USER_REQUEST", self.ui, app.entity, rid, canonical_encode(req)),
                            app.on_user_request)
        self.net.mark(f"user_request.{base + 3}")
        self.user_commands += 1
        entry = self.log("user_request", canonical_encode((rid, req)))
        self.net.send(Envelope("NADA_LOG", self.id, app.entity, rid, canonical_encode(entry)), app.on_nada_log)
        provider = runtime.provider
        if req.kind is RequestKind.CONTENT:
            self.net.mark("user_request.4")
            app.fetch(req.content_id)
            self.net.mark("user_request.5")
            resp = UserResponse("ok", req.content_id, provider)
            resp = self.net.send(Envelope("APP_USER_RESPONSE", app.entity, self.ui, rid, canonical_encode(resp)),
                                 self._ui_on_response)
        elif req.kind is RequestKind.PLAY:
            self.net.mark("user_request.9")
            app.playing = req.content_id
            for _ in range(play_intervals):
                self.net.tick(self.play_interval)
                entry = self.log("play", canonical_encode((rid, req.content_id)))
                self.net.send(Envelope("NADA_LOG", self.id, app.entity, rid, canonical_encode(entry)),
                              app.on_nada_log)
            resp = UserResponse("playing", req.content_id, provider)
        else:
            app.playing = None
            resp = UserResponse("stopped", None, provider)
        # The UI renders the provider identity from the certified installation,
        # never from what the slice claims about itself.
        return UserResponse(resp.status, resp.content_handle, provider)

    # -- internal monitoring (PEP here, PDP at node monitoring) ----------------------------

    def local_rules(self) -> list[Rule]:
        rules: list[Rule] = []
        for p in self.policies():
            owner = str(p.owner)
            rules.append(Rule(f"self:{owner}", (("rid", owner), ("trust", "trusted")), (("owner", owner),),
                              obligations=(AUDIT,)))
            for g in sorted(p.mib_read_grants, key=ResourceId.sort_key):
                rules.append(Rule(f"grant:{owner}:{g}", (("rid", str(g)), ("trust", "trusted")),
                                  (("owner", owner),), obligations=(AUDIT,)))
        return rules

    def _owner_of_subject(self, subject: str) -> ResourceId:
        for rid in self.slices:
            if str(rid) == subject:
                return rid
        return self.maintenance

    def internal_monitoring_request(self, requester: ResourceId, subject: str, metric: str) -> tuple[Measurement, ...]:
        runtime = self.slices.get(requester)
        if runtime is None:
            raise UnknownSlice(f"{requester} is not installed on {self.id}")
        self.net.mark("internal_monitoring.1")
        body = canonical_encode(SliceLogRequest(requester, subject, metric))
        rows_body = self.net.send(Envelope("SLICE_LOG_REQUEST", runtime.app.entity, self.id, requester, body),
                                  self._pep_handle)
        self.net.mark("internal_monitoring.9")
        return self.net.send(Envelope("SLICE_LOG_RESPONSE", self.id, runtime.app.entity, requester, rows_body),
                             runtime.app.on_log_response)

    def _pep_handle(self, env: Envelope) -> bytes:
        req = canonical_decode(SliceLogRequest, env.body)
        self.net.mark("internal_monitoring.2")
        runtime = self.slices.get(req.requester)
        if runtime is None or env.src != runtime.app.entity or env.overlay != req.requester:
            raise AuthenticationFailure(f"request from {env.src} does not come from slice {req.requester}")
        if runtime.status is not SliceStatus.ACTIVE:
            raise SliceInactive(f"{req.requester} is {runtime.status.value}")
        self.log("mib_request", canonical_encode((req.requester, req.subject, req.metric)))
        self.net.mark("internal_monitoring.3")
        trusted = self.slice_trusted(req.requester)
        if not trusted:
            self._record_decision(Decision("deny", None, ()), req)
            raise Deny(f"{req.requester} failed its trust check", reason="UntrustedSlice")
        areq = AuthzRequest(req.requester, trusted, req.subject, req.metric)
        raw = self.net.send(Envelope("AUTHZ_REQUEST", self.id, self.monitor, self.maintenance, canonical_encode(areq)),
                            self._pdp_handle)
        decision = self.net.send(Envelope("AUTHZ_DECISION", self.monitor, self.id, self.maintenance, raw),
                                 lambda e: canonical_decode(AuthzDecision, e.body))
        self._record_decision(Decision(decision.effect, decision.rule_id, decision.obligations), req)
        if decision.effect != "permit":
            raise Deny(f"{req.requester} holds no grant for {req.subject}", reason="NoGrant")
        self.net.mark("internal_monitoring.7")
        entries = self._mib_load()
        self.net.mark("internal_monitoring.8")
        owner = self._owner_of_subject(req.subject)
        rows = tuple(m for m in (measurement_of(e) for e in entries)
                     if m is not None and m.subject == req.subject and m.metric == req.metric)
        self.net.record("access", node=self.id, store=f"mib:{owner}", actor=str(req.requester), op="read",
                        grant="mib")
        return canonical_encode(MeasurementRows(rows))

    def _pdp_handle(self, env: Envelope) -> bytes:
        areq = canonical_decode(AuthzRequest, env.body)
        self.net.mark("internal_monitoring.4")
        rules = self.local_rules()
        self.net.mark("internal_monitoring.5")
        owner = self._owner_of_subject(areq.subject)
        request = Request({"rid": str(areq.requester), "trust": "trusted" if areq.trusted else "untrusted"},
                          {"owner": str(owner)})
        decision = pdp_evaluate(rules, request)
        self.net.mark("internal_monitoring.6")
        return canonical_encode(AuthzDecision(decision.effect, decision.rule_id, decision.obligations))

    def _record_decision(self, decision: Decision, req: SliceLogRequest) -> None:
        self.log("mib_decision", canonical_encode((req.requester, req.subject, decision.effect)))
        self.net.record("decision", site=f"node:{self.id}", effect=decision.effect, rule=decision.rule_id,
                        obligations=list(decision.obligations), requester=str(req.requester))
        for ob in decision.obligations if decision.permitted else ():
            self.log(ob, canonical_encode((req.requester, req.subject, req.metric)))
            self.net.record("obligation", site=f"node:{self.id}", obligation=ob, rule=decision.rule_id)

    # -- collection by the monitoring server -------------------------------------------------

    def on_log_request(self, env: Envelope, server) -> None:
        if self.mitigations.on("M3") and env.overlay != self.maintenance:
            raise OverlayViolation(f"log request arrived on {env.overlay}")
        meta = canonical_decode(MetaData, env.body)
        if self.mitigations.on("M11"):
            if meta.kind is not MetaKind.MEASUREMENT_REQUEST or not verify_metadata(meta, self.isp_public):
                raise BadSignature("measurement request is not ISP-signed")
            if meta.content_id in self._seen_log_requests:
                raise ReplayDetected("measurement request replayed", mitigation="M11")
        self._seen_log_requests.add(meta.content_id)
        self.net.mark("collection.II")
        self.agent.directory.setdefault(server.entity, server)
        session = connect(self.agent, server.entity, self.maintenance, Domain.ISP_DOMAIN, self.maintenance)
        self.net.mark("collection.III")
        self.sample_measurements()
        frame = session.seal("LOG_RESPONSE", canonical_encode(LogBatch(self.id, self._drain())))
        self.net.send(Envelope("LOG_RESPONSE", self.monitor, server.entity, self.maintenance, frame),
                      server.on_log_response)

    # -- end-user request and content distribution (COMM/API) --------------------------------

    def end_user_request(self, rid: ResourceId, content_id: str, app_tracker, nada_tracker,
                         nodes: dict[str, "Node"]) -> bytes:
        runtime = self.slices.get(rid)
        if runtime is None:
            raise UnknownSlice(f"{rid} is not installed on {self.id}")
        self._request_ids += 1
        req = UserRequest(RequestKind.CONTENT, content_id, self._request_ids)
        self.net.mark("end_user_request.1")
        req = self.net.send(Envelope("EU_REQUEST", self.user, self.comm, rid, canonical_encode(req)),
                            lambda e: canonical_decode(UserRequest, e.body))
        self.net.mark("end_user_request.2")
        sr = SignedRequest(self.id, rid, req.content_id, req.request_id, self.now())
        sr = dataclasses.replace(sr, signature=self.anchor.sign(signing_bytes(sr)))
        signed = canonical_encode(sr)
        self.net.send(Envelope("COMM_SIGNED_REQUEST", self.comm, self.id, rid, signed), self._nm_store_request)
        self.net.mark("end_user_request.4")
        self._awaiting_dd.add(digest(signed))
        dd_body = self.net.send(Envelope("SIGNED_REQUEST", self.comm, app_tracker.entity, rid, signed),
                                app_tracker.on_signed_request)
        self.net.mark("end_user_request.5")
        dd_body = self.net.send(Envelope("DD_FILE", app_tracker.entity, self.comm, rid, dd_body),
                                lambda e: self._comm_on_tracker_dd(e, app_tracker))
        self.net.mark("end_user_request.6")
        holder_id = self.net.send(Envelope("DD_FILE", self.comm, nada_tracker.entity, rid, dd_body),
                                  nada_tracker.on_dd_file)
        holder = nodes[holder_id]
        self.net.mark("end_user_request.7")
        dd = self.net.send(Envelope("DD_FILE", nada_tracker.entity, holder.comm, rid, dd_body),
                           lambda e: holder.comm_on_dd(e, app_tracker))
        return holder.distribute(dd, self)

    def _nm_store_request(self, env: Envelope) -> None:
        sr = canonical_decode(SignedRequest, env.body)
        self.net.mark("end_user_request.3")
        self.store_write(sr.requester, f"request:{sr.request_id}", env.body, actor=self.maintenance)

    def _verify_dd(self, env: Envelope, tracker) -> DownloadDefinitionFile:
        dd = canonical_decode(DownloadDefinitionFile, env.body)
        if self.mitigations.on("M3") and env.overlay != dd.requester:
            raise OverlayViolation(f"download definition for {dd.requester} arrived on {env.overlay}")
        if self.mitigations.on("M11"):
            if dd.tracker != tracker.entity or not verify_signature(tracker.cert.key("sign"), signing_bytes(dd),
                                                                    dd.signature):
                raise BadSignature("download definition file is not signed by the tracker")
        return dd

    def _comm_on_tracker_dd(self, env: Envelope, tracker) -> bytes:
        dd = self._verify_dd(env, tracker)
        if dd.request_digest not in self._awaiting_dd:
            raise ReplayDetected("download definition answers no open request", mitigation="M4.2")
        self._awaiting_dd.discard(dd.request_digest)
        return env.body

    def comm_on_dd(self, env: Envelope, tracker) -> DownloadDefinitionFile:
        dd = self._verify_dd(env, tracker)
        if dd.request_digest in self._seen_dd:
            raise ReplayDetected("download definition already served", mitigation="M4.2")
        self._seen_dd.add(dd.request_digest)
        return dd

    def distribute(self, dd: DownloadDefinitionFile, requesting: "Node") -> bytes:
        self.net.mark("content_distribution.7")
        rid = dd.requester
        runtime = self.slices.get(rid)
        if runtime is None or dd.content_id not in self.stores[rid].names():
            raise NoHolder(f"{self.id} does not hold {dd.content_id}")
        app = runtime.app
        self.net.mark("content_distribution.8")
        self.net.send(Envelope("SLICE_CONTENT_REQUEST", self.comm, app.entity, rid, dd.content_id.encode()),
                      app.on_content_request)
        self.net.mark("content_distribution.9")
        data = self.store_read(rid, dd.content_id, actor=rid, grant="own")
        data = self.net.send(Envelope("SLICE_CONTENT", app.entity, self.comm, rid, data), lambda e: e.body)
        self.net.mark("content_distribution.10")
        self.agent.directory.setdefault(requesting.id, requesting.agent)
        session = connect(self.agent, requesting.id, rid, Domain.NADA_NETWORK, rid)
        requesting._incoming[dd.content_id] = {}
        for i in range(chunk_count(len(data))):
            frame = session.seal_bulk(i, data[i * CHUNK_SIZE:(i + 1) * CHUNK_SIZE])
            self.net.send(Envelope("CONTENT_PUSH", self.id, requesting.id, rid, frame),
                          lambda e, cid=dd.content_id: requesting.on_content_push(e, cid))
        return requesting.complete_push(dd)

    def on_content_push(self, env: Envelope, content_id: str) -> None:
        index, chunk = self.agent.on_content_chunk(env)
        self._incoming[content_id][index] = chunk

    def complete_push(self, dd: DownloadDefinitionFile) -> bytes:
        parts = self._incoming.pop(dd.content_id)
        data = b"".join(parts[i] for i in sorted(parts))
        if self.mitigations.on("M5") and fingerprint(data) != dd.fingerprint:
            raise FingerprintMismatch(f"pushed content {dd.content_id} does not match its signed fingerprint")
        self.net.mark("content_distribution.11")
        self.net.send(Envelope("STORE_CONTENT", self.comm, self.id, dd.requester, data),
                      lambda e: self._nm_store_content(e, dd))
        return data

    def _nm_store_content(self, env: Envelope, dd: DownloadDefinitionFile) -> None:
        self.net.mark("content_distribution.12")
        self.store_write(dd.requester, dd.content_id, env.body, actor=self.maintenance)

    # -- secrets, for the eavesdropper and confinement checks -----------------------------------

    def secrets(self) -> list[bytes]:
        out = list(self.anchor.private_material()) + self.agent.secrets()
        for (rid, slot), blob in sorted(self.tds.entries.items(), key=lambda kv: (kv[0][0].sort_key(), kv[0][1])):
            if slot == "store_key":
                try:
                    out.append(self.anchor.unseal(blob))
                except NadaError:  # drifted state: the key is unreachable anyway
                    continue
        return out
