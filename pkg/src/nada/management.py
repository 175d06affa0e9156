"""ISP-side services: NaDa management, the two trackers, the monitoring server.

The monitoring server's global MIB has exactly one read path, ``_rows``, and it
is only called from ``collect_measurements`` (via ``on_log_response``) and
``export_measurements`` (via ``on_export_request``). Every call leaves a
``mib_access`` trace record naming its operation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

from .core import (
    Action,
    AppSlicePolicy,
    Certificate,
    ConfigureCommand,
    ContentLocation,
    Domain,
    LogEntry,
    Measurement,
    MetaData,
    MetaKind,
    Mitigations,
    ALL_ON,
    Namespace,
    ResourceId,
    canonical_decode,
    canonical_encode,
    fingerprint,
    signing_bytes,
    verify_certificate,
)
from .crypto import NONCE_SIZE, BindingKey, Rng, SigningKey, box_decrypt, box_encrypt, digest, hexdigest, verify_signature
from .errors import (
    AuthenticationFailure,
    BadSignature,
    Deny,
    IntegrityFailure,
    NadaError,
    NoHolder,
    OverlayViolation,
    PolicyDenied,
    RejectedPolicy,
    ReplayDetected,
    UnknownContent,
    UnknownNode,
    UnknownTarget,
)
from .node import log_payload, measurement_of
from .overlay import (
    TICKET_TTL,
    AttestingServer,
    Session,
    Ticket,
    TicketGrant,
    TicketRequest,
    chunk_count,
    sign_record,
)
from .policy import Request, Rule, pdp_evaluate
from .records import (
    ContentOffer,
    DownloadDefinitionFile,
    ExportQuery,
    ExportRequest,
    ExportResponse,
    Installed,
    LogBatch,
    MeasurementRows,
    Registration,
    RegistrationAck,
    SignedRequest,
    SliceBundle,
)
from .simnet.network import SERVER, Envelope, Network
from .trust_anchor import (
    PCR_FIRMWARE,
    PCR_NODE_MANAGEMENT,
    PCR_SLICES,
    PlatformState,
    TrustAnchor,
    TrustedDataStore,
    bind_to,
    measure_and_extend,
    verify_log_chain,
)

__all__ = [
    "AppController", "AppTracker", "DownloadDefinitionFile", "Management", "MonitoringServer", "NadaTracker",
    "issue_certificate", "pdp_evaluate",
]


def issue_certificate(isp_key: SigningKey, subject: str, role: str, keys: tuple[tuple[str, bytes], ...],
                      attributes: tuple[tuple[str, str], ...] = ()) -> Certificate:
    cert = Certificate(subject, role, tuple(keys), tuple(attributes))
    return dataclasses.replace(cert, signature=isp_key.sign(signing_bytes(cert)))


@dataclass
class RegistryEntry:
    cert: Certificate
    state: PlatformState
    status: str = "enrolled"
    last_registration: int | None = None
    registrations: int = 0
    installed: list[ResourceId] = field(default_factory=list)

    @property
    def pcrs(self) -> tuple[bytes, ...]:
        return self.state.pcrs


@dataclass
class PublishedContent:
    meta: MetaData
    data: bytes


# ---------------------------------------------------------------------------
# NaDa management
# ---------------------------------------------------------------------------


class Management(AttestingServer):
    role = "management"

    def __init__(self, entity: str, *, rng: Rng, net: Network, isp_key: SigningKey, maintenance: ResourceId,
                 mitigations: Mitigations = ALL_ON, namespace: Namespace | None = None):
        cert = issue_certificate(isp_key, entity, "management", (("sign", isp_key.public),))
        super().__init__(entity, rng, net, isp_key.public, maintenance, mitigations, isp_key, cert, self.reference)
        self.isp_key = isp_key
        self.namespace = namespace or Namespace()
        self.anchor = TrustAnchor(entity, rng.child("anchor"))
        self.anchor.synchronize_clock()
        self.registry: dict[str, RegistryEntry] = {}
        self.policies: dict[ResourceId, AppSlicePolicy] = {}
        self.contents: dict[str, PublishedContent] = {}
        self.slice_contents: dict[ResourceId, str] = {}
        self.assignments: dict[str, list[ResourceId]] = {}
        self.accounting: dict[str, list[LogEntry]] = {}
        self.trackers: list[AppTracker] = []
        self.online = True
        net.register(entity, entity, SERVER)
        self.maintenance_policy = self.certify_policy(
            AppSlicePolicy(maintenance, frozenset({maintenance}), frozenset(), frozenset()))

    # -- registry ------------------------------------------------------------

    def enroll(self, cert: Certificate, firmware: bytes, nm_image: bytes) -> None:
        """Record the reference measurements of a node built from known-good images."""
        state = measure_and_extend(PlatformState(), PCR_FIRMWARE, "firmware", firmware)
        state = measure_and_extend(state, PCR_NODE_MANAGEMENT, "node_management", nm_image)
        self.registry[cert.subject] = RegistryEntry(cert, state)
        self.accounting.setdefault(cert.subject, [])

    def reference(self, node_id: str) -> tuple[Certificate, tuple[bytes, ...]]:
        entry = self.registry.get(node_id)
        if entry is None:
            raise UnknownNode(f"no reference measurements for {node_id}")
        return entry.cert, entry.pcrs

    def registry_state(self) -> dict[str, dict]:
        """Registry without registration timestamps, for idempotence checks."""
        return {n: {"pcrs": [p.hex() for p in e.pcrs], "status": e.status,
                    "installed": [str(r) for r in e.installed]} for n, e in sorted(self.registry.items())}

    def _log(self, kind: str, body: bytes) -> LogEntry:
        return self.anchor.sign_log(log_payload(kind, body), self.net.clock)

    def on_auth_init(self, env: Envelope) -> bytes:
        if not self.online:
            from .errors import ManagementUnreachable

            raise ManagementUnreachable(f"{self.entity} is offline")
        return super().on_auth_init(env)

    # -- content and policies ------------------------------------------------

    def sign_metadata(self, meta: MetaData) -> MetaData:
        return sign_record(meta, self.isp_key)

    def publish_content(self, content_id: str, data: bytes, locations: list[ContentLocation] | tuple = (),
                        kind: MetaKind = MetaKind.NADA_CONTENT) -> MetaData:
        meta = self.sign_metadata(MetaData(content_id, fingerprint(data), tuple(locations), self.entity, kind))
        self.contents[content_id] = PublishedContent(meta, data)
        for tracker in self.trackers:
            tracker.register(meta)
        self.net.record("publish", content=content_id, fingerprint=meta.fingerprint,
                        locations=[loc.node for loc in meta.locations])
        return meta

    def add_location(self, content_id: str, location: ContentLocation) -> MetaData:
        pc = self.contents[content_id]
        if location in pc.meta.locations:
            return pc.meta
        locations = tuple(sorted(pc.meta.locations + (location,), key=lambda l: (int(l.domain), l.node)))
        meta = self.sign_metadata(dataclasses.replace(pc.meta, locations=locations, signature=b""))
        self.contents[content_id] = PublishedContent(meta, pc.data)
        for tracker in self.trackers:
            tracker.register(meta)
        return meta

    def certify_policy(self, policy: AppSlicePolicy) -> AppSlicePolicy:
        owner = policy.owner
        if owner.is_management:
            if owner != self.maintenance or getattr(self, "maintenance_policy", None) is not None:
                raise RejectedPolicy(f"{owner} would be a second maintenance overlay")
        else:
            if owner.first in self.namespace.management:
                raise RejectedPolicy(f"customer id {owner.first!r} collides with a node management id")
            granted = policy.allowed_overlay_peers | policy.allowed_slice_traffic | policy.mib_read_grants
            if any(r.is_management for r in granted):
                raise RejectedPolicy(f"policy of {owner} grants the maintenance overlay")
        certified = dataclasses.replace(policy, certified_by_isp=self.isp_key.sign(signing_bytes(policy)))
        self.policies[owner] = certified
        return certified

    def publish_slice(self, rid: ResourceId, provider: str, image: bytes, policy: AppSlicePolicy) -> MetaData:
        bundle = SliceBundle(rid, provider, policy, image)
        cid = f"slice:{rid}"
        self.slice_contents[rid] = cid
        return self.publish_content(cid, canonical_encode(bundle),
                                    [ContentLocation(self.entity, Domain.ISP_DOMAIN)], MetaKind.NADA_CONTENT)

    def assign(self, node_id: str, rid: ResourceId) -> None:
        self.assignments.setdefault(node_id, []).append(rid)

    def serve_content(self, content_id: str, session: Session) -> bytes:
        pc = self.contents.get(content_id)
        if pc is None or session.overlay != self.maintenance:
            raise UnknownContent(content_id)
        return pc.data

    # -- handlers -----------------------------------------------------------------

    def _registered_peer(self, session: Session) -> RegistryEntry:
        return self.registry[session.peer]

    def on_register(self, env: Envelope) -> bytes:
        session, payload = self.open_frame(env)
        reg = canonical_decode(Registration, payload)
        if reg.node_id != session.peer:
            raise AuthenticationFailure(f"{session.peer} registers as {reg.node_id}")
        entry = self._registered_peer(session)
        entry.status = "registered"
        entry.last_registration = self.net.clock
        entry.registrations += 1
        commands = []
        for rid in self.assignments.get(reg.node_id, []):
            cid = self.slice_contents.get(rid)
            policy = self.policies.get(rid)
            if cid is None or policy is None:
                continue
            commands.append(ConfigureCommand(policy, fingerprint(self.contents[cid].data), Action.ACTIVATE))
        self.net.record("register", node=reg.node_id, commands=len(commands))
        ack = RegistrationAck(self.net.clock, (self.maintenance_policy,), tuple(commands))
        return session.seal("CONFIGURE", canonical_encode(ack))

    def on_measure_log(self, env: Envelope) -> None:
        session, payload = self.open_frame(env)
        batch = canonical_decode(LogBatch, payload)
        cert = self._registered_peer(session).cert
        for entry in batch.entries:
            if entry.signer != session.peer or not verify_signature(cert.key("log"), signing_bytes(entry),
                                                                    entry.signature):
                raise BadSignature(f"log entry from {session.peer} does not verify", mitigation="M4.0")
        self.accounting[session.peer].extend(batch.entries)

    def on_installed(self, env: Envelope) -> None:
        session, payload = self.open_frame(env)
        msg = canonical_decode(Installed, payload)
        entry = self._registered_peer(session)
        pc = self.contents.get(msg.content_id)
        if pc is None or self.slice_contents.get(msg.resource_id) != msg.content_id:
            raise UnknownContent(msg.content_id)
        entry.state = measure_and_extend(entry.state, PCR_SLICES, f"slice:{msg.resource_id}", pc.data)
        entry.installed.append(msg.resource_id)
        self.add_location(msg.content_id, ContentLocation(session.peer, Domain.NADA_NETWORK))
        self._log("installed", canonical_encode((session.peer, msg.resource_id)))

    def on_ticket_request(self, env: Envelope) -> bytes:
        session, payload = self.open_frame(env)
        req = canonical_decode(TicketRequest, payload)
        requester_node = session.peer
        target = self.registry.get(req.target_node)
        if target is None:
            raise UnknownTarget(f"{req.target_node} is not a registered node")
        if self.mitigations.on("M3"):
            if not req.requester.is_management and req.requester not in self.registry[requester_node].installed:
                raise PolicyDenied(f"{req.requester} does not run on {requester_node}")
            policy = self.maintenance_policy if req.overlay == self.maintenance else self.policies.get(req.overlay)
            if policy is None or req.requester not in policy.allowed_overlay_peers:
                raise PolicyDenied(f"{req.requester} may not use overlay {req.overlay}")
        secret = self.rng.bytes(32)
        material = bind_to(target.cert.key("bind"), target.pcrs, secret, self.rng)
        ticket = Ticket(self.entity, req.requester, requester_node, self.registry[requester_node].pcrs,
                        req.target_node, target.pcrs, req.overlay, self.rng.bytes(NONCE_SIZE), self.net.clock,
                        TICKET_TTL, material)
        ticket = sign_record(ticket, self.isp_key)
        self._log("ticket", canonical_encode((req.requester, req.target_node, req.overlay)))
        self.net.record("ticket", requester=str(req.requester), target=req.target_node, overlay=str(req.overlay))
        return session.seal("TICKET", canonical_encode(TicketGrant(ticket, secret)))

    # -- drivers ---------------------------------------------------------------------

    def send_metadata(self, node, rid: ResourceId) -> str:
        cid = self.slice_contents[rid]
        pc = self.contents[cid]
        body = canonical_encode(ContentOffer(len(pc.data), pc.meta))
        self.net.send(Envelope("META_DATA", self.entity, node.id, self.maintenance, body), node.on_metadata)
        return cid

    def secrets(self) -> list[bytes]:
        return super().secrets() + [self.isp_key.private_bytes()] + self.anchor.private_material()


# ---------------------------------------------------------------------------
# Trackers
# ---------------------------------------------------------------------------


class AppTracker:
    """Customer-side tracker: turns a signed request into a download definition file."""

    def __init__(self, entity: str, *, rng: Rng, net: Network, isp_key: SigningKey,
                 node_cert: Callable[[str], Certificate], mitigations: Mitigations = ALL_ON):
        self.entity = entity
        self.net = net
        self._key = SigningKey.generate(rng)
        self.cert = issue_certificate(isp_key, entity, "tracker", (("sign", self._key.public),))
        self.node_cert = node_cert
        self.mitigations = mitigations
        self.table: dict[str, MetaData] = {}
        self._seen: set[bytes] = set()
        net.register(entity, entity, SERVER)

    def register(self, meta: MetaData) -> None:
        self.table[meta.content_id] = meta

    def on_signed_request(self, env: Envelope) -> bytes:
        sr = canonical_decode(SignedRequest, env.body)
        if self.mitigations.on("M3") and env.overlay != sr.requester:
            raise OverlayViolation(f"request for {sr.requester} arrived on {env.overlay}")
        cert = self.node_cert(sr.node_id)
        if not verify_signature(cert.key("log"), signing_bytes(sr), sr.signature):
            raise BadSignature("request is not signed by the node's COMM/API", mitigation="M4.2")
        key = digest(env.body)
        if key in self._seen:
            raise ReplayDetected("signed request replayed", mitigation="M4.2")
        self._seen.add(key)
        meta = self.table.get(sr.content_id)
        if meta is None:
            raise UnknownContent(sr.content_id)
        dd = DownloadDefinitionFile(key, sr.content_id, meta.fingerprint, sr.node_id, sr.requester,
                                    meta.locations, self.entity)
        return canonical_encode(sign_record(dd, self._key))

    def secrets(self) -> list[bytes]:
        return [self._key.private_bytes()]


class NadaTracker:
    """ISP-side tracker: routes a download definition file to one holder node."""

    def __init__(self, entity: str, *, net: Network, tracker_cert: Callable[[str], Certificate],
                 isp_public: bytes, mitigations: Mitigations = ALL_ON):
        self.entity = entity
        self.net = net
        self.tracker_cert = tracker_cert
        self.isp_public = isp_public
        self.mitigations = mitigations
        self._seen: set[bytes] = set()
        net.register(entity, entity, SERVER)

    def on_dd_file(self, env: Envelope) -> str:
        dd = canonical_decode(DownloadDefinitionFile, env.body)
        if self.mitigations.on("M3") and env.overlay != dd.requester:
            raise OverlayViolation(f"download definition for {dd.requester} arrived on {env.overlay}")
        if self.mitigations.on("M11"):
            cert = self.tracker_cert(dd.tracker)
            if not verify_certificate(cert, self.isp_public) or not verify_signature(
                    cert.key("sign"), signing_bytes(dd), dd.signature):
                raise BadSignature("download definition file is not signed by a certified tracker")
        if dd.request_digest in self._seen:
            raise ReplayDetected("download definition routed twice", mitigation="M4.2")
        self._seen.add(dd.request_digest)
        holder = route_holder(dd)
        self.net.record("route", content=dd.content_id, holder=holder)
        return holder


def route_holder(dd: DownloadDefinitionFile) -> str:
    """Lowest node id among the NaDa-network candidates other than the requester."""
    holders = sorted({loc.node for loc in dd.candidates
                      if loc.domain is Domain.NADA_NETWORK and loc.node != dd.requester_node})
    if not holders:
        raise NoHolder(f"no node holds {dd.content_id}")
    return holders[0]


# ---------------------------------------------------------------------------
# Monitoring server
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class MibRow:
    node: str
    measurement: Measurement


@dataclass(frozen=True, slots=True)
class GlobalMibImage:
    rows: tuple[MibRow, ...]


@dataclass(frozen=True, slots=True)
class RuleSet:
    rules: tuple[Rule, ...]


MIB_OPERATIONS = ("collect_measurements", "export_measurements")


class MonitoringServer(AttestingServer):
    role = "monitoring"

    def __init__(self, entity: str, *, rng: Rng, net: Network, isp_key: SigningKey, maintenance: ResourceId,
                 reference: Callable[[str], tuple[Certificate, tuple[bytes, ...]]], image: bytes = b"monitoring",
                 mitigations: Mitigations = ALL_ON):
        key = SigningKey.generate(rng.child("key"))
        cert = issue_certificate(isp_key, entity, "monitoring", (("sign", key.public),))
        super().__init__(entity, rng, net, isp_key.public, maintenance, mitigations, key, cert, reference)
        self._isp_key = isp_key
        self.image = image
        self.anchor = TrustAnchor(entity, rng.child("anchor"))
        self.tds = TrustedDataStore()
        self._store_rid = maintenance
        self._boot()
        self.anchor.compute_storage_key(self.tds, self._store_rid)
        self.anchor.synchronize_clock()
        self._seal("mib", canonical_encode(GlobalMibImage(())))
        self._seal("pap", canonical_encode(RuleSet(())))
        self._requests = 0
        self._seen_rows: set[bytes] = set()
        self._seen_exports: set[bytes] = set()
        self.accounting: dict[str, list[LogEntry]] = {}
        net.register(entity, entity, SERVER)

    def _boot(self) -> None:
        self.anchor.reset()
        self.anchor.extend(PCR_FIRMWARE, "server", self.image)

    def drift(self, component: bytes = b"patched") -> None:
        """A configuration change on the server; sealed data becomes unavailable."""
        self.anchor.extend(PCR_NODE_MANAGEMENT, "change", component)

    def restore(self) -> None:
        self._boot()
        self.anchor.synchronize_clock()

    def _seal(self, slot: str, payload: bytes) -> None:
        self.tds.put(self._store_rid, slot, self.anchor.seal(payload))

    def _unseal(self, slot: str) -> bytes:
        return self.anchor.unseal(self.tds.get(self._store_rid, slot))

    # -- policy manager (PAP) ----------------------------------------------------

    def set_rules(self, rules: list[Rule] | tuple[Rule, ...]) -> None:
        self._seal("pap", canonical_encode(RuleSet(tuple(rules))))

    def _rules(self) -> tuple[Rule, ...]:
        return canonical_decode(RuleSet, self._unseal("pap")).rules

    # -- global MIB --------------------------------------------------------------

    def _rows(self, op: str) -> tuple[MibRow, ...]:
        if op not in MIB_OPERATIONS:
            raise ValueError(f"{op} is not a MIB operation")
        self.net.record("mib_access", op=op, mode="read")
        return canonical_decode(GlobalMibImage, self._unseal("mib")).rows

    def _store_rows(self, rows: tuple[MibRow, ...], op: str) -> None:
        self.net.record("mib_access", op=op, mode="write")
        self._seal("mib", canonical_encode(GlobalMibImage(rows)))

    def mib_digest(self) -> str:
        return hexdigest(self.tds.get(self._store_rid, "mib").ciphertext)

    def report_incident(self, detail: str) -> None:
        self.anchor.sign_log(log_payload("incident", detail.encode()), self.net.clock)
        self.net.record("incident", entity=self.entity, detail=detail, signed=True)

    # -- collection (controller) ----------------------------------------------------

    def collect_measurements(self, node) -> int:
        """Steps I..V against one node; returns the number of rows added."""
        self.net.mark("collection.I")
        self._requests += 1
        query = canonical_encode(("all", node.id, self._requests))
        meta = MetaData(f"mreq:{self.entity}:{self._requests}", hexdigest(query),
                        (ContentLocation(self.entity, Domain.ISP_DOMAIN),), self.entity, MetaKind.MEASUREMENT_REQUEST)
        meta = sign_record(meta, self._isp_key)
        before = self._added = 0
        try:
            self.net.send(Envelope("LOG_REQUEST", self.entity, node.monitor, self.maintenance, canonical_encode(meta)),
                          lambda e: node.on_log_request(e, self))
        except NadaError as err:
            self.report_incident(f"collection from {node.id} failed: {type(err).__name__}")
            raise
        return self._added - before

    def on_log_response(self, env: Envelope) -> None:
        self.net.mark("collection.IV")
        session, payload = self.open_frame(env)
        batch = canonical_decode(LogBatch, payload)
        if batch.node_id != session.peer:
            raise AuthenticationFailure(f"{session.peer} reports for {batch.node_id}")
        cert, _ = self.reference(batch.node_id)
        fresh: list[MibRow] = []
        for entry in batch.entries:
            if entry.signer != batch.node_id or not verify_signature(cert.key("log"), signing_bytes(entry),
                                                                     entry.signature):
                raise BadSignature(f"measurement from {batch.node_id} does not verify", mitigation="M4.0")
            if entry.signature in self._seen_rows:
                continue
            self._seen_rows.add(entry.signature)
            m = measurement_of(entry)
            if m is None:
                self.accounting.setdefault(batch.node_id, []).append(entry)
            else:
                fresh.append(MibRow(batch.node_id, m))
        self.net.mark("collection.V")
        rows = self._rows("collect_measurements") + tuple(fresh)
        self._store_rows(rows, "collect_measurements")
        self._added = len(fresh)

    # -- export (exporter PEP + PDP) ------------------------------------------------------

    def on_export_request(self, env: Envelope) -> bytes:
        self.net.mark("export.2")
        if self.mitigations.on("M3") and env.overlay != self.maintenance:
            raise OverlayViolation(f"export request arrived on {env.overlay}")
        req = canonical_decode(ExportRequest, env.body)
        cred = req.credentials
        if not verify_certificate(cred, self.isp_public) or cred.subject != req.requester:
            raise AuthenticationFailure(f"{req.requester} presents no ISP-certified credentials")
        if not verify_signature(cred.key("sign"), signing_bytes(req), req.signature):
            raise AuthenticationFailure("export request signature invalid", mitigation="M15")
        if req.nonce in self._seen_exports:
            raise ReplayDetected("export request replayed", mitigation="M15")
        self._seen_exports.add(req.nonce)
        self.net.mark("export.3")
        rules = self._rules()
        self.net.mark("export.4")
        subject = {"id": cred.subject, "role": cred.role, **dict(cred.attributes)}
        resource = {"customer": req.query.customer, "metric": req.query.metric}
        decision = pdp_evaluate(rules, Request(subject, resource))
        self.net.record("decision", site="exporter", effect=decision.effect, rule=decision.rule_id,
                        obligations=list(decision.obligations), requester=cred.subject)
        if not decision.permitted:
            raise Deny(f"export to {cred.subject} denied", reason=decision.rule_id or "NoGrant")
        for ob in decision.obligations:
            self.anchor.sign_log(log_payload(ob, canonical_encode((cred.subject, req.query))), self.net.clock)
            self.net.record("obligation", site="exporter", obligation=ob, rule=decision.rule_id)
        self.net.mark("export.5")
        rows = tuple(r.measurement for r in self._rows("export_measurements")
                     if export_matches(r.measurement, req.query))
        eph, nonce, ct = box_encrypt(cred.key("bind"), canonical_encode(MeasurementRows(rows)),
                                     b"export|" + req.nonce, self.rng)
        return canonical_encode(ExportResponse(eph, nonce, ct))

    def secrets(self) -> list[bytes]:
        out = super().secrets() + [self.signing_key.private_bytes()] + self.anchor.private_material()
        try:
            out.append(self.anchor.get_storage_key(self.tds, self._store_rid))
        except NadaError:
            pass
        return out


def export_matches(m: Measurement, query: ExportQuery) -> bool:
    customer_ok = query.customer == "*" or m.subject.startswith(query.customer + "/")
    return customer_ok and (query.metric == "*" or m.metric == query.metric)


class AppController:
    """External requester of monitoring exports (a customer's controller or NaDa management)."""

    def __init__(self, entity: str, *, rng: Rng, net: Network, isp_key: SigningKey, maintenance: ResourceId,
                 role: str = "controller", customer: str | None = None, mitigations: Mitigations = ALL_ON):
        self.entity = entity
        self.mitigations = mitigations
        self.rng = rng
        self.net = net
        self.maintenance = maintenance
        self._key = SigningKey.generate(rng.child("sign"))
        self._bind = BindingKey.generate(rng.child("bind"))
        attributes = (("customer", customer),) if customer else ()
        self.cert = issue_certificate(isp_key, entity, role,
                                      (("sign", self._key.public), ("bind", self._bind.public)), attributes)
        self._pending: dict[bytes, ExportQuery] = {}
        net.register(entity, entity, SERVER)

    def request_export(self, server: MonitoringServer, query: ExportQuery) -> tuple[Measurement, ...]:
        self.net.mark("export.1")
        nonce = self.rng.bytes(NONCE_SIZE)
        req = sign_record(ExportRequest(self.entity, self.cert, query, nonce), self._key)
        self._pending[nonce] = query
        try:
            resp = self.net.send(Envelope("EXPORT_REQUEST", self.entity, server.entity, self.maintenance,
                                          canonical_encode(req)), server.on_export_request)
            return self.net.send(Envelope("EXPORT_RESPONSE", server.entity, self.entity, self.maintenance, resp),
                                 lambda e: self.on_export_response(e, nonce))
        finally:
            self._pending.pop(nonce, None)

    def on_export_response(self, env: Envelope, nonce: bytes) -> tuple[Measurement, ...]:
        if self.mitigations.on("M3") and env.overlay != self.maintenance:
            raise OverlayViolation(f"export response arrived on {env.overlay}")
        if nonce not in self._pending:
            raise ReplayDetected("export response answers no open request", mitigation="M15")
        resp = canonical_decode(ExportResponse, env.body)
        try:
            plain = box_decrypt(self._bind, resp.ephemeral, resp.nonce, resp.ciphertext, b"export|" + nonce)
        except IntegrityFailure:
            raise IntegrityFailure("export response failed its integrity check", mitigation="M15") from None
        del self._pending[nonce]
        return canonical_decode(MeasurementRows, plain).rows

    def secrets(self) -> list[bytes]:
        return [self._key.private_bytes(), self._bind.private_bytes()]
