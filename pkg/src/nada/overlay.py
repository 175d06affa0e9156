"""Trusted P2P layer: attestation handshakes, tickets, sessions, downloads.

Handshake with an ISP-side server (management or monitoring server)::

    AUTH_INIT      node -> server   node id, nonce_n
    AUTH_CHALLENGE server -> node   server cert, nonce_n, nonce_m, signature
    AUTH_QUOTE     node -> server   node cert, quote over nonce_m
    AUTH_KEY       server -> node   key material bound to the node's reference state, signature

Ticketed handshake between two nodes (ticket obtained over the management session)::

    TICKET_PRESENT requester -> target   nonce_r, ticket
    NODE_CHALLENGE target -> requester   nonce_t, target cert, quote over nonce_r
    NODE_QUOTE     requester -> target   requester cert, quote over nonce_t
    NODE_ACCEPT    target -> requester   key confirmation

Signatures and authentication tags are always the last field of a record so
that any change to the tail of a message hits them first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from .core import (
    Certificate,
    ContentLocation,
    Domain,
    MetaData,
    Mitigations,
    ResourceId,
    canonical_decode,
    canonical_encode,
    fingerprint,
    signing_bytes,
    verify_certificate,
)
from .crypto import NONCE_SIZE, InvalidTag, Rng, SigningKey, aead_decrypt, aead_encrypt, ctr_xor, kdf, verify_signature
from .errors import (
    AttestationFailure,
    BadSignature,
    CertificateFailure,
    FingerprintMismatch,
    NadaError,
    NoLocationReachable,
    OverlayViolation,
    PolicyDenied,
    ReplayDetected,
    SessionError,
    TicketExpired,
    UnknownContent,
    UnknownDomain,
    UnknownNode,
    UnknownTarget,
)
from .simnet.network import Envelope, Network
from .trust_anchor import BoundBlob, Quote, TrustAnchor, Verdict, bind_to, verify_quote

CHUNK_SIZE = 1024
TICKET_TTL = 1000
SID_SIZE = 8


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class AuthInit:
    node_id: str
    nonce: bytes


@dataclass(frozen=True, slots=True)
class AuthChallenge:
    server_id: str
    server_cert: Certificate
    nonce_n: bytes
    nonce_m: bytes
    signature: bytes = b""


@dataclass(frozen=True, slots=True)
class AuthQuote:
    node_id: str
    node_cert: Certificate
    quote: Quote


@dataclass(frozen=True, slots=True)
class AuthKey:
    server_id: str
    nonce_n: bytes
    nonce_m: bytes
    key_material: BoundBlob
    signature: bytes = b""


@dataclass(frozen=True, slots=True)
class TicketRequest:
    requester: ResourceId
    target_node: str
    overlay: ResourceId
    nonce: bytes


@dataclass(frozen=True, slots=True)
class Ticket:
    issuer: str
    requester: ResourceId
    requester_node: str
    requester_pcrs: tuple[bytes, ...]
    target_node: str
    target_pcrs: tuple[bytes, ...]
    overlay: ResourceId
    nonce: bytes
    issued_at: int
    ttl: int
    key_material: BoundBlob
    signature: bytes = b""


@dataclass(frozen=True, slots=True)
class TicketGrant:
    ticket: Ticket
    key: bytes


@dataclass(frozen=True, slots=True)
class TicketPresent:
    requester_node: str
    nonce_r: bytes
    ticket: Ticket


@dataclass(frozen=True, slots=True)
class NodeChallenge:
    target_node: str
    nonce_r: bytes
    nonce_t: bytes
    target_cert: Certificate
    quote: Quote


@dataclass(frozen=True, slots=True)
class NodeQuote:
    requester_node: str
    requester_cert: Certificate
    quote: Quote


@dataclass(frozen=True, slots=True)
class NodeAccept:
    target_node: str
    nonce_t: bytes
    confirm: bytes


@dataclass(frozen=True, slots=True)
class ContentRequest:
    content_id: str
    indices: tuple[int, ...]


def sign_record(record: Any, key: SigningKey) -> Any:
    """Return ``record`` with its trailing signature field filled in."""
    import dataclasses

    last = dataclasses.fields(record)[-1].name
    return dataclasses.replace(record, **{last: key.sign(signing_bytes(record))})


def verify_metadata(meta: MetaData, isp_public: bytes) -> Verdict:
    if verify_signature(isp_public, signing_bytes(meta), meta.signature):
        return Verdict(True)
    return Verdict(False, "BadSignature")


def chunk_count(size: int) -> int:
    return (size + CHUNK_SIZE - 1) // CHUNK_SIZE


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------


@dataclass
class Session:
    sid: bytes
    local: str
    peer: str
    overlay: ResourceId
    key: bytes
    established_at: int
    initiator: bool
    mitigation: str
    requester: ResourceId | None = None
    send_seq: int = 0
    recv_seq: int = 0

    def _nonce(self, seq: int, outgoing: bool) -> bytes:
        direction = 0 if outgoing == self.initiator else 1
        return bytes([direction, 0, 0, 0]) + seq.to_bytes(8, "big")

    def seal(self, mtype: str, payload: bytes) -> bytes:
        self.send_seq += 1
        seq = self.send_seq.to_bytes(8, "big")
        return self.sid + seq + aead_encrypt(self.key, self._nonce(self.send_seq, True), payload, mtype.encode())

    def _next_seq(self, frame: bytes, minimum: int) -> int:
        if len(frame) < SID_SIZE + 8 + minimum:
            raise SessionError("short frame", mitigation=self.mitigation)
        seq = int.from_bytes(frame[SID_SIZE:SID_SIZE + 8], "big")
        if seq <= self.recv_seq:
            raise SessionError(f"frame {seq} replayed or out of order", mitigation=self.mitigation)
        return seq

    def open(self, mtype: str, frame: bytes) -> bytes:
        seq = self._next_seq(frame, 16)
        try:
            out = aead_decrypt(self.key, self._nonce(seq, False), frame[SID_SIZE + 8:], mtype.encode())
        except InvalidTag:
            raise SessionError("frame failed authentication", mitigation=self.mitigation) from None
        self.recv_seq = seq
        return out

    # Bulk content frames are encrypted but not authenticated; their integrity
    # is checked once, against the ISP-signed fingerprint, after reassembly.

    def _bulk(self, seq: int, outgoing: bool, data: bytes) -> bytes:
        nonce = self._nonce(seq, outgoing)[:1] + bytes(7) + seq.to_bytes(8, "big")
        return ctr_xor(kdf(self.key, b"bulk"), nonce, data)

    def seal_bulk(self, index: int, data: bytes) -> bytes:
        self.send_seq += 1
        return (self.sid + self.send_seq.to_bytes(8, "big") + index.to_bytes(4, "big")
                + self._bulk(self.send_seq, True, data))

    def open_bulk(self, frame: bytes) -> tuple[int, bytes]:
        seq = self._next_seq(frame, 4)
        index = int.from_bytes(frame[SID_SIZE + 8:SID_SIZE + 12], "big")
        self.recv_seq = seq
        return index, self._bulk(seq, False, frame[SID_SIZE + 12:])


def _session_id(key: bytes) -> bytes:
    return kdf(key, b"sid")[:SID_SIZE]


# ---------------------------------------------------------------------------
# Participants
# ---------------------------------------------------------------------------


class Peer:
    """Anything that holds sessions and can serve content over them."""

    def __init__(self, entity: str, rng: Rng, net: Network, isp_public: bytes, maintenance: ResourceId,
                 mitigations: Mitigations):
        self.entity = entity
        self.rng = rng
        self.net = net
        self.isp_public = isp_public
        self.maintenance = maintenance
        self.mitigations = mitigations
        self.sessions: dict[bytes, Session] = {}
        self.directory: dict[str, Any] = {}

    def check_overlay(self, env: Envelope, expected: ResourceId) -> None:
        if self.mitigations.on("M3") and env.overlay != expected:
            raise OverlayViolation(f"{env.mtype} arrived on overlay {env.overlay}, expected {expected}")

    def session_for(self, env: Envelope) -> Session:
        s = self.sessions.get(env.body[:SID_SIZE])
        if s is None:
            raise SessionError(f"{env.mtype} on unknown session")
        return s

    def open_frame(self, env: Envelope) -> tuple[Session, bytes]:
        s = self.session_for(env)
        self.check_overlay(env, s.overlay)
        return s, s.open(env.mtype, env.body)

    def add_session(self, s: Session, kind: str) -> Session:
        self.sessions[s.sid] = s
        if s.initiator:
            self.net.record("session", id=s.sid.hex(), a=s.local, b=s.peer, overlay=str(s.overlay),
                            requester=str(s.requester) if s.requester else None, via=kind)
        return s

    def serve_content(self, content_id: str, session: Session) -> bytes:
        raise UnknownContent(content_id)

    def on_content_request(self, env: Envelope) -> list[bytes]:
        s, payload = self.open_frame(env)
        req = canonical_decode(ContentRequest, payload)
        data = self.serve_content(req.content_id, s)
        return [s.seal_bulk(i, data[i * CHUNK_SIZE:(i + 1) * CHUNK_SIZE]) for i in req.indices]

    def on_content_chunk(self, env: Envelope) -> tuple[int, bytes]:
        s = self.session_for(env)
        self.check_overlay(env, s.overlay)
        return s.open_bulk(env.body)

    def secrets(self) -> list[bytes]:
        return [s.key for s in self.sessions.values()]


class AttestingServer(Peer):
    """ISP-side responder of the management handshake."""

    role = "server"

    def __init__(self, entity: str, rng: Rng, net: Network, isp_public: bytes, maintenance: ResourceId,
                 mitigations: Mitigations, signing_key: SigningKey, cert: Certificate,
                 reference: Callable[[str], tuple[Certificate, tuple[bytes, ...]]]):
        super().__init__(entity, rng, net, isp_public, maintenance, mitigations)
        self.signing_key = signing_key
        self.cert = cert
        self.reference = reference
        self._seen_init: set[tuple[str, bytes]] = set()
        self._pending: dict[bytes, tuple[str, bytes]] = {}

    def on_auth_init(self, env: Envelope) -> bytes:
        self.check_overlay(env, self.maintenance)
        init = canonical_decode(AuthInit, env.body)
        self.reference(init.node_id)  # UnknownNode for nodes without reference measurements
        if (init.node_id, init.nonce) in self._seen_init:
            raise ReplayDetected("handshake opening replayed", mitigation="M10")
        self._seen_init.add((init.node_id, init.nonce))
        nonce_m = self.rng.bytes(NONCE_SIZE)
        self._pending[nonce_m] = (init.node_id, init.nonce)
        ch = AuthChallenge(self.entity, self.cert, init.nonce, nonce_m)
        return canonical_encode(sign_record(ch, self.signing_key))

    def on_auth_quote(self, env: Envelope) -> bytes:
        self.check_overlay(env, self.maintenance)
        msg = canonical_decode(AuthQuote, env.body)
        pending = self._pending.get(msg.quote.nonce)
        if pending is None or pending[0] != msg.node_id:
            raise AttestationFailure("node", "Freshness", detail="quote answers no open challenge")
        node_cert, reference_pcrs = self.reference(msg.node_id)
        if self.mitigations.on("M8"):
            if not verify_certificate(msg.node_cert, self.isp_public) or msg.node_cert.subject != msg.node_id:
                raise CertificateFailure(f"node key of {msg.node_id} is not ISP-certified")
            if msg.node_cert.key("ak") != node_cert.key("ak"):
                raise CertificateFailure(f"attestation key of {msg.node_id} does not match registry")
        if self.mitigations.on("M9"):
            verdict = verify_quote(msg.quote, msg.quote.nonce, reference_pcrs, node_cert.key("ak"))
            if not verdict:
                raise AttestationFailure("node", verdict.reason or "Rejected")
        del self._pending[msg.quote.nonce]
        nonce_n = pending[1]
        secret = self.rng.bytes(32)
        material = bind_to(node_cert.key("bind"), reference_pcrs, secret, self.rng)
        key = kdf(secret, b"session|" + nonce_n + msg.quote.nonce)
        s = Session(_session_id(key), self.entity, msg.node_id, self.maintenance, key, self.net.clock,
                    initiator=False, mitigation="M12")
        self.add_session(s, "management")
        self.on_session(s)
        reply = AuthKey(self.entity, nonce_n, msg.quote.nonce, material)
        return canonical_encode(sign_record(reply, self.signing_key))

    def on_session(self, session: Session) -> None:
        pass


class OverlayAgent(Peer):
    """Node-side endpoint of every overlay protocol. Owned by the node's management."""

    def __init__(self, node_id: str, anchor: TrustAnchor, cert: Certificate, rng: Rng, net: Network,
                 isp_public: bytes, maintenance: ResourceId, mitigations: Mitigations,
                 policy_lookup: Callable[[ResourceId], Any],
                 content_source: Callable[[str, Session], bytes]):
        super().__init__(node_id, rng, net, isp_public, maintenance, mitigations)
        self.node_id = node_id
        self.anchor = anchor
        self.cert = cert
        self.policy_lookup = policy_lookup
        self.content_source = content_source
        self.management_session: Session | None = None
        self._auth_pending: dict[bytes, str] = {}
        self._auth_state: dict[bytes, tuple[Certificate, bytes]] = {}
        self._ticket_nonces: set[bytes] = set()
        self._present_pending: dict[bytes, tuple[Ticket, bytes]] = {}
        self._challenge_state: dict[bytes, tuple[Ticket, bytes, bytes]] = {}
        self._target_pending: dict[bytes, tuple[Ticket, bytes]] = {}
        self._grants: list[TicketGrant] = []

    def serve_content(self, content_id: str, session: Session) -> bytes:
        return self.content_source(content_id, session)

    # -- management handshake, node side ---------------------------------------

    def on_auth_challenge(self, env: Envelope) -> bytes:
        self.check_overlay(env, self.maintenance)
        ch = canonical_decode(AuthChallenge, env.body)
        if ch.nonce_n not in self._auth_pending:
            if self.mitigations.on("M10") or not self._auth_pending:
                raise AttestationFailure("server", "Freshness", mitigation="M10",
                                         detail="challenge does not echo our nonce")
            nonce_n = next(iter(self._auth_pending))
        else:
            nonce_n = ch.nonce_n
        if self.mitigations.on("M8"):
            if not verify_certificate(ch.server_cert, self.isp_public) or ch.server_cert.role not in (
                    "management", "monitoring"):
                raise CertificateFailure("server key is not ISP-certified")
        if self.mitigations.on("M10"):
            if not verify_signature(ch.server_cert.key("sign"), signing_bytes(ch), ch.signature):
                raise AttestationFailure("server", "BadSignature", mitigation="M10")
        del self._auth_pending[nonce_n]
        self._auth_state[ch.nonce_m] = (ch.server_cert, nonce_n)
        return canonical_encode(AuthQuote(self.node_id, self.cert, self.anchor.quote(ch.nonce_m)))

    def on_auth_key(self, env: Envelope) -> Session:
        self.check_overlay(env, self.maintenance)
        msg = canonical_decode(AuthKey, env.body)
        state = self._auth_state.get(msg.nonce_m)
        if state is None:
            raise AttestationFailure("server", "Freshness", mitigation="M10", detail="no handshake in progress")
        server_cert, nonce_n = state
        if self.mitigations.on("M10"):
            if msg.nonce_n != nonce_n or not verify_signature(server_cert.key("sign"), signing_bytes(msg),
                                                              msg.signature):
                raise AttestationFailure("server", "BadSignature", mitigation="M10")
        secret = self.anchor.unbind(msg.key_material)
        del self._auth_state[msg.nonce_m]
        key = kdf(secret, b"session|" + nonce_n + msg.nonce_m)
        s = Session(_session_id(key), self.entity, env.src, self.maintenance, key, self.net.clock,
                    initiator=True, mitigation="M12")
        return self.add_session(s, "management")

    def on_ticket(self, env: Envelope) -> TicketGrant:
        _, payload = self.open_frame(env)
        grant = canonical_decode(TicketGrant, payload)
        self._grants.append(grant)
        return grant

    # -- ticketed handshake, target side ---------------------------------------

    def _check_policy(self, overlay: ResourceId, requester: ResourceId) -> None:
        if not self.mitigations.on("M3"):
            return
        policy = self.policy_lookup(overlay)
        if policy is None or requester not in policy.allowed_overlay_peers:
            raise PolicyDenied(f"{requester} may not use overlay {overlay} on {self.node_id}")

    def on_ticket_present(self, env: Envelope) -> bytes:
        msg = canonical_decode(TicketPresent, env.body)
        t = msg.ticket
        if self.mitigations.on("M3"):
            if not verify_signature(self.isp_public, signing_bytes(t), t.signature):
                raise BadSignature("ticket signature invalid", mitigation="M3")
            if t.target_node != self.node_id:
                raise UnknownTarget(f"ticket is for {t.target_node}")
            if self.net.clock > t.issued_at + t.ttl:
                raise TicketExpired(f"ticket expired at {t.issued_at + t.ttl}")
            if env.overlay != t.overlay:
                raise OverlayViolation(f"ticket for {t.overlay} presented on {env.overlay}")
            if msg.requester_node != t.requester_node:
                raise PolicyDenied("ticket presented by another node")
            self._check_policy(t.overlay, t.requester)
            if t.nonce in self._ticket_nonces:
                raise ReplayDetected("ticket already used")
        self._ticket_nonces.add(t.nonce)
        nonce_t = self.rng.bytes(NONCE_SIZE)
        self._target_pending[nonce_t] = (t, msg.nonce_r)
        return canonical_encode(NodeChallenge(self.node_id, msg.nonce_r, nonce_t, self.cert,
                                              self.anchor.quote(msg.nonce_r)))

    def on_node_quote(self, env: Envelope) -> bytes:
        msg = canonical_decode(NodeQuote, env.body)
        pending = self._target_pending.get(msg.quote.nonce)
        if pending is None:
            raise AttestationFailure("requester", "Freshness", detail="quote answers no open challenge")
        ticket, nonce_r = pending
        self.check_overlay(env, ticket.overlay)
        if self.mitigations.on("M8"):
            if (not verify_certificate(msg.requester_cert, self.isp_public)
                    or msg.requester_cert.subject != ticket.requester_node):
                raise CertificateFailure("requester key is not ISP-certified")
        if self.mitigations.on("M9"):
            verdict = verify_quote(msg.quote, msg.quote.nonce, ticket.requester_pcrs, msg.requester_cert.key("ak"))
            if not verdict:
                raise AttestationFailure("requester", verdict.reason or "Rejected")
        secret = self.anchor.unbind(ticket.key_material)
        del self._target_pending[msg.quote.nonce]
        nonce_t = msg.quote.nonce
        key = kdf(secret, b"session|" + nonce_r + nonce_t)
        s = Session(_session_id(key), self.entity, env.src, ticket.overlay, key, self.net.clock,
                    initiator=False, mitigation="M13", requester=ticket.requester)
        self.add_session(s, "ticket")
        confirm = aead_encrypt(key, bytes(NONCE_SIZE), b"accept", nonce_r + nonce_t)
        return canonical_encode(NodeAccept(self.node_id, nonce_t, confirm))

    # -- ticketed handshake, requester side ------------------------------------

    def on_node_challenge(self, env: Envelope) -> bytes:
        msg = canonical_decode(NodeChallenge, env.body)
        pending = self._present_pending.get(msg.nonce_r)
        if pending is None:
            raise ReplayDetected("challenge answers no ticket we presented")
        ticket, key = pending
        self.check_overlay(env, ticket.overlay)
        if self.mitigations.on("M8"):
            if not verify_certificate(msg.target_cert, self.isp_public) or msg.target_cert.subject != ticket.target_node:
                raise CertificateFailure("target key is not ISP-certified")
        if self.mitigations.on("M9"):
            verdict = verify_quote(msg.quote, msg.nonce_r, ticket.target_pcrs, msg.target_cert.key("ak"))
            if not verdict:
                raise AttestationFailure("target", verdict.reason or "Rejected")
        del self._present_pending[msg.nonce_r]
        self._challenge_state[msg.nonce_t] = (ticket, key, msg.nonce_r)
        return canonical_encode(NodeQuote(self.node_id, self.cert, self.anchor.quote(msg.nonce_t)))

    def on_node_accept(self, env: Envelope) -> Session:
        msg = canonical_decode(NodeAccept, env.body)
        state = self._challenge_state.get(msg.nonce_t)
        if state is None:
            raise SessionError("unexpected key confirmation", mitigation="M13")
        ticket, secret, nonce_r = state
        self.check_overlay(env, ticket.overlay)
        key = kdf(secret, b"session|" + nonce_r + msg.nonce_t)
        try:
            aead_decrypt(key, bytes(NONCE_SIZE), msg.confirm, nonce_r + msg.nonce_t)
        except InvalidTag:
            raise SessionError("key confirmation failed", mitigation="M13") from None
        del self._challenge_state[msg.nonce_t]
        s = Session(_session_id(key), self.entity, env.src, ticket.overlay, key, self.net.clock,
                    initiator=True, mitigation="M13", requester=ticket.requester)
        return self.add_session(s, "ticket")

    def secrets(self) -> list[bytes]:
        return super().secrets() + [g.key for g in self._grants]


# ---------------------------------------------------------------------------
# Protocol drivers
# ---------------------------------------------------------------------------


def nada_authenticate(agent: OverlayAgent, server: AttestingServer) -> Session:
    """Mutual attestation with an ISP-side server; returns the node's session."""
    net, maint = agent.net, agent.maintenance
    nonce_n = agent.rng.bytes(NONCE_SIZE)
    agent._auth_pending[nonce_n] = server.entity
    try:
        body = canonical_encode(AuthInit(agent.node_id, nonce_n))
        challenge = net.send(Envelope("AUTH_INIT", agent.entity, server.entity, maint, body), server.on_auth_init)
        quote = net.send(Envelope("AUTH_CHALLENGE", server.entity, agent.entity, maint, challenge),
                         agent.on_auth_challenge)
        key_msg = net.send(Envelope("AUTH_QUOTE", agent.entity, server.entity, maint, quote), server.on_auth_quote)
        return net.send(Envelope("AUTH_KEY", server.entity, agent.entity, maint, key_msg), agent.on_auth_key)
    finally:
        agent._auth_pending.pop(nonce_n, None)


def get_ticket(agent: OverlayAgent, requester: ResourceId, target_node: str, overlay: ResourceId) -> TicketGrant:
    session = agent.management_session
    if session is None:
        raise SessionError("no management session")
    server = agent.directory[session.peer]
    req = TicketRequest(requester, target_node, overlay, agent.rng.bytes(NONCE_SIZE))
    frame = session.seal("TICKET_REQUEST", canonical_encode(req))
    reply = agent.net.send(Envelope("TICKET_REQUEST", agent.entity, server.entity, agent.maintenance, frame),
                           server.on_ticket_request)
    return agent.net.send(Envelope("TICKET", server.entity, agent.entity, agent.maintenance, reply), agent.on_ticket)


def node_authenticate(agent: OverlayAgent, grant: TicketGrant, target: OverlayAgent) -> Session:
    t = grant.ticket
    nonce_r = agent.rng.bytes(NONCE_SIZE)
    agent._present_pending[nonce_r] = (t, grant.key)
    net = agent.net
    try:
        body = canonical_encode(TicketPresent(agent.node_id, nonce_r, t))
        ch = net.send(Envelope("TICKET_PRESENT", agent.entity, target.entity, t.overlay, body),
                      target.on_ticket_present)
        q = net.send(Envelope("NODE_CHALLENGE", target.entity, agent.entity, t.overlay, ch), agent.on_node_challenge)
        acc = net.send(Envelope("NODE_QUOTE", agent.entity, target.entity, t.overlay, q), target.on_node_quote)
        return net.send(Envelope("NODE_ACCEPT", target.entity, agent.entity, t.overlay, acc), agent.on_node_accept)
    finally:
        agent._present_pending.pop(nonce_r, None)


def connect(agent: OverlayAgent, dest: str, overlay: ResourceId, domain: Domain | None,
            requester: ResourceId) -> Session:
    """Session to ``dest``: direct attestation inside the ISP domain, ticketed otherwise."""
    if domain is Domain.ISP_DOMAIN:
        server = agent.directory.get(dest)
        if not isinstance(server, AttestingServer):
            raise UnknownNode(f"{dest} is not an ISP-side server")
        return nada_authenticate(agent, server)
    if domain is Domain.NADA_NETWORK:
        agent._check_policy(overlay, requester)
        target = agent.directory.get(dest)
        if not isinstance(target, OverlayAgent):
            raise UnknownTarget(f"{dest} is not a node")
        grant = get_ticket(agent, requester, dest, overlay)
        return node_authenticate(agent, grant, target)
    raise UnknownDomain(f"no domain known for {dest}")


def start_p2p_download(agent: OverlayAgent, meta: MetaData, overlay: ResourceId, requester: ResourceId,
                       size: int) -> bytes:
    """Fetch the chunks of ``meta`` from its locations and check the signed fingerprint."""
    if agent.mitigations.on("M11") and not verify_metadata(meta, agent.isp_public):
        raise BadSignature(f"meta data for {meta.content_id} is not ISP-signed")
    n = chunk_count(size)
    chunks: dict[int, bytes] = {}
    live: list[tuple[ContentLocation, Session]] = []
    for loc in sorted(meta.locations, key=lambda l: (l.node, int(l.domain))):
        if loc.node == agent.node_id:
            continue
        try:
            live.append((loc, connect(agent, loc.node, overlay, loc.domain, requester)))
        except NadaError as err:
            agent.net.record("location_failed", node=loc.node, error=type(err).__name__)
    wanted = list(range(n))
    while wanted:
        if not live:
            raise NoLocationReachable(f"no location of {meta.content_id} delivered")
        plan: dict[int, list[int]] = {}
        for k, i in enumerate(wanted):
            plan.setdefault(k % len(live), []).append(i)
        failed: list[int] = []
        for slot in sorted(plan):
            loc, s = live[slot]
            try:
                _fetch(agent, loc.node, s, meta.content_id, plan[slot], chunks)
            except NadaError as err:
                agent.net.record("location_failed", node=loc.node, error=type(err).__name__)
                failed.append(slot)
        live = [entry for k, entry in enumerate(live) if k not in failed]
        wanted = [i for i in wanted if i not in chunks]
    data = b"".join(chunks[i] for i in range(n))
    if agent.mitigations.on("M5") and fingerprint(data) != meta.fingerprint:
        raise FingerprintMismatch(f"content {meta.content_id} does not match its signed fingerprint")
    return data


def _fetch(agent: OverlayAgent, holder_id: str, s: Session, content_id: str, indices: list[int],
           out: dict[int, bytes]) -> None:
    holder = agent.directory[holder_id]
    frame = s.seal("CONTENT_REQUEST", canonical_encode(ContentRequest(content_id, tuple(indices))))
    frames = agent.net.send(Envelope("CONTENT_REQUEST", agent.entity, holder.entity, s.overlay, frame),
                            holder.on_content_request)
    for f in frames:
        index, data = agent.net.send(Envelope("CONTENT_CHUNK", holder.entity, agent.entity, s.overlay, f),
                                     agent.on_content_chunk)
        if index in indices:
            out[index] = data
