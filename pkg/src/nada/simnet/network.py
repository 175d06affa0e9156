"""Synchronous message network with a logical clock and trust-boundary tagging.

Protocols are written as straight-line initiator code: ``net.send(env, handler)``
records the event, advances the clock by the link latency, lets an attached
adversary interfere, and returns whatever the receiver's handler returns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Callable

from ..core import ResourceId
from ..crypto import hexdigest

TCB = "tcb"          # node management, UI, COMM/API, node monitoring
SLICE = "slice"      # customer application slice
USER = "user"        # local end user
SERVER = "server"    # ISP side or customer infrastructure


@dataclass(frozen=True, slots=True)
class Envelope:
    mtype: str
    src: str
    dst: str
    overlay: ResourceId
    body: bytes

    def with_body(self, body: bytes) -> "Envelope":
        return Envelope(self.mtype, self.src, self.dst, self.overlay, body)

    def with_overlay(self, overlay: ResourceId) -> "Envelope":
        return Envelope(self.mtype, self.src, self.dst, overlay, self.body)


class Network:
    def __init__(self, latency: int = 1, link_latency: dict[tuple[str, str], int] | None = None):
        self.clock = 0
        self._seq = 0
        self.latency = latency
        self.link_latency = dict(link_latency or {})
        self.trace: list[dict[str, Any]] = []
        self.hosts: dict[str, str] = {}
        self.levels: dict[str, str] = {}
        self.adversary = None
        # Bytes a passive wire observer on inter-host links sees.
        self.knowledge: list[bytes] = []
        self.wire: list[bytes] = []
        self.step_label: str | None = None
        self.rival_reach: Callable[[Envelope], tuple[bool, str | None]] = lambda env: (False, None)
        self.incident_sink: Callable[[str, str], None] = lambda entity, detail: None

    # -- topology ------------------------------------------------------------

    def register(self, entity: str, host: str, level: str) -> None:
        self.hosts[entity] = host
        self.levels[entity] = level

    def crosses_boundary(self, src: str, dst: str) -> bool:
        return self.hosts[src] != self.hosts[dst] or self.levels[src] != self.levels[dst]

    def inter_host(self, src: str, dst: str) -> bool:
        return self.hosts[src] != self.hosts[dst]

    # -- trace ---------------------------------------------------------------

    def record(self, kind: str, **fields: Any) -> dict[str, Any]:
        rec = {"kind": kind, "tick": self.clock, "seq": self._seq}
        if self.step_label is not None:
            rec["step"] = self.step_label
        rec.update(fields)
        self._seq += 1
        self.trace.append(rec)
        return rec

    def mark(self, label: str) -> None:
        self.step_label = label
        self.record("step", label=label)

    def tick(self, n: int = 1) -> None:
        self.clock += n

    # -- delivery ------------------------------------------------------------

    def log_message(self, env: Envelope, injected: str | None = None) -> dict[str, Any]:
        boundary = self.crosses_boundary(env.src, env.dst)
        fields = dict(src=env.src, dst=env.dst, overlay=str(env.overlay), type=env.mtype,
                      boundary_crossed=boundary, size=len(env.body), digest=hexdigest(env.body)[:16])
        if injected:
            fields["injected"] = injected
        rec = self.record("msg", **fields)
        self.wire.append(env.body)
        if boundary and self.inter_host(env.src, env.dst):
            self.knowledge.append(env.body)
        return rec

    def send(self, env: Envelope, handler: Callable[[Envelope], Any]) -> Any:
        rec = self.log_message(env)
        self.clock += self.link_latency.get((self.hosts[env.src], self.hosts[env.dst]), self.latency)
        if self.adversary is not None:
            return self.adversary.intercept(self, env, handler, rec)
        return handler(env)

    def digest(self) -> str:
        return hexdigest(self.jsonl().encode())

    def jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.trace)
