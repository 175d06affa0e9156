"""Dolev-Yao style adversary with one action kind per STRIDE class.

Each action targets the n-th delivery of one message type. Its outcome is
``Blocked(mitigation)`` when a security check rejected the interference and
``Succeeded`` when the system accepted it.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable

from ..core import ResourceId
from ..crypto import Rng
from ..errors import MessageDropped, NadaError
from ..messages import protection
from .network import SERVER, Envelope, Network

SPOOF_BYTES = 8


class Kind(str, enum.Enum):
    SPOOF = "spoof"
    TAMPER = "tamper"
    REPLAY = "replay"
    EAVESDROP = "eavesdrop"
    DROP = "drop"
    ELEVATE = "elevate"

    @property
    def stride(self) -> str:
        return {"spoof": "S", "tamper": "T", "replay": "R", "eavesdrop": "I",
                "drop": "D", "elevate": "E"}[self.value]


LOG_CHAIN = "LOG_CHAIN"
LOG_MODES = ("mutate", "reorder", "duplicate")


@dataclass(frozen=True, slots=True)
class AdversaryAction:
    kind: Kind
    mtype: str
    occurrence: int = 0
    src: str | None = None
    dst: str | None = None
    mode: str | None = None

    def label(self) -> str:
        extra = f":{self.mode}" if self.mode else ""
        return f"{self.kind.value}:{self.mtype}#{self.occurrence}{extra}"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AdversaryAction":
        return cls(Kind(d["kind"]), d["type"], int(d.get("occurrence", 0)), d.get("src"), d.get("dst"),
                   d.get("mode"))


@dataclass(slots=True)
class Outcome:
    action: AdversaryAction
    verdict: str = "NotTriggered"
    mitigation: str | None = None
    detail: str = ""
    seq: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"action": self.action.label(), "kind": self.action.kind.value,
                "stride": self.action.kind.stride, "type": self.action.mtype,
                "verdict": self.verdict, "mitigation": self.mitigation, "detail": self.detail,
                "seq": self.seq}


class Adversary:
    def __init__(self, actions: list[AdversaryAction], rng: Rng, *, incident_logging: bool = True,
                 customer_overlay: ResourceId | None = None, maintenance: ResourceId | None = None):
        self.actions = list(actions)
        self.outcomes = [Outcome(a) for a in self.actions]
        self.rng = rng
        self.incident_logging = incident_logging
        self.customer_overlay = customer_overlay
        self.maintenance = maintenance
        self._counts: Counter[str] = Counter()
        self._fired: set[int] = set()
        self._pending: list[int] = []
        self._captured: dict[int, tuple[bytes, bool]] = {}

    # -- helpers -------------------------------------------------------------

    def _match(self, env: Envelope, n: int) -> int | None:
        for i, a in enumerate(self.actions):
            if i in self._fired or a.mtype != env.mtype or a.occurrence != n:
                continue
            if a.src is not None and a.src != env.src:
                continue
            if a.dst is not None and a.dst != env.dst:
                continue
            return i
        return None

    def _resolve(self, i: int, verdict: str, mitigation: str | None, detail: str) -> None:
        o = self.outcomes[i]
        o.verdict, o.mitigation, o.detail = verdict, mitigation, detail

    def _blocked(self, i: int, err: NadaError) -> None:
        self._resolve(i, "Blocked", err.mitigation, f"{type(err).__name__}: {err}")

    def _attempt(self, i: int, net: Network, forged: Envelope, handler: Callable[[Envelope], Any],
                 tag: str) -> Any:
        net.log_message(forged, injected=tag)
        try:
            result = handler(forged)
        except NadaError as err:
            self._blocked(i, err)
            raise
        self._pending.append(i)
        return result

    def _elevated(self, overlay: ResourceId) -> ResourceId:
        if overlay.is_management and self.customer_overlay is not None:
            return self.customer_overlay
        return self.maintenance if self.maintenance is not None else overlay

    # -- interception --------------------------------------------------------

    def intercept(self, net: Network, env: Envelope, handler: Callable[[Envelope], Any],
                  rec: dict[str, Any]) -> Any:
        n = self._counts[env.mtype]
        self._counts[env.mtype] += 1
        i = self._match(env, n)
        if i is None or not rec["boundary_crossed"]:
            return handler(env)
        self._fired.add(i)
        self.outcomes[i].seq = rec["seq"]
        action = self.actions[i]

        if not net.inter_host(env.src, env.dst):
            # Inside a node the only foothold is a co-located rival slice, and
            # it reaches the link only if the slice firewall lets it through.
            reachable, rival = net.rival_reach(env)
            if not reachable:
                self._resolve(i, "Blocked", "M2", f"no co-located slice may reach {env.overlay}")
                return handler(env)

        kind = action.kind
        if kind is Kind.EAVESDROP:
            self._captured[i] = (env.body, net.levels[env.src] == SERVER or net.levels[env.dst] == SERVER)
            return handler(env)

        if kind is Kind.DROP:
            net.record("drop", type=env.mtype, src=env.src, dst=env.dst)
            if self.incident_logging:
                net.incident_sink(env.src, f"{env.mtype} to {env.dst} lost")
                self._resolve(i, "Blocked", "M4.1", "loss detected and logged")
            else:
                self._resolve(i, "Succeeded", None, "loss went unnoticed")
            raise MessageDropped(rec["seq"], env.mtype, env.src, env.dst)

        if kind is Kind.REPLAY:
            result = handler(env)
            net.log_message(env, injected="replay")
            try:
                handler(env)
            except NadaError as err:
                self._blocked(i, err)
            else:
                self._resolve(i, "Succeeded", None, "duplicate accepted")
            return result

        if kind is Kind.TAMPER:
            body = env.body[:-1] + bytes([env.body[-1] ^ 0x01]) if env.body else b"\x01"
            return self._attempt(i, net, env.with_body(body), handler, "tamper")

        if kind is Kind.ELEVATE:
            return self._attempt(i, net, env.with_overlay(self._elevated(env.overlay)), handler, "elevate")

        # Spoof: a forged message without the sender's keys, delivered first.
        k = min(SPOOF_BYTES, len(env.body))
        forged = env.with_body(env.body[:len(env.body) - k] + self.rng.bytes(k))
        net.log_message(forged, injected="spoof")
        try:
            result = handler(forged)
        except NadaError as err:
            self._blocked(i, err)
            return handler(env)
        self._pending.append(i)
        return result

    # -- verdicts ------------------------------------------------------------

    def finish_step(self, error: NadaError | None) -> None:
        for i in self._pending:
            if error is not None:
                self._blocked(i, error)
            else:
                self._resolve(i, "Succeeded", None, "interference accepted")
        self._pending.clear()

    def finish_run(self, secrets: list[bytes]) -> None:
        for i, (body, server_endpoint) in sorted(self._captured.items()):
            leaked = [s for s in secrets if s and s in body]
            if leaked:
                self._resolve(i, "Succeeded", None, f"{len(leaked)} secret(s) readable on the wire")
            else:
                self._resolve(i, "Blocked", protection(self.actions[i].mtype, server_endpoint),
                              "captured bytes reveal no secret")

    def resolve_log_attack(self, i: int, detected: bool, index: int | None) -> None:
        if detected:
            self._resolve(i, "Blocked", "M4.0", f"chain verification failed at entry {index}")
        else:
            self._resolve(i, "Succeeded", None, "altered log chain verified")
