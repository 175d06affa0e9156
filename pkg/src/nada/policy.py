"""Attribute-based access decisions with first-applicable combining.

One engine, two deployment sites: the node-local PDP (rules derived from the
certified slice policies) and the monitoring server's exporter (rules managed
by the policy manager).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

WILDCARD = "*"
PERMIT = "permit"
DENY = "deny"


@dataclass(frozen=True, slots=True)
class Rule:
    rule_id: str
    subject: tuple[tuple[str, str], ...] = ()
    resource: tuple[tuple[str, str], ...] = ()
    action: str = "read"
    effect: str = PERMIT
    obligations: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Rule":
        effect = str(d.get("effect", PERMIT)).lower()
        if effect not in (PERMIT, DENY):
            raise ValueError(f"rule {d.get('id')!r}: effect must be permit or deny")
        return cls(
            rule_id=str(d["id"]),
            subject=tuple(sorted((str(k), str(v)) for k, v in dict(d.get("subject") or {}).items())),
            resource=tuple(sorted((str(k), str(v)) for k, v in dict(d.get("resource") or {}).items())),
            action=str(d.get("action", "read")),
            effect=effect,
            obligations=tuple(str(o) for o in d.get("obligations") or ()),
        )

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.rule_id, "subject": dict(self.subject), "resource": dict(self.resource),
                "action": self.action, "effect": self.effect, "obligations": list(self.obligations)}


@dataclass(frozen=True, slots=True)
class Request:
    subject: Mapping[str, str]
    resource: Mapping[str, str]
    action: str = "read"


@dataclass(frozen=True, slots=True)
class Decision:
    effect: str
    rule_id: str | None = None
    obligations: tuple[str, ...] = field(default=())

    @property
    def permitted(self) -> bool:
        return self.effect == PERMIT


DEFAULT_DENY = Decision(DENY, None, ())


def _attrs_match(required: tuple[tuple[str, str], ...], given: Mapping[str, str]) -> bool:
    return all(v == WILDCARD or given.get(k) == v for k, v in required)


def applies(rule: Rule, request: Request) -> bool:
    return ((rule.action == WILDCARD or rule.action == request.action)
            and _attrs_match(rule.subject, request.subject)
            and _attrs_match(rule.resource, request.resource))


def pdp_evaluate(rules: Iterable[Rule], request: Request) -> Decision:
    """The first rule that applies decides; nothing applies means deny."""
    for rule in rules:
        if applies(rule, request):
            return Decision(rule.effect, rule.rule_id, rule.obligations)
    return DEFAULT_DENY
