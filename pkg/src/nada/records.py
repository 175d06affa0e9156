"""Wire records exchanged between nodes, management, trackers and monitoring."""

from __future__ import annotations

from dataclasses import dataclass

from .core import (
    AppSlicePolicy,
    Certificate,
    ConfigureCommand,
    ContentLocation,
    LogEntry,
    Measurement,
    MetaData,
    ResourceId,
)


@dataclass(frozen=True, slots=True)
class SliceBundle:
    """A slice image as distributed: image bytes plus the customer's certified policy."""

    resource_id: ResourceId
    provider: str
    policy: AppSlicePolicy
    image: bytes


@dataclass(frozen=True, slots=True)
class ContentOffer:
    """Meta data as pushed by management; ``size`` tells the node how many chunks to fetch."""

    size: int
    meta: MetaData


@dataclass(frozen=True, slots=True)
class Registration:
    node_id: str
    boot_digest: bytes


@dataclass(frozen=True, slots=True)
class RegistrationAck:
    clock: int
    policies: tuple[AppSlicePolicy, ...]
    commands: tuple[ConfigureCommand, ...]


@dataclass(frozen=True, slots=True)
class Installed:
    node_id: str
    resource_id: ResourceId
    content_id: str


@dataclass(frozen=True, slots=True)
class LogBatch:
    node_id: str
    entries: tuple[LogEntry, ...]


@dataclass(frozen=True, slots=True)
class SliceLogRequest:
    requester: ResourceId
    subject: str
    metric: str


@dataclass(frozen=True, slots=True)
class AuthzRequest:
    requester: ResourceId
    trusted: bool
    subject: str
    metric: str


@dataclass(frozen=True, slots=True)
class AuthzDecision:
    effect: str
    rule_id: str | None
    obligations: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class SignedRequest:
    """End-user request as signed by the node's COMM/API."""

    node_id: str
    requester: ResourceId
    content_id: str
    request_id: int
    timestamp: int
    signature: bytes = b""


@dataclass(frozen=True, slots=True)
class DownloadDefinitionFile:
    request_digest: bytes
    content_id: str
    fingerprint: str
    requester_node: str
    requester: ResourceId
    candidates: tuple[ContentLocation, ...]
    tracker: str
    signature: bytes = b""


@dataclass(frozen=True, slots=True)
class ExportQuery:
    customer: str
    metric: str


@dataclass(frozen=True, slots=True)
class ExportRequest:
    requester: str
    credentials: Certificate
    query: ExportQuery
    nonce: bytes
    signature: bytes = b""


@dataclass(frozen=True, slots=True)
class ExportResponse:
    ephemeral: bytes
    nonce: bytes
    ciphertext: bytes


@dataclass(frozen=True, slots=True)
class MeasurementRows:
    rows: tuple[Measurement, ...]
