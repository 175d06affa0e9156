"""Identifiers, shared record types and the canonical byte encoding.

Encoding rules (the only serialization used for signatures, fingerprints and
wire bodies):

* a record is the concatenation of its fields in declaration order;
* each field is a 4-byte big-endian length prefix followed by the field bytes,
  except enum fields, which are a single tag byte, and optional fields, which
  are a presence byte followed by the field item when present;
* sequences are a 4-byte count followed by their items; sets are sorted by
  encoded item so the result does not depend on iteration order.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import types
import typing
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Union, get_args, get_origin

from .crypto import DIGEST_SIZE, hexdigest, verify_signature
from .errors import EmptyId, MalformedMessage, NadaError, NamespaceCollision

# ---------------------------------------------------------------------------
# Resource identifiers
# ---------------------------------------------------------------------------


class RidKind(enum.IntEnum):
    MANAGEMENT = 0
    APP_SLICE = 1


def _check_id(value: str | None, what: str) -> str:
    if not value:
        raise EmptyId(f"{what} must be non-empty")
    if not value.isascii():
        raise EmptyId(f"{what} must be ASCII: {value!r}")
    if "/" in value:
        raise EmptyId(f"{what} must not contain '/': {value!r}")
    return value


@dataclass(frozen=True, slots=True)
class ResourceId:
    """Either ``Management(node_management_id)`` or ``AppSlice(customer_id, app_id)``."""

    kind: RidKind
    first: str
    second: str | None = None

    def __post_init__(self):
        _check_id(self.first, "id")
        if self.kind is RidKind.MANAGEMENT:
            if self.second is not None:
                raise EmptyId("management resource id carries a nil second slot")
        else:
            _check_id(self.second, "app id")

    @classmethod
    def management(cls, node_management_id: str) -> "ResourceId":
        return cls(RidKind.MANAGEMENT, node_management_id, None)

    @classmethod
    def app_slice(cls, customer_id: str, app_id: str) -> "ResourceId":
        return cls(RidKind.APP_SLICE, customer_id, app_id)

    @property
    def is_management(self) -> bool:
        return self.kind is RidKind.MANAGEMENT

    @property
    def customer(self) -> str | None:
        return None if self.is_management else self.first

    def sort_key(self) -> tuple:
        return (int(self.kind), self.first, self.second or "")

    def __str__(self) -> str:
        return self.first if self.is_management else f"{self.first}/{self.second}"

    def __repr__(self) -> str:
        if self.is_management:
            return f"Management({self.first!r}, nil)"
        return f"AppSlice({self.first!r}, {self.second!r})"


class Namespace:
    """Tracks customer ids and node-management ids so the two never overlap."""

    def __init__(self):
        self.customers: set[str] = set()
        self.management: set[str] = set()

    def claim(self, rid: ResourceId) -> None:
        if rid.is_management:
            if rid.first in self.customers:
                raise NamespaceCollision(f"{rid.first!r} is already a customer id")
            self.management.add(rid.first)
        else:
            if rid.first in self.management:
                raise NamespaceCollision(f"{rid.first!r} is already a node management id")
            self.customers.add(rid.first)


def make_resource_id(kind: RidKind | str, *ids: str, namespace: Namespace | None = None) -> ResourceId:
    if isinstance(kind, str):
        kind = {"management": RidKind.MANAGEMENT, "app_slice": RidKind.APP_SLICE,
                "appslice": RidKind.APP_SLICE}[kind.lower()]
    if kind is RidKind.MANAGEMENT:
        if len(ids) != 1:
            raise EmptyId("management resource id takes exactly one id")
        rid = ResourceId.management(ids[0])
    else:
        if len(ids) != 2:
            raise EmptyId("app slice resource id takes (customer id, app id)")
        rid = ResourceId.app_slice(ids[0], ids[1])
    if namespace is not None:
        namespace.claim(rid)
    return rid


def parse_rid(text: str) -> ResourceId:
    """``"NM"`` -> Management, ``"C1/A1"`` -> AppSlice."""
    if "/" in text:
        customer, _, app = text.partition("/")
        return ResourceId.app_slice(customer, app)
    return ResourceId.management(text)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


class Domain(enum.IntEnum):
    ISP_DOMAIN = 0
    NADA_NETWORK = 1


class MetaKind(enum.IntEnum):
    NADA_CONTENT = 0
    MEASUREMENT_REQUEST = 1
    APP_CONTENT = 2


class Action(enum.IntEnum):
    ACTIVATE = 0
    DEACTIVATE = 1
    RESTART = 2


class RequestKind(enum.IntEnum):
    CONTENT = 0
    PLAY = 1
    STOP = 2


@dataclass(frozen=True, slots=True)
class ContentLocation:
    node: str
    domain: Domain


@dataclass(frozen=True, slots=True)
class MetaData:
    content_id: str
    fingerprint: str
    locations: tuple[ContentLocation, ...]
    tracker: str
    kind: MetaKind
    signature: bytes = b""

    def __post_init__(self):
        if len(self.fingerprint) != 2 * DIGEST_SIZE or self.fingerprint != self.fingerprint.lower():
            raise MalformedMessage("fingerprint must be lowercase hex of the project hash")


@dataclass(frozen=True, slots=True)
class AppSlicePolicy:
    owner: ResourceId
    allowed_overlay_peers: frozenset[ResourceId] = frozenset()
    allowed_slice_traffic: frozenset[ResourceId] = frozenset()
    mib_read_grants: frozenset[ResourceId] = frozenset()
    certified_by_isp: bytes = b""


@dataclass(frozen=True, slots=True)
class KeyHandle:
    """Reference to a sealed storage key; only the trust anchor can resolve it."""

    resource_id: ResourceId


@dataclass(frozen=True, slots=True)
class AppSliceConfiguration:
    resource_id: ResourceId
    store_key_handle: KeyHandle
    policy: AppSlicePolicy
    fingerprint: str


@dataclass(frozen=True, slots=True)
class ConfigureCommand:
    policy: AppSlicePolicy
    slice_fingerprint: str
    action: Action


@dataclass(frozen=True, slots=True)
class LogEntry:
    timestamp: int
    payload: bytes
    signer: str
    prev_digest: bytes
    signature: bytes = b""


@dataclass(frozen=True, slots=True)
class UserRequest:
    kind: RequestKind
    content_id: str
    request_id: int = 0


@dataclass(frozen=True, slots=True)
class UserResponse:
    status: str
    content_handle: str | None
    provider_identity: str


@dataclass(frozen=True, slots=True)
class Measurement:
    subject: str
    metric: str
    value: int
    unit: str
    at: int


@dataclass(frozen=True, slots=True)
class Certificate:
    """ISP-issued key record. Stands in for the PKI; ``keys`` maps a role to a public key."""

    subject: str
    role: str
    keys: tuple[tuple[str, bytes], ...]
    attributes: tuple[tuple[str, str], ...] = ()
    signature: bytes = b""

    def key(self, name: str) -> bytes:
        for k, v in self.keys:
            if k == name:
                return v
        raise KeyError(name)

    def attribute(self, name: str, default: str | None = None) -> str | None:
        return dict(self.attributes).get(name, default)


def verify_certificate(cert: Certificate, isp_public: bytes) -> bool:
    return verify_signature(isp_public, signing_bytes(cert), cert.signature)


def fingerprint(data: bytes) -> str:
    return hexdigest(data)


@dataclass(frozen=True)
class Mitigations:
    """Which catalog measures are switched off for an ablation run."""

    disabled: frozenset[str] = field(default_factory=frozenset)

    def on(self, mid: str) -> bool:
        return mid not in self.disabled


ALL_ON = Mitigations()

# ---------------------------------------------------------------------------
# Canonical encoding
# ---------------------------------------------------------------------------


def _lp(data: bytes) -> bytes:
    return len(data).to_bytes(4, "big") + data


@functools.lru_cache(maxsize=None)
def _hints(cls: type) -> dict[str, Any]:
    return typing.get_type_hints(cls)


@functools.lru_cache(maxsize=None)
def _fields(cls: type) -> tuple[tuple[str, Any], ...]:
    hints = _hints(cls)
    return tuple((f.name, hints[f.name]) for f in dataclasses.fields(cls))


@functools.lru_cache(maxsize=None)
def _optional_inner(tp: Any) -> Any | None:
    if get_origin(tp) in (Union, types.UnionType):
        args = [a for a in get_args(tp) if a is not type(None)]
        if len(args) == 1 and len(get_args(tp)) == 2:
            return args[0]
    return None


@functools.lru_cache(maxsize=None)
def _is_enum(tp: Any) -> bool:
    return isinstance(tp, type) and issubclass(tp, enum.Enum)


def _int8(value: Any) -> bytes:
    return int(value).to_bytes(8, "big", signed=True)


@functools.lru_cache(maxsize=None)
def _item_encoder(tp: Any) -> Callable[[Any], bytes]:
    """Encoder for one field: presence byte for optionals, raw tag for enums, else length-prefixed."""
    inner = _optional_inner(tp)
    if inner is not None:
        enc = _item_encoder(inner)
        return lambda v: b"\x00" if v is None else b"\x01" + enc(v)
    if _is_enum(tp):
        return lambda v: bytes([int(v)])
    body = _encoder(tp)
    return lambda v: _lp(body(v))


@functools.lru_cache(maxsize=None)
def _encoder(tp: Any) -> Callable[[Any], bytes]:
    origin = get_origin(tp)
    if origin is tuple:
        args = get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            each = _item_encoder(args[0])
            return lambda v: len(v).to_bytes(4, "big") + b"".join(each(x) for x in v)
        encs = tuple(_item_encoder(a) for a in args)
        return lambda v: b"".join(e(x) for e, x in zip(encs, v, strict=True))
    if origin in (frozenset, set):
        (arg,) = get_args(tp)
        each = _item_encoder(arg)

        def enc_set(v):
            items = sorted(each(x) for x in v)
            return len(items).to_bytes(4, "big") + b"".join(items)
        return enc_set
    if dataclasses.is_dataclass(tp):
        plan = tuple((name, _item_encoder(hint)) for name, hint in _fields(tp))
        return lambda v: b"".join(e(getattr(v, name)) for name, e in plan)
    if _is_enum(tp):
        return lambda v: bytes([int(v)])
    if tp is bytes:
        return bytes
    if tp is str:
        return lambda v: v.encode("utf-8")
    if tp is bool:
        return lambda v: b"\x01" if v else b"\x00"
    if tp is int:
        return _int8
    raise TypeError(f"no canonical encoding for {tp!r}")


def _item(value: Any, tp: Any) -> bytes:
    return _item_encoder(tp)(value)


def _encode(value: Any, tp: Any) -> bytes:
    if tp is Any:
        tp = type(value)
    return _encoder(tp)(value)


def canonical_encode(value: Any) -> bytes:
    """Deterministic, injective byte encoding of any core value."""
    if isinstance(value, (tuple, list)):
        return len(value).to_bytes(4, "big") + b"".join(_item(v, type(v)) for v in value)
    return _encode(value, type(value))


def signing_bytes(record: Any, signature_field: str | None = None) -> bytes:
    """Canonical encoding of every field except the signature (default: the last field)."""
    fields = dataclasses.fields(record)
    skip = signature_field or fields[-1].name
    return b"".join(_item_encoder(hint)(getattr(record, name)) for name, hint in _fields(type(record))
                    if name != skip)


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedMessage("truncated record")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def lp(self) -> bytes:
        return self.take(int.from_bytes(self.take(4), "big"))

    def done(self) -> None:
        if self.pos != len(self.data):
            raise MalformedMessage("trailing bytes in record")


def _read_item(r: _Reader, tp: Any) -> Any:
    inner = _optional_inner(tp)
    if inner is not None:
        flag = r.take(1)
        if flag == b"\x00":
            return None
        if flag != b"\x01":
            raise MalformedMessage("bad presence byte")
        return _read_item(r, inner)
    if _is_enum(tp):
        return tp(r.take(1)[0])
    return _decode(r.lp(), tp)


def _decode(data: bytes, tp: Any) -> Any:
    origin = get_origin(tp)
    if origin is tuple or origin in (frozenset, set):
        args = get_args(tp)
        r = _Reader(data)
        if origin is tuple and not (len(args) == 2 and args[1] is Ellipsis):
            out = tuple(_read_item(r, a) for a in args)
        else:
            count = int.from_bytes(r.take(4), "big")
            out = [_read_item(r, args[0]) for _ in range(count)]
            out = tuple(out) if origin is tuple else frozenset(out)
        r.done()
        return out
    if dataclasses.is_dataclass(tp):
        r = _Reader(data)
        kwargs = {name: _read_item(r, hint) for name, hint in _fields(tp)}
        r.done()
        return tp(**kwargs)
    if _is_enum(tp):
        if len(data) != 1:
            raise MalformedMessage("enum tag must be one byte")
        return tp(data[0])
    if tp is bytes:
        return bytes(data)
    if tp is str:
        return data.decode("utf-8")
    if tp is bool:
        if data not in (b"\x00", b"\x01"):
            raise MalformedMessage("bad bool")
        return data == b"\x01"
    if tp is int:
        if len(data) != 8:
            raise MalformedMessage("int must be 8 bytes")
        return int.from_bytes(data, "big", signed=True)
    raise TypeError(f"no canonical decoding for {tp!r}")


def canonical_decode(tp: Any, data: bytes) -> Any:
    """Inverse of :func:`canonical_encode` for records. Raises ``MalformedMessage``."""
    try:
        return _decode(data, tp)
    except MalformedMessage:
        raise
    except (ValueError, UnicodeDecodeError, TypeError, NadaError) as exc:
        raise MalformedMessage(f"cannot decode {getattr(tp, '__name__', tp)}: {exc}") from exc


def rid_set(items: Iterable[str | ResourceId]) -> frozenset[ResourceId]:
    return frozenset(parse_rid(i) if isinstance(i, str) else i for i in items)
