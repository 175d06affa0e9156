"""Simulated per-node trust anchor.

Measured boot into eight platform configuration registers, signed quotes,
state-bound sealing, storage-key derivation, and a signed, hash-chained log.
Register layout: 0 firmware, 1 node-management image, 2 slice images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import KeyHandle, LogEntry, ResourceId, canonical_encode, signing_bytes
from .crypto import (
    DIGEST_SIZE,
    NONCE_SIZE,
    TAG_SIZE,
    ZERO_DIGEST,
    BindingKey,
    InvalidTag,
    Rng,
    SigningKey,
    aead_decrypt,
    aead_encrypt,
    box_decrypt,
    box_encrypt,
    digest,
    kdf,
    verify_signature,
)
from .errors import (
    ClockUnsynchronized,
    DuplicateKey,
    IndexOutOfRange,
    IntegrityFailure,
    NotFound,
    SealMismatch,
    StateMismatch,
)

PCR_COUNT = 8
PCR_FIRMWARE = 0
PCR_NODE_MANAGEMENT = 1
PCR_SLICES = 2

ZERO_PCRS: tuple[bytes, ...] = (ZERO_DIGEST,) * PCR_COUNT


@dataclass(frozen=True, slots=True)
class BootLogEntry:
    index: int
    component: str
    measurement: bytes


@dataclass(frozen=True, slots=True)
class PlatformState:
    pcrs: tuple[bytes, ...] = ZERO_PCRS
    boot_log: tuple[BootLogEntry, ...] = ()


def measure_and_extend(state: PlatformState, index: int, component: str, code: bytes) -> PlatformState:
    """``pcrs[index] := H(pcrs[index] || H(code))``; the boot log records the measurement."""
    if not 0 <= index < PCR_COUNT:
        raise IndexOutOfRange(f"pcr index {index}")
    measurement = digest(code)
    pcrs = list(state.pcrs)
    pcrs[index] = digest(pcrs[index] + measurement)
    return PlatformState(tuple(pcrs), state.boot_log + (BootLogEntry(index, component, measurement),))


def replay_boot_log(boot_log: tuple[BootLogEntry, ...] | list[BootLogEntry]) -> tuple[bytes, ...]:
    pcrs = list(ZERO_PCRS)
    for entry in boot_log:
        pcrs[entry.index] = digest(pcrs[entry.index] + entry.measurement)
    return tuple(pcrs)


def pcr_composite(pcrs: tuple[bytes, ...]) -> bytes:
    return digest(b"".join(pcrs))


@dataclass(frozen=True, slots=True)
class Quote:
    pcrs: tuple[bytes, ...]
    nonce: bytes
    signature: bytes = b""


@dataclass(frozen=True, slots=True)
class Verdict:
    accepted: bool
    reason: str | None = None
    index: int | None = None

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = Verdict(True)


def verify_quote(q: Quote, nonce: bytes, expected_pcrs: tuple[bytes, ...], attestation_public: bytes) -> Verdict:
    if not verify_signature(attestation_public, signing_bytes(q), q.signature):
        return Verdict(False, "BadSignature")
    if q.nonce != nonce:
        return Verdict(False, "Freshness")
    if tuple(q.pcrs) != tuple(expected_pcrs):
        return Verdict(False, "StateMismatch")
    return ACCEPT


@dataclass(frozen=True, slots=True)
class SealedBlob:
    bound_pcrs: tuple[bytes, ...]
    nonce: bytes
    ciphertext: bytes
    tag: bytes


@dataclass(frozen=True, slots=True)
class BoundBlob:
    """Secret encrypted to a holder's binding key, usable only in ``bound_pcrs``."""

    bound_pcrs: tuple[bytes, ...]
    ephemeral: bytes
    nonce: bytes
    ciphertext: bytes


def bind_to(binding_public: bytes, pcrs: tuple[bytes, ...], payload: bytes, rng: Rng) -> BoundBlob:
    eph, nonce, ct = box_encrypt(binding_public, payload, b"bind|" + pcr_composite(pcrs), rng)
    return BoundBlob(tuple(pcrs), eph, nonce, ct)


@dataclass
class TrustedDataStore:
    """Sealed key/value store. There is no method that writes plaintext."""

    entries: dict[tuple[ResourceId, str], SealedBlob] = field(default_factory=dict)

    def put(self, rid: ResourceId, slot: str, blob: SealedBlob) -> None:
        if not isinstance(blob, SealedBlob):
            raise TypeError("trusted data store only holds sealed blobs")
        self.entries[(rid, slot)] = blob

    def get(self, rid: ResourceId, slot: str) -> SealedBlob:
        try:
            return self.entries[(rid, slot)]
        except KeyError:
            raise NotFound(f"{rid}:{slot}") from None

    def has(self, rid: ResourceId, slot: str) -> bool:
        return (rid, slot) in self.entries

    def dump(self) -> bytes:
        """Serialized at-rest image, as an attacker with disk access would see it."""
        rows = sorted(self.entries.items(), key=lambda kv: (kv[0][0].sort_key(), kv[0][1]))
        return b"".join(canonical_encode((rid, slot, blob)) for (rid, slot), blob in rows)


class TrustAnchor:
    """Owns the node's keys; private material never leaves this object."""

    def __init__(self, owner: str, rng: Rng):
        self.owner = owner
        self._rng = rng
        self._srk = rng.bytes(32)
        self._ak = SigningKey.generate(rng)
        self._log_key = SigningKey.generate(rng)
        self._bind = BindingKey.generate(rng)
        self.platform = PlatformState()
        self.clock_synchronized = False
        self.log: list[LogEntry] = []
        self._log_head = ZERO_DIGEST

    # -- identity ----------------------------------------------------------

    def public_keys(self) -> tuple[tuple[str, bytes], ...]:
        return (("ak", self._ak.public), ("bind", self._bind.public), ("log", self._log_key.public))

    @property
    def attestation_public(self) -> bytes:
        return self._ak.public

    @property
    def log_public(self) -> bytes:
        return self._log_key.public

    @property
    def binding_public(self) -> bytes:
        return self._bind.public

    def private_material(self) -> list[bytes]:
        return [self._srk, self._ak.private_bytes(), self._log_key.private_bytes(), self._bind.private_bytes()]

    # -- measured boot -----------------------------------------------------

    def reset(self) -> None:
        """Power cycle: registers back to zero, clock must be resynchronized."""
        self.platform = PlatformState()
        self.clock_synchronized = False

    def extend(self, index: int, component: str, code: bytes) -> PlatformState:
        self.platform = measure_and_extend(self.platform, index, component, code)
        return self.platform

    def quote(self, nonce: bytes) -> Quote:
        q = Quote(self.platform.pcrs, nonce)
        return Quote(q.pcrs, q.nonce, self._ak.sign(signing_bytes(q)))

    # -- sealing -----------------------------------------------------------

    def _seal_key(self, pcrs: tuple[bytes, ...]) -> bytes:
        return kdf(self._srk, b"seal|" + pcr_composite(pcrs))

    def seal(self, payload: bytes, state: PlatformState | None = None) -> SealedBlob:
        pcrs = (state or self.platform).pcrs
        nonce = self._rng.bytes(NONCE_SIZE)
        out = aead_encrypt(self._seal_key(pcrs), nonce, payload, pcr_composite(pcrs))
        return SealedBlob(pcrs, nonce, out[:-TAG_SIZE], out[-TAG_SIZE:])

    def unseal(self, blob: SealedBlob) -> bytes:
        current = self.platform.pcrs
        if tuple(blob.bound_pcrs) != current:
            raise StateMismatch("platform state differs from sealing state")
        try:
            return aead_decrypt(self._seal_key(current), blob.nonce, blob.ciphertext + blob.tag,
                                pcr_composite(current))
        except (InvalidTag, ValueError) as exc:
            raise IntegrityFailure("sealed blob failed its integrity check") from exc

    def reseal(self, tds: TrustedDataStore, future: PlatformState) -> None:
        """Move every entry to a state the platform is about to enter."""
        for key, blob in list(tds.entries.items()):
            tds.entries[key] = self.seal(self.unseal(blob), future)

    def unbind(self, blob: BoundBlob) -> bytes:
        if tuple(blob.bound_pcrs) != self.platform.pcrs:
            raise SealMismatch("key material is bound to a different platform state")
        return box_decrypt(self._bind, blob.ephemeral, blob.nonce, blob.ciphertext,
                           b"bind|" + pcr_composite(blob.bound_pcrs))

    # -- storage keys --------------------------------------------------------

    def compute_storage_key(self, tds: TrustedDataStore, rid: ResourceId) -> KeyHandle:
        if tds.has(rid, "store_key"):
            raise DuplicateKey(f"storage key for {rid} already exists")
        tds.put(rid, "store_key", self.seal(self._rng.bytes(32)))
        return KeyHandle(rid)

    def get_storage_key(self, tds: TrustedDataStore, rid: ResourceId) -> bytes:
        return self.unseal(tds.get(rid, "store_key"))

    # -- logging -------------------------------------------------------------

    def synchronize_clock(self) -> None:
        self.clock_synchronized = True

    def sign(self, message: bytes) -> bytes:
        return self._log_key.sign(message)

    def sign_log(self, payload: bytes, clock: int) -> LogEntry:
        if not self.clock_synchronized:
            raise ClockUnsynchronized("log signing needs a synchronized clock")
        entry = LogEntry(clock, payload, self.owner, self._log_head)
        entry = LogEntry(clock, payload, self.owner, self._log_head, self._log_key.sign(signing_bytes(entry)))
        self._log_head = entry_digest(entry)
        self.log.append(entry)
        return entry


def entry_digest(entry: LogEntry) -> bytes:
    return digest(canonical_encode(entry))


def verify_log_chain(entries: list[LogEntry], signer_public: bytes) -> Verdict:
    """Accept iff every signature verifies and every back-link matches; else the first bad index."""
    prev = ZERO_DIGEST
    for i, entry in enumerate(entries):
        if entry.prev_digest != prev:
            return Verdict(False, "ChainBroken", i)
        if not verify_signature(signer_public, signing_bytes(entry), entry.signature):
            return Verdict(False, "BadSignature", i)
        prev = entry_digest(entry)
    return ACCEPT


assert DIGEST_SIZE == 32
