"""Exception hierarchy.

Every rejection raised by a security check carries the id of the mitigation
that produced it (``err.mitigation``), so the simulator can attribute a
blocked attack to a catalog entry without guessing.
"""

from __future__ import annotations


class NadaError(Exception):
    """Base class. ``mitigation`` names the catalog measure that raised it."""

    mitigation: str | None = None

    def __init__(self, message: str = "", *, mitigation: str | None = None, reason: str | None = None):
        super().__init__(message or self.__class__.__name__)
        if mitigation is not None:
            self.mitigation = mitigation
        self.reason = reason


# -- identifiers / configuration --------------------------------------------

class EmptyId(NadaError):
    pass


class NamespaceCollision(NadaError):
    mitigation = "M3"


class ConfigInvalid(NadaError):
    pass


class MalformedMessage(NadaError):
    pass


# -- trust anchor ------------------------------------------------------------

class IndexOutOfRange(NadaError):
    pass


class StateMismatch(NadaError):
    mitigation = "M6.2"


class IntegrityFailure(NadaError):
    mitigation = "M7.1"


class NotFound(NadaError):
    pass


class DuplicateKey(NadaError):
    mitigation = "M6.3"


class ClockUnsynchronized(NadaError):
    mitigation = "M4.0"


# -- authentication / overlay ------------------------------------------------

class AttestationFailure(NadaError):
    """Raised by either side of a handshake. ``side`` is who failed to prove itself."""

    mitigation = "M9"

    def __init__(self, side: str, reason: str, *, mitigation: str | None = None, detail: str = ""):
        super().__init__(f"{side}: {reason}{' (' + detail + ')' if detail else ''}",
                         mitigation=mitigation, reason=reason)
        self.side = side


class CertificateFailure(NadaError):
    mitigation = "M8"


class PolicyDenied(NadaError):
    mitigation = "M3"


class OverlayViolation(NadaError):
    mitigation = "M3"


class UnknownTarget(NadaError):
    mitigation = "M3"


class TicketExpired(NadaError):
    mitigation = "M3"


class ReplayDetected(NadaError):
    mitigation = "M3"


class SealMismatch(NadaError):
    mitigation = "M6.2"


class SessionError(NadaError):
    """AEAD failure or out-of-order frame on an established session."""

    mitigation = "M12"


class UnknownDomain(NadaError):
    pass


class FingerprintMismatch(NadaError):
    mitigation = "M5"


class NoLocationReachable(NadaError):
    mitigation = "M4.1"


class BadSignature(NadaError):
    mitigation = "M11"


class MessageDropped(NadaError):
    """The network swallowed a message; the waiting party notices the loss."""

    mitigation = "M4.1"

    def __init__(self, event_seq: int, mtype: str, src: str, dst: str):
        super().__init__(f"{mtype} {src}->{dst} lost (seq {event_seq})")
        self.event_seq = event_seq
        self.mtype = mtype
        self.src = src
        self.dst = dst


class ManagementUnreachable(NadaError):
    mitigation = "M4.1"


class FirewallDenied(NadaError):
    mitigation = "M2"


# -- node / management -------------------------------------------------------

class UncertifiedPolicy(NadaError):
    mitigation = "M1"


class UnknownSlice(NadaError):
    mitigation = "M19"


class StoreKeyExists(NadaError):
    mitigation = "M19"


class SliceInactive(NadaError):
    pass


class UnknownContent(NadaError):
    pass


class UnknownNode(NadaError):
    mitigation = "M9"


class RejectedPolicy(NadaError):
    mitigation = "M1"


class NoHolder(NadaError):
    pass


class AuthenticationFailure(NadaError):
    mitigation = "M8"


class Deny(NadaError):
    """Access decision was deny. ``reason`` is NoGrant, UntrustedSlice or a rule id."""

    mitigation = "M15"


# -- stride ------------------------------------------------------------------

class CyclicDependency(NadaError):
    pass


class ParseError(NadaError):
    pass


class SchemaError(NadaError):
    pass


class UnknownReference(NadaError):
    pass
