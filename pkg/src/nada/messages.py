"""Wire message types and which measure keeps each one confidential."""

from __future__ import annotations

# Frames carried inside an established session; confidentiality comes from
# the session key (management link or node-to-node link).
SESSION_FRAMES = frozenset({
    "REGISTER", "CONFIGURE", "MEASURE_LOG", "TICKET_REQUEST", "TICKET", "INSTALLED",
    "CONTENT_REQUEST", "CONTENT_CHUNK", "LOG_RESPONSE", "CONTENT_PUSH", "NODE_ACCEPT",
})

# Plaintext on the wire by design; they carry nothing secret, which is the
# "do not put secrets in unencrypted entities" rule.
PUBLIC = frozenset({
    "AUTH_INIT", "AUTH_CHALLENGE", "AUTH_QUOTE", "META_DATA", "NODE_CHALLENGE", "NODE_QUOTE",
    "LOG_REQUEST", "EXPORT_REQUEST", "SIGNED_REQUEST", "DD_FILE",
})

# Links between a slice (or the local user) and the node's privileged domain.
INTRA_NODE = frozenset({
    "USER_REQUEST", "APP_USER_REQUEST", "APP_USER_RESPONSE", "NADA_LOG", "APP_LOG",
    "SLICE_LOG_REQUEST", "SLICE_LOG_RESPONSE", "EU_REQUEST", "SLICE_CONTENT_REQUEST",
    "SLICE_CONTENT",
})

# Privileged-domain internals; never cross a trust boundary.
INTERNAL = frozenset({"AUTHZ_REQUEST", "AUTHZ_DECISION", "COMM_SIGNED_REQUEST", "STORE_CONTENT"})

FIXED_PROTECTION = {
    "AUTH_KEY": "M10",        # key material bound to the attested node state
    "TICKET_PRESENT": "M3",   # ticket key material bound to the target's state
    "EXPORT_RESPONSE": "M15", # encrypted to the authorized requester only
}

ALL_TYPES = SESSION_FRAMES | PUBLIC | INTRA_NODE | INTERNAL | frozenset(FIXED_PROTECTION)


def protection(mtype: str, server_endpoint: bool) -> str | None:
    """Mitigation that prevents disclosure of a message's contents to a wire observer."""
    if mtype in FIXED_PROTECTION:
        return FIXED_PROTECTION[mtype]
    if mtype in SESSION_FRAMES:
        return "M12" if server_endpoint else "M13"
    if mtype in PUBLIC:
        return "M18"
    if mtype in INTRA_NODE:
        return "M2"
    return None
