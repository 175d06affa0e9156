"""Cryptographic plumbing backed by the ``cryptography`` package.

Everything here is deterministic given an :class:`Rng`, which is what lets a
scenario replay byte-for-byte from its seed. Nothing in this module knows
about platform state; binding keys to PCR values is the trust anchor's job.
"""

from __future__ import annotations

import hashlib
import hmac
import random

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.serialization import Encoding, PrivateFormat, PublicFormat, NoEncryption

DIGEST_SIZE = 32
NONCE_SIZE = 12
TAG_SIZE = 16
ZERO_DIGEST = bytes(DIGEST_SIZE)


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hexdigest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def kdf(key: bytes, label: bytes) -> bytes:
    return hmac.new(key, label, hashlib.sha256).digest()


class Rng:
    """Seeded byte source. ``child`` derives an independent stream per label."""

    def __init__(self, seed: int | bytes | str):
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "big", signed=True)
        elif isinstance(seed, str):
            seed = seed.encode()
        self._seed = seed
        self._random = random.Random(int.from_bytes(digest(seed), "big"))

    def bytes(self, n: int) -> bytes:
        return self._random.randbytes(n)

    def randrange(self, n: int) -> int:
        return self._random.randrange(n)

    def shuffle(self, items: list) -> None:
        self._random.shuffle(items)

    def child(self, label: str) -> "Rng":
        return Rng(digest(self._seed + b"/" + label.encode()))


class SigningKey:
    """Ed25519 key pair created from 32 seed bytes."""

    def __init__(self, seed: bytes):
        self._key = Ed25519PrivateKey.from_private_bytes(seed)
        self.public = self._key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    @classmethod
    def generate(cls, rng: Rng) -> "SigningKey":
        return cls(rng.bytes(32))

    def sign(self, message: bytes) -> bytes:
        return self._key.sign(message)

    def private_bytes(self) -> bytes:
        return self._key.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())


def verify_signature(public: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


class BindingKey:
    """X25519 key pair used to transport secrets to a specific holder."""

    def __init__(self, seed: bytes):
        self._key = X25519PrivateKey.from_private_bytes(seed)
        self.public = self._key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    @classmethod
    def generate(cls, rng: Rng) -> "BindingKey":
        return cls(rng.bytes(32))

    def shared_secret(self, peer_public: bytes) -> bytes:
        return self._key.exchange(X25519PublicKey.from_public_bytes(peer_public))

    def private_bytes(self) -> bytes:
        return self._key.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())


def box_encrypt(recipient: bytes, plaintext: bytes, context: bytes, rng: Rng) -> tuple[bytes, bytes, bytes]:
    """Encrypt to an X25519 public key. Returns (ephemeral_public, nonce, ciphertext)."""
    eph = BindingKey.generate(rng)
    key = kdf(eph.shared_secret(recipient), b"box|" + context)
    nonce = rng.bytes(NONCE_SIZE)
    return eph.public, nonce, AESGCM(key).encrypt(nonce, plaintext, context)


def box_decrypt(holder: BindingKey, ephemeral: bytes, nonce: bytes, ciphertext: bytes, context: bytes) -> bytes:
    from .errors import IntegrityFailure

    try:
        key = kdf(holder.shared_secret(ephemeral), b"box|" + context)
        return AESGCM(key).decrypt(nonce, ciphertext, context)
    except (InvalidTag, ValueError) as exc:
        raise IntegrityFailure("box decryption failed") from exc


def aead_encrypt(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    return AESGCM(key).encrypt(nonce, plaintext, aad)


def aead_decrypt(key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    """Raises ``InvalidTag`` on failure; callers translate it into their own error."""
    return AESGCM(key).decrypt(nonce, ciphertext, aad)


def ctr_xor(key: bytes, nonce: bytes, data: bytes) -> bytes:
    """AES-CTR keystream XOR; ``nonce`` is 16 bytes."""
    enc = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()
    return enc.update(data) + enc.finalize()


__all__ = [
    "DIGEST_SIZE", "NONCE_SIZE", "TAG_SIZE", "ZERO_DIGEST", "InvalidTag",
    "digest", "hexdigest", "kdf", "Rng", "SigningKey", "verify_signature", "BindingKey",
    "box_encrypt", "box_decrypt", "aead_encrypt", "aead_decrypt", "ctr_xor",
]
