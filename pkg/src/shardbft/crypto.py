"""Pluggable signature schemes.

Two schemes share one interface:

* ``test_mac`` -- a deterministic keyed MAC (HMAC-SHA256). Verification
  recomputes the MAC, so the "public" key equals the secret key. This is the
  default for simulations: it is fast, reproducible, and unforgeable by
  construction as long as the harness never signs with a key on behalf of a
  node that does not own it.
* ``standard_signature`` -- Ed25519 via the ``cryptography`` package, for runs
  that want a real asymmetric scheme.

Key generation is deterministic in the seed so that whole simulations replay
bit-for-bit.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

SCHEME_TEST_MAC = "test_mac"
SCHEME_ED25519 = "standard_signature"

SCHEMES = (SCHEME_TEST_MAC, SCHEME_ED25519)

_SIG_LEN = {SCHEME_TEST_MAC: 32, SCHEME_ED25519: 64}


@dataclass(frozen=True, slots=True)
class Signature:
    scheme: str
    data: bytes


@dataclass(frozen=True, slots=True)
class KeyPair:
    scheme: str
    secret: bytes
    public: bytes


def keygen(seed: bytes, scheme: str = SCHEME_TEST_MAC) -> KeyPair:
    """Derive a keypair deterministically from a 32-byte seed."""
    if scheme == SCHEME_TEST_MAC:
        secret = hashlib.sha256(b"mac-key" + seed).digest()
        return KeyPair(scheme, secret, secret)
    if scheme == SCHEME_ED25519:
        raw = hashlib.sha256(b"ed25519-key" + seed).digest()
        sk = Ed25519PrivateKey.from_private_bytes(raw)
        pub = sk.public_key().public_bytes_raw()
        return KeyPair(scheme, raw, pub)
    raise ValueError(f"unknown signature scheme: {scheme!r}")


def sign(key: KeyPair, message: bytes) -> Signature:
    if key.scheme == SCHEME_TEST_MAC:
        return Signature(key.scheme, hmac.new(key.secret, message, hashlib.sha256).digest())
    if key.scheme == SCHEME_ED25519:
        sk = Ed25519PrivateKey.from_private_bytes(key.secret)
        return Signature(key.scheme, sk.sign(message))
    raise ValueError(f"unknown signature scheme: {key.scheme!r}")


def verify(public: bytes, message: bytes, sig: Signature) -> bool:
    """True iff ``sig`` is a valid signature over ``message`` under ``public``.

    Malformed signature bytes yield False, never an exception.
    """
    expected = _SIG_LEN.get(sig.scheme)
    if expected is None or len(sig.data) != expected:
        return False
    if sig.scheme == SCHEME_TEST_MAC:
        want = hmac.new(public, message, hashlib.sha256).digest()
        return hmac.compare_digest(want, sig.data)
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(sig.data, message)
        return True
    except (InvalidSignature, ValueError):
        return False
