"""Key pairs and the signature scheme contract.

The stack only needs a deterministic asymmetric scheme of at least 128-bit
security; Ed25519 is the single registered algorithm. ``algorithm_id`` is
recorded per credential so the scheme could be swapped without touching the
serialization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .canonical import from_hex, to_hex
from .errors import CasliteError, MalformedMessage

ED25519 = "ed25519"


@dataclass(frozen=True)
class KeyMaterial:
    """A public key plus, for the holder, the matching private part."""

    algorithm_id: str
    public_part: bytes
    private_part: bytes | None = None

    def public(self) -> "KeyMaterial":
        if self.private_part is None:
            return self
        return KeyMaterial(self.algorithm_id, self.public_part)


def generate_keys() -> KeyMaterial:
    private = Ed25519PrivateKey.generate()
    return KeyMaterial(
        algorithm_id=ED25519,
        public_part=private.public_key().public_bytes_raw(),
        private_part=private.private_bytes_raw(),
    )


def sign_payload(keys: KeyMaterial, payload: bytes) -> bytes:
    if keys.algorithm_id != ED25519:
        raise CasliteError(f"unsupported signature algorithm {keys.algorithm_id!r}")
    if keys.private_part is None:
        raise CasliteError("private key material required for signing")
    return Ed25519PrivateKey.from_private_bytes(keys.private_part).sign(payload)


def verify_payload(keys: KeyMaterial, signature: bytes, payload: bytes) -> bool:
    if keys.algorithm_id != ED25519:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(keys.public_part).verify(signature, payload)
        return True
    except (InvalidSignature, ValueError):
        return False


def key_to_map(keys: KeyMaterial, include_private: bool = False) -> dict[str, Any]:
    out = {"algorithm_id": keys.algorithm_id, "public_part": to_hex(keys.public_part)}
    if include_private and keys.private_part is not None:
        out["private_part"] = to_hex(keys.private_part)
    return out


def key_from_map(doc: Any) -> KeyMaterial:
    if not isinstance(doc, dict):
        raise MalformedMessage("key material must be a map")
    extra = set(doc) - {"algorithm_id", "public_part", "private_part"}
    if extra or not {"algorithm_id", "public_part"} <= set(doc):
        raise MalformedMessage("key material has wrong fields")
    if doc["algorithm_id"] != ED25519:
        raise MalformedMessage(f"unknown algorithm_id {doc['algorithm_id']!r}")
    public = from_hex(doc["public_part"])
    if len(public) != 32:
        raise MalformedMessage("ed25519 public key must be 32 bytes")
    private = from_hex(doc["private_part"]) if "private_part" in doc else None
    return KeyMaterial(ED25519, public, private)
