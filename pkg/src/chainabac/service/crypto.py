"""Ed25519 helpers; keys travel as hex strings of the raw 32-byte encodings."""

from __future__ import annotations

from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PrivateFormat, PublicFormat, NoEncryption

from ..errors import ConfigInvalid


def generate_keypair() -> tuple[str, str]:
    """Return (private_hex, public_hex)."""
    key = Ed25519PrivateKey.generate()
    priv = key.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
    pub = key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return priv.hex(), pub.hex()


def public_from_private(private_hex: str) -> str:
    return (load_private(private_hex).public_key()
            .public_bytes(Encoding.Raw, PublicFormat.Raw).hex())


@lru_cache(maxsize=64)
def load_private(private_hex: str) -> Ed25519PrivateKey:
    try:
        return Ed25519PrivateKey.from_private_bytes(bytes.fromhex(private_hex))
    except ValueError as e:
        raise ConfigInvalid(f"bad private key: {e}") from None


@lru_cache(maxsize=64)
def load_public(public_hex: str) -> Ed25519PublicKey:
    try:
        return Ed25519PublicKey.from_public_bytes(bytes.fromhex(public_hex))
    except ValueError as e:
        raise ConfigInvalid(f"bad public key: {e}") from None


def sign(private_hex: str, data: bytes) -> bytes:
    return load_private(private_hex).sign(data)


def verify(public_hex: str, data: bytes, signature: bytes) -> bool:
    try:
        load_public(public_hex).verify(signature, data)
        return True
    except (InvalidSignature, ValueError):
        return False
