"""Secrets, hash locks, signatures and the per-path secret chain.

Byte conventions used everywhere in the package:

* secrets and offsets are 32 raw bytes;
* amounts are encoded as unsigned 64-bit big-endian integers;
* a dual-input lock hashes the concatenation ``s2 || z2``.
"""

from __future__ import annotations

import hashlib
import random
import secrets as _secrets
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

SECRET_BYTES = 32
AMOUNT_MAX = 2**64 - 1

RngLike = Union[random.Random, int, None]


class InvalidHopCount(ValueError):
    pass


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _check_secret(value: bytes, name: str = "secret") -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != SECRET_BYTES:
        raise ValueError(f"{name} must be exactly {SECRET_BYTES} bytes")
    return bytes(value)


def xor256(a: bytes, b: bytes) -> bytes:
    a, b = _check_secret(a), _check_secret(b)
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(SECRET_BYTES, "big")


def and256(a: bytes, b: bytes) -> bytes:
    a, b = _check_secret(a), _check_secret(b)
    return (int.from_bytes(a, "big") & int.from_bytes(b, "big")).to_bytes(SECRET_BYTES, "big")


def encode_amount(amount: int) -> bytes:
    if not 0 <= amount <= AMOUNT_MAX:
        raise ValueError(f"amount {amount} outside u64 range")
    return int(amount).to_bytes(8, "big")


def primary_lock(s1: bytes) -> bytes:
    """h(s) for a primary secret."""
    return sha256(_check_secret(s1))


def secondary_lock(s2: bytes, z2: bytes) -> bytes:
    """h(s2, z2): SHA-256 over the two 32-byte fields in that order."""
    return sha256(_check_secret(s2, "s2") + _check_secret(z2, "z2"))


def amount_digest(lock: bytes, amount: int) -> bytes:
    """h(h(s), v): binds a confirmed amount to the lock it will be unlocked under."""
    if len(lock) != 32:
        raise ValueError("lock digest must be 32 bytes")
    return sha256(bytes(lock) + encode_amount(amount))


def _as_rng(rng: RngLike) -> Optional[random.Random]:
    if rng is None or isinstance(rng, random.Random):
        return rng
    return random.Random(rng)


def random_secret(rng: RngLike = None) -> bytes:
    """Uniform 256-bit value. ``None`` draws from the OS CSPRNG."""
    r = _as_rng(rng)
    if r is None:
        return _secrets.token_bytes(SECRET_BYTES)
    return r.getrandbits(256).to_bytes(SECRET_BYTES, "big")


# ---------------------------------------------------------------------------
# Signatures (Ed25519: deterministic, EUF-CMA)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeyPair:
    pk: bytes
    vk: Ed25519PrivateKey

    @classmethod
    def generate(cls, rng: RngLike = None) -> "KeyPair":
        return cls.from_seed(random_secret(rng))

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        vk = Ed25519PrivateKey.from_private_bytes(_check_secret(seed, "seed"))
        pk = vk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return cls(pk=pk, vk=vk)

    def sign(self, message: bytes) -> bytes:
        return sign(self.vk, message)


def sign(vk: Ed25519PrivateKey, message: bytes) -> bytes:
    return vk.sign(bytes(message))


def verify_sig(pk: bytes, message: bytes, signature: bytes) -> bool:
    """Never raises: malformed keys or signatures simply fail verification."""
    try:
        Ed25519PublicKey.from_public_bytes(bytes(pk)).verify(bytes(signature), bytes(message))
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


# ---------------------------------------------------------------------------
# Secret chain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LockSet:
    """Per-chain locks. ``primary[i]`` guards chain i; ``secondary[i]`` exists for i < n."""

    primary: tuple[bytes, ...]
    secondary: tuple[bytes, ...]

    def digests(self) -> list[bytes]:
        return list(self.primary) + list(self.secondary)

    def for_chain(self, i: int) -> tuple[bytes, Optional[bytes]]:
        sec = self.secondary[i] if i < len(self.secondary) else None
        return self.primary[i], sec


@dataclass(frozen=True)
class SecretChain:
    """Secrets for a path over ``n + 1`` chains (0-based chain indices).

    ``s1[i]`` is the primary secret of chain i, ``z2[i]`` and ``s2[i]`` belong
    to hop i (chains i and i+1):

        s1[i+1] = s1[i] ^ z2[i]
        s2[i]   = s1[i] & s1[i+1]
    """

    n: int
    s1: tuple[bytes, ...]
    z2: tuple[bytes, ...]
    s2: tuple[bytes, ...]

    def violations(self) -> list[str]:
        out = []
        if len(self.s1) != self.n + 1 or len(self.z2) != self.n or len(self.s2) != self.n:
            return ["shape"]
        for i in range(self.n):
            if self.s1[i + 1] != xor256(self.s1[i], self.z2[i]):
                out.append(f"xor[{i}]")
            if self.s2[i] != and256(self.s1[i], self.s1[i + 1]):
                out.append(f"and[{i}]")
        return out

    def is_valid(self) -> bool:
        return not self.violations()


def derive_secret_chain(
    n: int,
    entropy: RngLike = None,
    *,
    s11: Optional[bytes] = None,
    z2: Optional[Sequence[bytes]] = None,
) -> SecretChain:
    """Sample the first primary secret and every offset, derive the rest.

    ``s11`` and ``z2`` force the sampled values (used by tests and fixtures).
    """
    if not isinstance(n, int) or n < 1:
        raise InvalidHopCount(f"hop count must be >= 1, got {n!r}")
    rng = _as_rng(entropy)
    first = _check_secret(s11, "s11") if s11 is not None else random_secret(rng)
    if z2 is not None:
        if len(z2) != n:
            raise ValueError(f"expected {n} offsets, got {len(z2)}")
        offsets = tuple(_check_secret(z, "z2") for z in z2)
    else:
        offsets = tuple(random_secret(rng) for _ in range(n))
    s1 = [first]
    for i in range(n):
        s1.append(xor256(s1[i], offsets[i]))
    s2 = tuple(and256(s1[i], s1[i + 1]) for i in range(n))
    return SecretChain(n=n, s1=tuple(s1), z2=offsets, s2=s2)


def compute_locks(chain: SecretChain) -> LockSet:
    return LockSet(
        primary=tuple(primary_lock(s) for s in chain.s1),
        secondary=tuple(secondary_lock(chain.s2[i], chain.z2[i]) for i in range(chain.n)),
    )
