"""Constraint systems for the prepare/unlock circuits and a pluggable proof backend.

The shipped :class:`TransparentBackend` is a *reference* backend: a proof
carries the witness in the clear and verification re-evaluates every
constraint. It is sound and complete but provides NO zero-knowledge. The
``setup/prove/verify`` surface matches a SNARK so a hiding backend can be
swapped in without touching callers.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping, Protocol

from .crypto import (
    AMOUNT_MAX,
    and256,
    amount_digest,
    primary_lock,
    secondary_lock,
    sha256,
    verify_sig,
    xor256,
)

SCHEMA_VERSION = "ccnlab.circuits/v1"


class CircuitKind(str, enum.Enum):
    PREPARE_ENDPOINT = "PrepareEndpoint"
    PREPARE_INTERMEDIARY = "PrepareIntermediary"
    UNLOCK_TERMINAL = "UnlockTerminal"
    UNLOCK_INTERMEDIARY = "UnlockIntermediary"


class ProofError(Exception):
    pass


class MalformedStatement(ProofError):
    pass


class UnsatisfiedConstraint(ProofError):
    def __init__(self, constraint: str):
        super().__init__(f"constraint {constraint!r} is not satisfied")
        self.constraint = constraint


# field type tags: "b32" 32-byte value, "sig" 64-byte signature, "u64" amount,
# "int" small integer, "map:b32" {index: 32-byte value}, "seq:b32" list of 32-byte values
_PREPARE_PRIVATE = {"s1": "seq:b32", "z2": "seq:b32", "s2": "seq:b32"}
_UNLOCK_PUBLIC = {"lock1": "b32", "s1": "b32", "amount": "u64", "sig": "sig", "pk": "b32"}

SCHEMAS: Mapping[CircuitKind, tuple[dict[str, str], dict[str, str]]] = {
    CircuitKind.PREPARE_ENDPOINT: (
        {"n": "int", "lock1": "map:b32", "lock2": "map:b32"},
        _PREPARE_PRIVATE,
    ),
    CircuitKind.PREPARE_INTERMEDIARY: (
        {"n": "int", "lock1": "map:b32", "lock2": "map:b32", "z2": "map:b32", "s2": "map:b32"},
        _PREPARE_PRIVATE,
    ),
    CircuitKind.UNLOCK_TERMINAL: (_UNLOCK_PUBLIC, {}),
    CircuitKind.UNLOCK_INTERMEDIARY: (_UNLOCK_PUBLIC, {"s1_next": "b32", "z2": "b32"}),
}


def _jsonable(value: Any) -> Any:
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, enum.Enum):
        return value.value
    return value


def canonical_json(value: Any) -> str:
    return json.dumps(_jsonable(value), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class Statement:
    kind: CircuitKind
    public: Mapping[str, Any]

    def canonical(self) -> str:
        return canonical_json({"kind": self.kind, "public": self.public, "v": SCHEMA_VERSION})

    def digest(self) -> bytes:
        return sha256(self.canonical().encode())


@dataclass(frozen=True)
class Witness:
    private: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class CircuitKeys:
    kind: CircuitKind
    circuit_id: bytes


@dataclass(frozen=True)
class Proof:
    """Transparent attestation. ``witness`` is NOT hidden."""

    kind: CircuitKind
    circuit_id: bytes
    statement_digest: bytes
    witness: Witness
    backend: str = "transparent"


# ---------------------------------------------------------------------------
# Schema checking
# ---------------------------------------------------------------------------


def _check_field(name: str, tag: str, value: Any, n: int | None) -> None:
    def b32(v: Any) -> bool:
        return isinstance(v, (bytes, bytearray)) and len(v) == 32

    ok = True
    if tag == "b32":
        ok = b32(value)
    elif tag == "sig":
        ok = isinstance(value, (bytes, bytearray)) and len(value) == 64
    elif tag == "u64":
        ok = isinstance(value, int) and not isinstance(value, bool) and 0 <= value <= AMOUNT_MAX
    elif tag == "int":
        ok = isinstance(value, int) and not isinstance(value, bool) and value >= 1
    elif tag == "map:b32":
        ok = isinstance(value, Mapping) and all(
            isinstance(k, int) and k >= 0 and b32(v) for k, v in value.items()
        )
    elif tag == "seq:b32":
        ok = isinstance(value, (list, tuple)) and all(b32(v) for v in value)
    if not ok:
        raise MalformedStatement(f"field {name!r} does not match type {tag}")


def _check_schema(kind: CircuitKind, statement: Statement, witness: Witness | None) -> None:
    if kind not in SCHEMAS:
        raise MalformedStatement(f"unknown circuit kind {kind!r}")
    if statement.kind != kind:
        raise MalformedStatement(f"statement is for {statement.kind}, not {kind}")
    public_schema, private_schema = SCHEMAS[kind]
    if set(statement.public) != set(public_schema):
        raise MalformedStatement(
            f"{kind.value} public fields must be {sorted(public_schema)}, got {sorted(statement.public)}"
        )
    n = statement.public.get("n")
    for name, tag in public_schema.items():
        _check_field(name, tag, statement.public[name], n)
    if kind in (CircuitKind.PREPARE_ENDPOINT, CircuitKind.PREPARE_INTERMEDIARY):
        pub = statement.public
        if not pub["lock1"]:
            raise MalformedStatement("at least one primary lock must be public")
        if any(i > n for i in pub["lock1"]) or any(i >= n for i in pub["lock2"]):
            raise MalformedStatement("lock index outside the path")
        if kind is CircuitKind.PREPARE_INTERMEDIARY:
            if not pub["z2"]:
                raise MalformedStatement("intermediary statement must disclose an offset")
            if any(i >= n for i in pub["z2"]) or any(i >= n for i in pub["s2"]):
                raise MalformedStatement("offset index outside the path")
    if witness is None:
        return
    if set(witness.private) != set(private_schema):
        raise MalformedStatement(
            f"{kind.value} private fields must be {sorted(private_schema)}, got {sorted(witness.private)}"
        )
    for name, tag in private_schema.items():
        _check_field(name, tag, witness.private[name], n)
    if private_schema is _PREPARE_PRIVATE:
        w = witness.private
        if len(w["s1"]) != n + 1 or len(w["z2"]) != n or len(w["s2"]) != n:
            raise MalformedStatement("witness length does not match hop count")


# ---------------------------------------------------------------------------
# Constraint systems
# ---------------------------------------------------------------------------

Constraint = tuple[str, Callable[[], bool]]


def _prepare_constraints(pub: Mapping[str, Any], w: Mapping[str, Any]) -> Iterator[Constraint]:
    n = pub["n"]
    s1, z2, s2 = w["s1"], w["z2"], w["s2"]
    for i in range(n):
        # s_i = s_{i+1} xor z_i, evaluated in the general-circuit direction
        yield f"xor[{i}]", lambda i=i: s1[i] == xor256(s1[i + 1], z2[i])
        yield f"and[{i}]", lambda i=i: s2[i] == and256(s1[i], s1[i + 1])
    for i, lock in sorted(pub["lock1"].items()):
        yield f"hash1[{i}]", lambda i=i, lock=lock: primary_lock(s1[i]) == lock
    for i, lock in sorted(pub["lock2"].items()):
        yield f"hash2[{i}]", lambda i=i, lock=lock: secondary_lock(s2[i], z2[i]) == lock
    for i, value in sorted(pub.get("z2", {}).items()):
        yield f"eq_z2[{i}]", lambda i=i, value=value: z2[i] == value
    for i, value in sorted(pub.get("s2", {}).items()):
        yield f"eq_s2[{i}]", lambda i=i, value=value: s2[i] == value


def _unlock_constraints(
    kind: CircuitKind, pub: Mapping[str, Any], w: Mapping[str, Any]
) -> Iterator[Constraint]:
    if kind is CircuitKind.UNLOCK_INTERMEDIARY:
        yield "xor", lambda: pub["s1"] == xor256(w["s1_next"], w["z2"])
    yield "hash1", lambda: primary_lock(pub["s1"]) == pub["lock1"]
    yield "vsig", lambda: verify_sig(
        pub["pk"], amount_digest(pub["lock1"], pub["amount"]), pub["sig"]
    )


def constraints(kind: CircuitKind, statement: Statement, witness: Witness) -> Iterator[Constraint]:
    if kind in (CircuitKind.PREPARE_ENDPOINT, CircuitKind.PREPARE_INTERMEDIARY):
        return _prepare_constraints(statement.public, witness.private)
    return _unlock_constraints(kind, statement.public, witness.private)


def first_violation(kind: CircuitKind, statement: Statement, witness: Witness) -> str | None:
    for name, check in constraints(kind, statement, witness):
        if not check():
            return name
    return None


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class ProofBackend(Protocol):
    name: str

    def setup(self, kind: CircuitKind) -> CircuitKeys: ...

    def prove(self, keys: CircuitKeys, statement: Statement, witness: Witness) -> Proof: ...

    def verify(self, keys: CircuitKeys, statement: Statement, proof: Proof) -> bool: ...


class TransparentBackend:
    """Evaluates constraints directly. Sound and complete; not zero-knowledge."""

    name = "transparent"

    def setup(self, kind: CircuitKind) -> CircuitKeys:
        kind = CircuitKind(kind)
        return CircuitKeys(kind, sha256(f"{SCHEMA_VERSION}:{kind.value}".encode()))

    def prove(self, keys: CircuitKeys, statement: Statement, witness: Witness) -> Proof:
        _check_schema(keys.kind, statement, witness)
        failed = first_violation(keys.kind, statement, witness)
        if failed is not None:
            raise UnsatisfiedConstraint(failed)
        return Proof(keys.kind, keys.circuit_id, statement.digest(), witness, self.name)

    def verify(self, keys: CircuitKeys, statement: Statement, proof: Proof) -> bool:
        if not isinstance(proof, Proof) or proof.kind != keys.kind:
            return False
        if proof.circuit_id != keys.circuit_id or proof.statement_digest != statement.digest():
            return False
        try:
            _check_schema(keys.kind, statement, proof.witness)
        except MalformedStatement:
            return False
        return first_violation(keys.kind, statement, proof.witness) is None


DEFAULT_BACKEND: ProofBackend = TransparentBackend()
_KEYS: dict[tuple[str, CircuitKind], CircuitKeys] = {}


def _keys(kind: CircuitKind, backend: ProofBackend) -> CircuitKeys:
    kind = CircuitKind(kind)
    cache_key = (backend.name, kind)
    if cache_key not in _KEYS:
        _KEYS[cache_key] = backend.setup(kind)
    return _KEYS[cache_key]


def prove(
    kind: CircuitKind, statement: Statement, witness: Witness, backend: ProofBackend = DEFAULT_BACKEND
) -> Proof:
    """Raises MalformedStatement on schema mismatch, UnsatisfiedConstraint otherwise."""
    return backend.prove(_keys(kind, backend), statement, witness)


def verify_proof(
    kind: CircuitKind, statement: Statement, proof: Proof, backend: ProofBackend = DEFAULT_BACKEND
) -> bool:
    try:
        keys = _keys(kind, backend)
    except ValueError:
        return False
    return backend.verify(keys, statement, proof)


# ---------------------------------------------------------------------------
# Statement builders
# ---------------------------------------------------------------------------


def unlock_statement(
    kind: CircuitKind, lock1: bytes, s1: bytes, amount: int, sig: bytes, pk: bytes
) -> Statement:
    return Statement(kind, {"lock1": lock1, "s1": s1, "amount": amount, "sig": sig, "pk": pk})


def prepare_witness(chain) -> Witness:
    return Witness({"s1": tuple(chain.s1), "z2": tuple(chain.z2), "s2": tuple(chain.s2)})
