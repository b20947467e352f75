"""R-HTLC escrow contract: dual hash locks, hourglass, commitments, multi-path refund.

Functions here mutate an :class:`EscrowInstance` and return the payouts the
hosting chain must credit. They never touch account balances themselves.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .circuits import CircuitKind, Proof, Statement, canonical_json, verify_proof
from .crypto import KeyPair, primary_lock, secondary_lock, verify_sig

DEFAULT_APPEAL_WINDOW = 10


class EscrowState(str, enum.Enum):
    LOCK = "LOCK"
    UNLOCK = "UNLOCK"
    REFUND2_PENDING = "REFUND2_PENDING"
    REFUND = "REFUND"
    APPEAL = "APPEAL"


ACTIVE = (EscrowState.LOCK, EscrowState.UNLOCK)
TERMINAL = (EscrowState.REFUND, EscrowState.APPEAL)


class EscrowError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


@dataclass
class Commitment:
    snd: str
    rcv: str
    v_cmt: int
    issued_at: int
    signature: bytes = b""
    honored: bool = False

    def message(self, escrow_id: str) -> bytes:
        return canonical_json(
            {"escrow": escrow_id, "snd": self.snd, "rcv": self.rcv, "v": self.v_cmt, "at": self.issued_at}
        ).encode()


@dataclass(frozen=True)
class Payout:
    address: str
    amount: int
    role: str  # beneficiary | commitment | locker | appellant


@dataclass
class EscrowInstance:
    escrow_id: str
    locker: str
    beneficiary: str
    locked: int
    drain_rate: Fraction
    lock_height: int
    timelock: int
    primary_lock: bytes
    secondary_lock: Optional[bytes]
    locker_pk: bytes
    beneficiary_pk: bytes
    protocol: str = "ccn"
    appeal_window: int = DEFAULT_APPEAL_WINDOW
    committed: int = 0
    unlocked_paid: int = 0
    commitments: list[Commitment] = field(default_factory=list)
    state: EscrowState = EscrowState.LOCK
    appeal_deadline: Optional[int] = None
    payouts: list[Payout] = field(default_factory=list)
    frozen: int = 0
    available: int = 0

    @property
    def terminal_chain(self) -> bool:
        return self.secondary_lock is None

    def drained(self, height: int) -> int:
        return math.floor(self.drain_rate * max(0, height - self.lock_height))

    def frozen_at(self, height: int) -> int:
        if self.state not in ACTIVE:
            return 0
        return max(0, self.locked - self.drained(height) - self.unlocked_paid)

    def available_at(self, height: int) -> int:
        if self.state not in ACTIVE:
            return 0
        return self.locked - self.frozen_at(height) - self.committed - self.unlocked_paid

    @property
    def paid_out(self) -> int:
        return sum(p.amount for p in self.payouts)

    @property
    def balance(self) -> int:
        """Funds still held by the contract."""
        return self.locked - self.paid_out

    def outstanding(self) -> list[Commitment]:
        return [c for c in self.commitments if not c.honored]

    def snapshot(self) -> dict:
        return {
            "escrow_id": self.escrow_id,
            "locker": self.locker,
            "beneficiary": self.beneficiary,
            "locked": self.locked,
            "frozen": self.frozen,
            "available": self.available,
            "committed": self.committed,
            "unlocked_paid": self.unlocked_paid,
            "drain_rate": str(self.drain_rate),
            "lock_height": self.lock_height,
            "timelock": self.timelock,
            "appeal_deadline": self.appeal_deadline,
            "primary_lock": self.primary_lock.hex(),
            "secondary_lock": self.secondary_lock.hex() if self.secondary_lock else None,
            "state": self.state.value,
            "commitments": [
                {"snd": c.snd, "rcv": c.rcv, "v": c.v_cmt, "at": c.issued_at, "honored": c.honored}
                for c in self.commitments
            ],
            "payouts": [[p.address, p.amount, p.role] for p in self.payouts],
        }


def _require(cond: bool, code: str, detail: str = "") -> None:
    if not cond:
        raise EscrowError(code, detail)


def _require_state(escrow: EscrowInstance, *states: EscrowState) -> None:
    _require(escrow.state in states, "bad-state", f"{escrow.state.value} not in {[s.value for s in states]}")


def _pay(escrow: EscrowInstance, address: str, amount: int, role: str) -> Payout:
    payout = Payout(address, amount, role)
    if amount > 0:
        escrow.payouts.append(payout)
    return payout


def _settle(escrow: EscrowInstance, residual_to: str, residual_role: str) -> list[Payout]:
    """Honor every outstanding commitment, send what is left to ``residual_to``."""
    out = []
    for cmt in escrow.outstanding():
        cmt.honored = True
        out.append(_pay(escrow, cmt.rcv, cmt.v_cmt, "commitment"))
    out.append(_pay(escrow, residual_to, escrow.balance, residual_role))
    escrow.frozen = escrow.available = 0
    return [p for p in out if p.amount > 0]


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def lock(
    escrow_id: str,
    locker: str,
    beneficiary: str,
    amount: int,
    primary: bytes,
    secondary: Optional[bytes],
    drain_rate: Fraction | int,
    timelock: int,
    height: int,
    locker_pk: bytes,
    beneficiary_pk: bytes,
    protocol: str = "ccn",
    appeal_window: int = DEFAULT_APPEAL_WINDOW,
) -> EscrowInstance:
    """Create the escrow. Balance checks belong to the hosting chain."""
    _require(isinstance(amount, int) and amount > 0, "rejected-amount", "lock amount must be positive")
    rate = Fraction(drain_rate)
    _require(rate >= 0, "rejected-rate", "drain rate must be non-negative")
    _require(timelock > height, "rejected-timeout", "timelock already expired")
    _require(appeal_window >= 1, "rejected-window")
    escrow = EscrowInstance(
        escrow_id=escrow_id,
        locker=locker,
        beneficiary=beneficiary,
        locked=amount,
        drain_rate=rate,
        lock_height=height,
        timelock=timelock,
        primary_lock=primary,
        secondary_lock=secondary,
        locker_pk=locker_pk,
        beneficiary_pk=beneficiary_pk,
        protocol=protocol,
        appeal_window=appeal_window,
    )
    tick(escrow, height)
    return escrow


def tick(escrow: EscrowInstance, height: int) -> tuple[int, int]:
    escrow.frozen = escrow.frozen_at(height)
    escrow.available = escrow.available_at(height)
    return escrow.frozen, escrow.available


def check(
    escrow: EscrowInstance, caller: str, rcv: str, v: int, height: int, contract_key: KeyPair
) -> Commitment:
    _require(caller == escrow.locker, "not-locker")
    _require_state(escrow, *ACTIVE)
    _require(isinstance(v, int) and v > 0, "rejected-amount", "commitment must be positive")
    available = escrow.available_at(height)
    _require(v <= available, "insufficient-available", f"{v} > {available}")
    cmt = Commitment(escrow.locker, rcv, v, height)
    cmt.signature = contract_key.sign(cmt.message(escrow.escrow_id))
    escrow.commitments.append(cmt)
    escrow.committed += v
    tick(escrow, height)
    return cmt


def verify_commitment(escrow_id: str, cmt: Commitment, contract_pk: bytes) -> bool:
    return verify_sig(contract_pk, cmt.message(escrow_id), cmt.signature)


def _unlock_kind(escrow: EscrowInstance) -> CircuitKind:
    return CircuitKind.UNLOCK_TERMINAL if escrow.terminal_chain else CircuitKind.UNLOCK_INTERMEDIARY


def _check_claim(escrow: EscrowInstance, statement: Statement, proof: Proof, kind: CircuitKind, signer_pk: bytes) -> int:
    pub = statement.public
    _require(statement.kind == kind, "rejected-proof", f"expected {kind.value}")
    _require(pub.get("lock1") == escrow.primary_lock, "rejected-proof", "statement lock differs")
    _require(pub.get("pk") == signer_pk, "rejected-proof", "signature is not from the required party")
    amount = pub.get("amount")
    _require(isinstance(amount, int) and amount > 0, "rejected-amount")
    bound = escrow.locked - escrow.committed - escrow.unlocked_paid
    _require(amount <= bound, "rejected-amount", f"{amount} > {bound}")
    _require(verify_proof(kind, statement, proof), "rejected-proof", "proof does not verify")
    return amount


def unlock(escrow: EscrowInstance, statement: Statement, proof: Proof, height: int) -> list[Payout]:
    _require_state(escrow, EscrowState.LOCK)
    _require(height < escrow.timelock, "rejected-timeout")
    _require(escrow.protocol == "ccn", "bad-protocol")
    amount = _check_claim(escrow, statement, proof, _unlock_kind(escrow), escrow.locker_pk)
    escrow.unlocked_paid = amount
    escrow.state = EscrowState.UNLOCK
    payout = _pay(escrow, escrow.beneficiary, amount, "beneficiary")
    tick(escrow, height)
    return [payout]


def unlock_preimage(escrow: EscrowInstance, preimage: bytes, height: int) -> list[Payout]:
    """Classic HTLC unlock: the preimage releases the full locked amount."""
    _require_state(escrow, EscrowState.LOCK)
    _require(height < escrow.timelock, "rejected-timeout")
    _require(escrow.protocol == "htlc", "bad-protocol")
    _require(len(preimage) == 32 and primary_lock(preimage) == escrow.primary_lock, "hash-mismatch")
    escrow.unlocked_paid = escrow.locked - escrow.committed
    escrow.state = EscrowState.UNLOCK
    payout = _pay(escrow, escrow.beneficiary, escrow.unlocked_paid, "beneficiary")
    tick(escrow, height)
    return [payout]


def refund1(escrow: EscrowInstance, caller: str, height: int) -> list[Payout]:
    """Case 1 refund; also the explicit finalization of a Case 2 refund after its window."""
    _require(caller == escrow.locker, "not-locker")
    if escrow.state is EscrowState.REFUND2_PENDING:
        _require(height > escrow.appeal_deadline, "too-early", "appeal window still open")
    else:
        _require(height > escrow.timelock, "too-early")
        if escrow.state is EscrowState.LOCK:
            _require(escrow.terminal_chain, "bad-state", "non-terminal escrow in LOCK needs refund2/refund3")
        else:
            _require_state(escrow, EscrowState.UNLOCK)
    escrow.state = EscrowState.REFUND
    return _settle(escrow, escrow.locker, "locker")


def refund2(escrow: EscrowInstance, caller: str, s2: bytes, z2: bytes, height: int) -> None:
    _require(caller == escrow.locker, "not-locker")
    _require_state(escrow, EscrowState.LOCK)
    _require(height > escrow.timelock, "too-early")
    _require(escrow.secondary_lock is not None, "no-secondary")
    _require(
        len(s2) == 32 and len(z2) == 32 and secondary_lock(s2, z2) == escrow.secondary_lock,
        "hash-mismatch",
    )
    escrow.state = EscrowState.REFUND2_PENDING
    escrow.appeal_deadline = height + escrow.appeal_window
    escrow.frozen = escrow.available = 0


def appeal(escrow: EscrowInstance, appellant: str, s1: bytes, height: int) -> list[Payout]:
    _require_state(escrow, EscrowState.REFUND2_PENDING)
    _require(height <= escrow.appeal_deadline, "window-closed")
    _require(len(s1) == 32 and primary_lock(s1) == escrow.primary_lock, "hash-mismatch")
    escrow.state = EscrowState.APPEAL
    return _settle(escrow, appellant, "appellant")


def refund3(escrow: EscrowInstance, caller: str, statement: Statement, proof: Proof, height: int) -> list[Payout]:
    """Case 3: the locker settles on behalf of an offline beneficiary."""
    _require(caller == escrow.locker, "not-locker")
    _require_state(escrow, EscrowState.LOCK)
    _require(height > escrow.timelock, "too-early")
    _require(escrow.protocol == "ccn", "bad-protocol")
    amount = _check_claim(
        escrow, statement, proof, CircuitKind.UNLOCK_INTERMEDIARY, escrow.beneficiary_pk
    )
    escrow.unlocked_paid = amount
    escrow.state = EscrowState.REFUND
    out = [_pay(escrow, escrow.beneficiary, amount, "beneficiary")]
    return out + _settle(escrow, escrow.locker, "locker")
