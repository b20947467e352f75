"""Deterministic discrete-time blockchain hosting escrows, channels and watchers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

from . import escrow as esc
from .channel import ChannelError, ChannelRecord, record_close, record_dispute, settle_due
from .circuits import CircuitKind, Proof, Statement
from .crypto import KeyPair, primary_lock, sha256, xor256
from .escrow import EscrowError, EscrowInstance, EscrowState
from .txs import TX_KINDS, TX_SCHEMAS, Event, TxEnvelope, TxRejected

log = logging.getLogger(__name__)


@dataclass
class TxOutcome:
    tx: TxEnvelope
    height: int
    ok: bool
    reason: str = ""


class ConservationError(AssertionError):
    pass


class SimChain:
    """One chain. ``height`` is the protocol clock; one block is one time unit."""

    def __init__(self, chain_id: str, balances: Optional[dict[str, int]] = None,
                 check_conservation: bool = True):
        self.chain_id = chain_id
        self.height = 0
        self.accounts: dict[str, int] = dict(balances or {})
        self.escrows: dict[str, EscrowInstance] = {}
        self.channels: dict[str, ChannelRecord] = {}
        self.mempool: list[TxEnvelope] = []
        self.events: list[Event] = []
        self.outcomes: dict[int, TxOutcome] = {}
        self.check_conservation = check_conservation
        self.contract_key = KeyPair.from_seed(sha256(f"contract:{chain_id}".encode()))
        self._next_tx = 0
        self.supply = self.total_supply()

    # -- accounting ---------------------------------------------------------

    def register(self, address: str, balance: int = 0) -> None:
        """Genesis-style account creation; adjusts the reference supply."""
        if address not in self.accounts:
            self.accounts[address] = 0
        self.accounts[address] += balance
        self.supply += balance

    def balance(self, address: str) -> int:
        return self.accounts.get(address, 0)

    def total_supply(self) -> int:
        return (
            sum(self.accounts.values())
            + sum(e.balance for e in self.escrows.values())
            + sum(c.held for c in self.channels.values())
        )

    def assert_conservation(self) -> None:
        total = self.total_supply()
        if total != self.supply:
            raise ConservationError(f"{self.chain_id}: supply {total} != {self.supply} at height {self.height}")

    def object_id(self, tx_id: int) -> str:
        """Identifier of the escrow or channel created by transaction ``tx_id``."""
        return f"{self.chain_id}/{tx_id}"

    # -- transactions -------------------------------------------------------

    def submit_tx(self, tx: TxEnvelope) -> int:
        if tx.kind not in TX_KINDS:
            raise TxRejected("schema", f"unknown transaction kind {tx.kind!r}")
        missing = TX_SCHEMAS[tx.kind] - set(tx.payload)
        if missing:
            raise TxRejected("schema", f"{tx.kind} payload missing {sorted(missing)}")
        if tx.sender not in self.accounts:
            raise TxRejected("unknown-sender", tx.sender)
        p = tx.payload
        if tx.kind == "Lock" and self.balance(tx.sender) < p["amount"]:
            raise TxRejected("insufficient-funds", f"{tx.sender} has {self.balance(tx.sender)}")
        if tx.kind == "ChannelOpen":
            if self.balance(tx.sender) < p["deposit_a"] or self.balance(p["party_b"]) < p["deposit_b"]:
                raise TxRejected("insufficient-funds")
        stamped = TxEnvelope(tx.kind, tx.sender, tx.payload, self.height, self._next_tx)
        self._next_tx += 1
        self.mempool.append(stamped)
        return stamped.tx_id

    def advance(self, blocks: int = 1) -> list[Event]:
        if blocks < 1:
            raise ValueError("blocks must be >= 1")
        start = len(self.events)
        for _ in range(blocks):
            self.height += 1
            for e in self.escrows.values():
                if e.state in esc.ACTIVE:
                    esc.tick(e, self.height)
            for record in self.channels.values():
                payout = settle_due(record, self.height)
                if payout is not None:
                    for addr, amount in payout.items():
                        self.accounts[addr] = self.accounts.get(addr, 0) + amount
                    self._emit("StateClosed", record.channel_id, {
                        "seq": record.pending.state.seq, "payout": dict(payout)})
            pending, self.mempool = self.mempool, []
            for tx in pending:
                self._execute(tx)
            if self.check_conservation:
                self.assert_conservation()
        return self.events[start:]

    def read_events(self, from_height: int = 0, until_height: Optional[int] = None) -> list[Event]:
        if from_height > self.height:
            return []
        return [
            e for e in self.events
            if e.height >= from_height and (until_height is None or e.height <= until_height)
        ]

    def tx_counts(self, ok_only: bool = True) -> dict[str, int]:
        counts: dict[str, int] = {}
        for out in self.outcomes.values():
            if out.ok or not ok_only:
                counts[out.tx.kind] = counts.get(out.tx.kind, 0) + 1
        return counts

    # -- execution ----------------------------------------------------------

    def _emit(self, label: str, subject: str, payload: dict) -> None:
        self.events.append(Event(self.chain_id, self.height, label, subject, payload))

    def _credit(self, payouts: Iterable[esc.Payout]) -> None:
        for p in payouts:
            self.accounts[p.address] = self.accounts.get(p.address, 0) + p.amount

    def _execute(self, tx: TxEnvelope) -> None:
        try:
            getattr(self, f"_exec_{tx.kind.lower()}")(tx)
        except (EscrowError, ChannelError, TxRejected) as err:
            self.outcomes[tx.tx_id] = TxOutcome(tx, self.height, False, err.code)
            self._emit("Rejected", self.object_id(tx.tx_id), {"kind": tx.kind, "reason": err.code})
            log.debug("%s rejected %s: %s", self.chain_id, tx.kind, err)
        else:
            self.outcomes[tx.tx_id] = TxOutcome(tx, self.height, True)

    def _escrow(self, tx: TxEnvelope) -> EscrowInstance:
        escrow_id = tx.payload["escrow_id"]
        if escrow_id not in self.escrows:
            raise TxRejected("unknown-escrow", escrow_id)
        return self.escrows[escrow_id]

    def _exec_lock(self, tx: TxEnvelope) -> None:
        p = tx.payload
        if self.balance(tx.sender) < p["amount"]:
            raise TxRejected("insufficient-funds")
        escrow_id = self.object_id(tx.tx_id)
        e = esc.lock(
            escrow_id, tx.sender, p["beneficiary"], p["amount"], p["primary_lock"], p["secondary_lock"],
            Fraction(p["drain_rate"]), p["timelock"], self.height, p["locker_pk"], p["beneficiary_pk"],
            p["protocol"], p["appeal_window"],
        )
        self.accounts[tx.sender] -= e.locked
        self.escrows[escrow_id] = e
        self._emit("Locked", escrow_id, {
            "locker": e.locker, "beneficiary": e.beneficiary, "amount": e.locked,
            "primary_lock": e.primary_lock, "secondary_lock": e.secondary_lock,
            "drain_rate": str(e.drain_rate), "timelock": e.timelock, "protocol": e.protocol,
        })

    def _exec_check(self, tx: TxEnvelope) -> None:
        e = self._escrow(tx)
        cmt = esc.check(e, tx.sender, tx.payload["rcv"], tx.payload["amount"], self.height, self.contract_key)
        self._emit("CommitmentIssued", e.escrow_id, {"snd": cmt.snd, "rcv": cmt.rcv, "amount": cmt.v_cmt})

    def _exec_unlock(self, tx: TxEnvelope) -> None:
        e = self._escrow(tx)
        p = tx.payload
        if e.protocol == "htlc":
            preimage = p.get("preimage", b"")
            paid = esc.unlock_preimage(e, preimage, self.height)
            revealed = preimage
        else:
            statement, proof = p.get("statement"), p.get("proof")
            if not isinstance(statement, Statement) or not isinstance(proof, Proof):
                raise TxRejected("schema", "unlock needs statement and proof")
            paid = esc.unlock(e, statement, proof, self.height)
            revealed = statement.public["s1"]
        self._credit(paid)
        self._emit("Unlocked", e.escrow_id, {"revealed_s1": revealed, "amount": e.unlocked_paid,
                                             "payouts": _payout_list(paid)})

    def _exec_refund1(self, tx: TxEnvelope) -> None:
        e = self._escrow(tx)
        finalize = e.state is EscrowState.REFUND2_PENDING
        paid = esc.refund1(e, tx.sender, self.height)
        self._credit(paid)
        self._emit("Refunded", e.escrow_id, {"case": 2 if finalize else 1, "payouts": _payout_list(paid)})

    def _exec_refund2(self, tx: TxEnvelope) -> None:
        e = self._escrow(tx)
        esc.refund2(e, tx.sender, tx.payload["s2"], tx.payload["z2"], self.height)
        self._emit("Refund2Posted", e.escrow_id, {
            "revealed_s2": tx.payload["s2"], "revealed_z2": tx.payload["z2"],
            "appeal_deadline": e.appeal_deadline})

    def _exec_refund3(self, tx: TxEnvelope) -> None:
        e = self._escrow(tx)
        statement, proof = tx.payload["statement"], tx.payload["proof"]
        if not isinstance(statement, Statement) or not isinstance(proof, Proof):
            raise TxRejected("schema", "refund3 needs statement and proof")
        paid = esc.refund3(e, tx.sender, statement, proof, self.height)
        self._credit(paid)
        self._emit("Refunded", e.escrow_id, {
            "case": 3, "revealed_s1": statement.public["s1"], "amount": e.unlocked_paid,
            "payouts": _payout_list(paid)})

    def _exec_appeal(self, tx: TxEnvelope) -> None:
        e = self._escrow(tx)
        paid = esc.appeal(e, tx.sender, tx.payload["s1"], self.height)
        self._credit(paid)
        self._emit("Appealed", e.escrow_id, {"revealed_s1": tx.payload["s1"], "payouts": _payout_list(paid)})

    def _exec_channelopen(self, tx: TxEnvelope) -> None:
        p = tx.payload
        if self.balance(tx.sender) < p["deposit_a"] or self.balance(p["party_b"]) < p["deposit_b"]:
            raise TxRejected("insufficient-funds")
        record = ChannelRecord(self.object_id(tx.tx_id), tx.sender, p["party_b"], p["pk_a"], p["pk_b"],
                               p["deposit_a"], p["deposit_b"], p["dispute_window"])
        self.accounts[tx.sender] -= p["deposit_a"]
        self.accounts[p["party_b"]] -= p["deposit_b"]
        self.channels[record.channel_id] = record
        self._emit("ChannelOpened", record.channel_id, {
            "parties": [record.party_a, record.party_b], "deposits": [record.deposit_a, record.deposit_b]})

    def _channel(self, tx: TxEnvelope) -> ChannelRecord:
        cid = tx.payload["channel_id"]
        if cid not in self.channels:
            raise TxRejected("unknown-channel", cid)
        return self.channels[cid]

    def _exec_channelclose(self, tx: TxEnvelope) -> None:
        record = self._channel(tx)
        record_close(record, tx.payload["state"], tx.sender, self.height)
        self._emit("ChannelClosing", record.channel_id, {"seq": record.pending.state.seq, "deadline": record.deadline})

    def _exec_channeldispute(self, tx: TxEnvelope) -> None:
        record = self._channel(tx)
        if tx.sender not in (record.party_a, record.party_b):
            raise TxRejected("not-a-party")
        record_dispute(record, tx.payload["state"], self.height)
        self._emit("ChannelDisputed", record.channel_id, {"seq": record.pending.state.seq, "deadline": record.deadline})


def _payout_list(payouts: Iterable[esc.Payout]) -> list:
    return [[p.address, p.amount, p.role] for p in payouts]


# ---------------------------------------------------------------------------
# Watchers
# ---------------------------------------------------------------------------


@dataclass
class Watcher:
    """A miner that reads public event logs and appeals fraudulent Case-2 refunds."""

    home_chain: str
    address: str
    visibility_delay: int = 1
    observed: set[bytes] = field(default_factory=set)
    appealed: set[str] = field(default_factory=set)

    def visible(self, chain: SimChain, now: int) -> list[Event]:
        return chain.read_events(0, now - (self.visibility_delay - 1))


def watcher_scan(w: Watcher, chains: dict[str, SimChain], now: int) -> Optional[TxEnvelope]:
    """Return at most one Appeal transaction for the home chain."""
    for chain in chains.values():
        for ev in w.visible(chain, now):
            secret = ev.payload.get("revealed_s1")
            if secret is not None:
                w.observed.add(secret)
    home = chains[w.home_chain]
    for ev in w.visible(home, now):
        if ev.label != "Refund2Posted" or ev.subject in w.appealed:
            continue
        e = home.escrows[ev.subject]
        if e.state is not EscrowState.REFUND2_PENDING or now + 1 > e.appeal_deadline:
            continue
        z2 = ev.payload["revealed_z2"]
        for s_next in sorted(w.observed):
            candidate = xor256(s_next, z2)
            if primary_lock(candidate) == e.primary_lock:
                w.appealed.add(ev.subject)
                return TxEnvelope("Appeal", w.address, {"escrow_id": ev.subject, "s1": candidate})
    return None
