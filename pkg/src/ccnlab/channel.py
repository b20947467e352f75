"""Bilateral off-chain channels with signed receipts and stale-state disputes."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .circuits import canonical_json
from .crypto import KeyPair, verify_sig
from .txs import TxEnvelope

DEFAULT_DISPUTE_WINDOW = 5


class ChannelStatus(str, enum.Enum):
    OPEN = "OPEN"
    CLOSING = "CLOSING"
    CLOSED = "CLOSED"


class ChannelError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


@dataclass(frozen=True)
class ChannelState:
    channel_id: str
    seq: int
    balance_a: int
    balance_b: int

    def message(self) -> bytes:
        return canonical_json(
            {"ch": self.channel_id, "seq": self.seq, "a": self.balance_a, "b": self.balance_b}
        ).encode()


@dataclass(frozen=True)
class SignedState:
    state: ChannelState
    sig_a: bytes = b""
    sig_b: bytes = b""


@dataclass(frozen=True)
class Receipt:
    channel_id: str
    kind: str  # "intra" or "cross"
    snd: str
    rcv: str
    amount: int
    seq: int
    path_id: Optional[str] = None
    signature: bytes = b""

    def message(self) -> bytes:
        return canonical_json(
            {"ch": self.channel_id, "kind": self.kind, "snd": self.snd, "rcv": self.rcv,
             "amount": self.amount, "seq": self.seq, "path": self.path_id}
        ).encode()


@dataclass
class Channel:
    """Off-chain view of a channel, owned by one logical driver."""

    channel_id: str
    chain_id: str
    party_a: str
    party_b: str
    deposit_a: int
    deposit_b: int
    keys: dict[str, KeyPair] = field(repr=False)
    dispute_window: int = DEFAULT_DISPUTE_WINDOW
    seq: int = 0
    status: ChannelStatus = ChannelStatus.OPEN
    receipt_log: list[Receipt] = field(default_factory=list)
    history: list[SignedState] = field(default_factory=list)

    def __post_init__(self):
        self.balances = {self.party_a: self.deposit_a, self.party_b: self.deposit_b}
        if not self.history:
            self.history.append(self._cosign())

    @property
    def total(self) -> int:
        return self.deposit_a + self.deposit_b

    def _cosign(self) -> SignedState:
        st = ChannelState(self.channel_id, self.seq, self.balances[self.party_a], self.balances[self.party_b])
        msg = st.message()
        return SignedState(st, self.keys[self.party_a].sign(msg), self.keys[self.party_b].sign(msg))

    def latest(self) -> SignedState:
        return self.history[-1]

    def state_at(self, seq: int) -> SignedState:
        return self.history[seq]

    def make_receipt(self, kind: str, snd: str, amount: int, path_id: Optional[str] = None) -> Receipt:
        rcv = self.party_b if snd == self.party_a else self.party_a
        r = Receipt(self.channel_id, kind, snd, rcv, amount, self.seq + 1, path_id)
        return Receipt(**{**r.__dict__, "signature": self.keys[snd].sign(r.message())})

    def replay(self) -> dict[str, int]:
        balances = {self.party_a: self.deposit_a, self.party_b: self.deposit_b}
        for r in self.receipt_log:
            balances[r.snd] -= r.amount
            balances[r.rcv] += r.amount
        return balances

    def cross_total(self, path_id: Optional[str] = None) -> int:
        return sum(
            r.amount for r in self.receipt_log
            if r.kind == "cross" and (path_id is None or r.path_id == path_id)
        )

    def snapshot(self) -> dict:
        return {
            "channel_id": self.channel_id,
            "chain_id": self.chain_id,
            "parties": [self.party_a, self.party_b],
            "deposits": [self.deposit_a, self.deposit_b],
            "balances": [self.balances[self.party_a], self.balances[self.party_b]],
            "seq": self.seq,
            "status": self.status.value,
            "receipts": [
                {"kind": r.kind, "snd": r.snd, "rcv": r.rcv, "amount": r.amount, "seq": r.seq,
                 "path_id": r.path_id}
                for r in self.receipt_log
            ],
        }


def pay_receipt(channel: Channel, receipt: Receipt) -> SignedState:
    if channel.status is not ChannelStatus.OPEN:
        raise ChannelError("not-open")
    if receipt.channel_id != channel.channel_id or receipt.kind not in ("intra", "cross"):
        raise ChannelError("malformed-receipt")
    if {receipt.snd, receipt.rcv} != {channel.party_a, channel.party_b}:
        raise ChannelError("not-a-party")
    if receipt.seq != channel.seq + 1:
        raise ChannelError("stale-seq", f"expected {channel.seq + 1}, got {receipt.seq}")
    if receipt.amount <= 0 or channel.balances[receipt.snd] < receipt.amount:
        raise ChannelError("overdraft")
    if not verify_sig(channel.keys[receipt.snd].pk, receipt.message(), receipt.signature):
        raise ChannelError("bad-signature")
    channel.balances[receipt.snd] -= receipt.amount
    channel.balances[receipt.rcv] += receipt.amount
    channel.seq += 1
    channel.receipt_log.append(receipt)
    signed = channel._cosign()
    channel.history.append(signed)
    return signed


def settle_cross(channel: Channel) -> SignedState:
    """Co-sign a state that backs out every cross-chain receipt.

    Cross-chain value is paid on-chain by the path's escrows, so the channel closes on its
    intra-chain balance only.
    """
    if channel.status is not ChannelStatus.OPEN:
        raise ChannelError("not-open")
    for r in channel.receipt_log:
        if r.kind == "cross":
            channel.balances[r.snd] += r.amount
            channel.balances[r.rcv] -= r.amount
    channel.seq += 1
    signed = channel._cosign()
    channel.history.append(signed)
    return signed


# ---------------------------------------------------------------------------
# On-chain side
# ---------------------------------------------------------------------------


def open_channel(chain, party_a: str, party_b: str, deposit_a: int, deposit_b: int,
                 keys: dict[str, KeyPair], dispute_window: int = DEFAULT_DISPUTE_WINDOW) -> Channel:
    """Submit the opening transaction and return the off-chain view.

    Deposits move on-chain when the next block executes.
    """
    tx_id = chain.submit_tx(TxEnvelope("ChannelOpen", party_a, {
        "party_b": party_b, "deposit_a": deposit_a, "deposit_b": deposit_b,
        "pk_a": keys[party_a].pk, "pk_b": keys[party_b].pk, "dispute_window": dispute_window,
    }))
    return Channel(chain.object_id(tx_id), chain.chain_id, party_a, party_b, deposit_a, deposit_b,
                   keys={party_a: keys[party_a], party_b: keys[party_b]}, dispute_window=dispute_window)


def sync_status(chain, channel: Channel) -> ChannelStatus:
    """Copy the on-chain status into the off-chain view."""
    record = chain.channels.get(channel.channel_id)
    if record is not None and record.status is not ChannelStatus.OPEN:
        channel.status = record.status
    return channel.status


def close_channel(chain, channel: Channel, signed: SignedState, uploader: str) -> int:
    if sync_status(chain, channel) is ChannelStatus.CLOSED:
        raise ChannelError("closed")
    tx_id = chain.submit_tx(TxEnvelope("ChannelClose", uploader, {"channel_id": channel.channel_id, "state": signed}))
    channel.status = ChannelStatus.CLOSING
    return tx_id


def dispute_channel(chain, channel: Channel, better: SignedState, submitter: str) -> int:
    return chain.submit_tx(TxEnvelope("ChannelDispute", submitter, {"channel_id": channel.channel_id, "state": better}))


@dataclass
class ChannelRecord:
    channel_id: str
    party_a: str
    party_b: str
    pk_a: bytes
    pk_b: bytes
    deposit_a: int
    deposit_b: int
    dispute_window: int
    status: ChannelStatus = ChannelStatus.OPEN
    pending: Optional[SignedState] = None
    deadline: Optional[int] = None

    @property
    def held(self) -> int:
        return 0 if self.status is ChannelStatus.CLOSED else self.deposit_a + self.deposit_b

    def verify(self, signed: SignedState) -> bool:
        st = signed.state
        if st.channel_id != self.channel_id or st.balance_a < 0 or st.balance_b < 0:
            return False
        if st.balance_a + st.balance_b != self.deposit_a + self.deposit_b:
            return False
        msg = st.message()
        return verify_sig(self.pk_a, msg, signed.sig_a) and verify_sig(self.pk_b, msg, signed.sig_b)


def record_close(record: ChannelRecord, signed: SignedState, uploader: str, height: int) -> None:
    if record.status is not ChannelStatus.OPEN:
        raise ChannelError("not-open")
    if uploader not in (record.party_a, record.party_b):
        raise ChannelError("not-a-party")
    if not record.verify(signed):
        raise ChannelError("bad-signature")
    record.status = ChannelStatus.CLOSING
    record.pending = signed
    record.deadline = height + record.dispute_window


def record_dispute(record: ChannelRecord, signed: SignedState, height: int) -> None:
    if record.status is not ChannelStatus.CLOSING:
        raise ChannelError("not-closing")
    if height > record.deadline:
        raise ChannelError("window-closed")
    if signed.state.seq <= record.pending.state.seq:
        raise ChannelError("stale-seq")
    if not record.verify(signed):
        raise ChannelError("bad-signature")
    record.pending = signed
    record.deadline = height + record.dispute_window


def settle_due(record: ChannelRecord, height: int) -> Optional[dict[str, int]]:
    """Pay out a pending close once its dispute window has elapsed."""
    if record.status is not ChannelStatus.CLOSING or height <= record.deadline:
        return None
    record.status = ChannelStatus.CLOSED
    st = record.pending.state
    return {record.party_a: st.balance_a, record.party_b: st.balance_b}
