"""Transaction envelopes and events shared by the chain, escrow and channel layers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .circuits import _jsonable

# required payload keys per transaction kind
TX_SCHEMAS: Mapping[str, frozenset[str]] = {
    "Lock": frozenset(
        {"beneficiary", "amount", "primary_lock", "secondary_lock", "drain_rate", "timelock",
         "locker_pk", "beneficiary_pk", "protocol", "appeal_window"}
    ),
    "Check": frozenset({"escrow_id", "rcv", "amount"}),
    "Unlock": frozenset({"escrow_id"}),
    "Refund1": frozenset({"escrow_id"}),
    "Refund2": frozenset({"escrow_id", "s2", "z2"}),
    "Refund3": frozenset({"escrow_id", "statement", "proof"}),
    "Appeal": frozenset({"escrow_id", "s1"}),
    "ChannelOpen": frozenset({"party_b", "deposit_a", "deposit_b", "pk_a", "pk_b", "dispute_window"}),
    "ChannelClose": frozenset({"channel_id", "state"}),
    "ChannelDispute": frozenset({"channel_id", "state"}),
}
TX_KINDS = frozenset(TX_SCHEMAS)


class TxRejected(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


@dataclass(frozen=True)
class TxEnvelope:
    kind: str
    sender: str
    payload: Mapping[str, Any] = field(default_factory=dict)
    submitted_at: int = -1
    tx_id: int = -1


@dataclass(frozen=True)
class Event:
    chain_id: str
    height: int
    label: str
    subject: str
    payload: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "height": self.height,
            "label": self.label,
            "subject": self.subject,
            "payload": _jsonable(self.payload),
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
