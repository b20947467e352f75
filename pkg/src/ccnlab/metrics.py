"""Trace emission and trace-only metric recomputation.

A trace is JSON lines: one header, one genesis record per chain, every chain event in
(height, path order), and an end marker. ``report_from_trace`` rebuilds every metric from
those lines alone, so a report can be checked against its trace hash.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

from .orchestrator import PaymentRun, RunResult

# successful transaction kind behind each event label; StateClosed has no transaction
_TX_OF_EVENT = {
    "Locked": "Lock",
    "CommitmentIssued": "Check",
    "Unlocked": "Unlock",
    "Refund2Posted": "Refund2",
    "Appealed": "Appeal",
    "ChannelOpened": "ChannelOpen",
    "ChannelClosing": "ChannelClose",
    "ChannelDisputed": "ChannelDispute",
}
_STATE_AFTER = {"Locked": "LOCK", "Unlocked": "UNLOCK", "Refund2Posted": "REFUND2_PENDING",
                "Refunded": "REFUND", "Appealed": "APPEAL"}


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def trace_lines(run: PaymentRun, result: RunResult, name: str = "scenario") -> list[str]:
    path = run.path
    lines = [_dumps({
        "type": "header", "protocol": run.protocol, "scenario": name, "seed": run.seed,
        "chains": list(path.chains), "parties": list(path.parties),
        "lockers": [path.locker(i) for i in range(path.n + 1)], "start": run.start,
    })]
    for cid in path.chains:
        lines.append(_dumps({"type": "genesis", "protocol": run.protocol, "chain_id": cid,
                             "accounts": dict(sorted(result.initial[cid].items()))}))
    for ev in result.events:
        lines.append(_dumps({"type": "event", "protocol": run.protocol, **ev.to_dict()}))
    lines.append(_dumps({"type": "end", "protocol": run.protocol, "height": result.height}))
    return lines


def trace_text(lines: Iterable[str]) -> str:
    return "".join(line + "\n" for line in lines)


def trace_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class MetricsReport:
    protocol: str
    scenario: str
    final_height: int
    balances: dict[str, dict[str, int]]  # chain -> party -> units
    availability: dict[str, list[tuple[int, int]]]  # locker -> [(height, accessible units)]
    tx_counts: dict[str, dict[str, int]]  # chain -> kind -> successful txs
    rejected: dict[str, dict[str, int]]
    outcomes: dict[str, str]  # escrow id -> settlement label
    trace_sha256: str
    game: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    def net(self, party: str, initial: dict[str, dict[str, int]]) -> dict[str, int]:
        return {c: self.balances[c].get(party, 0) - initial[c].get(party, 0) for c in self.balances}

    def to_dict(self) -> dict:
        out = {
            "protocol": self.protocol,
            "scenario": self.scenario,
            "final_height": self.final_height,
            "trace_sha256": self.trace_sha256,
            "balances": self.balances,
            "tx_counts": self.tx_counts,
            "rejected": self.rejected,
            "outcomes": self.outcomes,
            "availability": {p: [list(s) for s in series] for p, series in self.availability.items()},
        }
        if self.game is not None:
            out["game"] = self.game
        out.update(self.extra)
        return out

    def csv_rows(self) -> list[dict]:
        """One row per (metric, chain/party, key)."""
        rows = []
        for cid, accounts in self.balances.items():
            for party, units in sorted(accounts.items()):
                rows.append({"metric": "balance", "scope": cid, "key": party, "value": units})
        for cid, counts in self.tx_counts.items():
            for kind, count in sorted(counts.items()):
                rows.append({"metric": "tx_count", "scope": cid, "key": kind, "value": count})
        for eid, label in sorted(self.outcomes.items()):
            rows.append({"metric": "outcome", "scope": eid, "key": "label", "value": label})
        for party, series in self.availability.items():
            for h, units in series:
                rows.append({"metric": "accessible", "scope": party, "key": h, "value": units})
        return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    fields = list(rows[0]) if rows else ["metric", "scope", "key", "value"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


@dataclass
class _Escrow:
    chain_id: str
    locker: str
    locked: int
    drain_rate: Fraction
    lock_height: int
    state: str = "LOCK"
    committed: int = 0
    unlocked_paid: int = 0
    payouts: list = field(default_factory=list)

    def accessible(self, h: int) -> int:
        if self.state in ("LOCK", "UNLOCK"):
            drained = math.floor(self.drain_rate * max(0, h - self.lock_height))
            frozen = max(0, self.locked - drained - self.unlocked_paid)
            # spendable plus honored checks
            return self.locked - frozen - self.unlocked_paid
        return sum(amount for _, amount, role in self.payouts if role in ("locker", "commitment"))

    def apply(self, label: str, p: dict) -> None:
        if label == "CommitmentIssued":
            self.committed += p["amount"]
        elif label in ("Unlocked", "Refunded", "Appealed"):
            if "amount" in p:
                self.unlocked_paid = p["amount"]
            self.payouts.extend(p["payouts"])
        if label in _STATE_AFTER:
            self.state = _STATE_AFTER[label]

    def label(self, last_refund_case: Optional[int]) -> str:
        if self.state == "REFUND":
            return f"REFUND_CASE{last_refund_case}"
        if self.state == "UNLOCK" and self.locked == sum(p[1] for p in self.payouts):
            return "UNLOCK_SETTLED"
        return self.state


def report_from_trace(text: str) -> MetricsReport:
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    header = next(r for r in records if r["type"] == "header")
    end = next(r for r in records if r["type"] == "end")
    balances = {r["chain_id"]: dict(r["accounts"]) for r in records if r["type"] == "genesis"}
    tx_counts: dict[str, dict[str, int]] = {cid: {} for cid in balances}
    rejected: dict[str, dict[str, int]] = {cid: {} for cid in balances}
    escrows: dict[str, _Escrow] = {}
    refund_case: dict[str, int] = {}
    events = [r for r in records if r["type"] == "event"]

    def credit(cid: str, payouts: list) -> None:
        for address, amount, _role in payouts:
            balances[cid][address] = balances[cid].get(address, 0) + amount

    for ev in events:
        cid, label, p = ev["chain_id"], ev["label"], ev["payload"]
        if label == "Rejected":
            rejected[cid][p["kind"]] = rejected[cid].get(p["kind"], 0) + 1
            continue
        kind = _TX_OF_EVENT.get(label)
        if label == "Refunded":
            kind = "Refund3" if p["case"] == 3 else "Refund1"
        if kind is not None:
            tx_counts[cid][kind] = tx_counts[cid].get(kind, 0) + 1
        if label == "Locked":
            escrows[ev["subject"]] = _Escrow(cid, p["locker"], p["amount"], Fraction(p["drain_rate"]), ev["height"])
            balances[cid][p["locker"]] -= p["amount"]
        elif label in ("Unlocked", "Refunded", "Appealed"):
            credit(cid, p["payouts"])
            if label == "Refunded":
                refund_case[ev["subject"]] = p["case"]
        elif label == "ChannelOpened":
            for party, deposit in zip(p["parties"], p["deposits"]):
                balances[cid][party] = balances[cid].get(party, 0) - deposit
        elif label == "StateClosed":
            for party, amount in p["payout"].items():
                balances[cid][party] = balances[cid].get(party, 0) + amount
        if ev["subject"] in escrows and label != "Locked":
            escrows[ev["subject"]].apply(label, p)

    # accessible funds per locker, replayed block by block
    availability: dict[str, list[tuple[int, int]]] = {name: [] for name in header["lockers"]}
    by_locker = {e.locker: eid for eid, e in escrows.items()}
    replay = {eid: _Escrow(e.chain_id, e.locker, e.locked, e.drain_rate, e.lock_height) for eid, e in escrows.items()}
    pending = sorted((ev for ev in events if ev["subject"] in escrows), key=lambda ev: ev["height"])
    k = 0
    for h in range(1, end["height"] + 1):
        while k < len(pending) and pending[k]["height"] <= h:
            ev = pending[k]
            if ev["label"] != "Locked":
                replay[ev["subject"]].apply(ev["label"], ev["payload"])
            k += 1
        for name in header["lockers"]:
            eid = by_locker.get(name)
            units = 0
            if eid is not None and replay[eid].lock_height <= h:
                units = replay[eid].accessible(h)
            availability[name].append((h, units))

    return MetricsReport(
        protocol=header["protocol"],
        scenario=header["scenario"],
        final_height=end["height"],
        balances={cid: dict(sorted(acc.items())) for cid, acc in balances.items()},
        availability=availability,
        tx_counts={cid: dict(sorted(c.items())) for cid, c in tx_counts.items()},
        rejected={cid: dict(sorted(c.items())) for cid, c in rejected.items()},
        outcomes={eid: e.label(refund_case.get(eid)) for eid, e in sorted(escrows.items())},
        trace_sha256=trace_hash(text),
    )
