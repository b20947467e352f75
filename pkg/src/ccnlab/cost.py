"""On-chain transaction counting: N off-chain interactions settled once versus N HTLC settlements."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .channel import Channel, close_channel, open_channel, pay_receipt, settle_cross
from .orchestrator import PathSpec, PaymentRun, run_htlc_baseline, run_payment, simple_path

DEFAULT_NS = (1, 10, 100, 1000)


class CostError(ValueError):
    pass


def _merge(total: dict[str, int], counts: dict[str, dict[str, int]]) -> None:
    for per_chain in counts.values():
        for kind, c in per_chain.items():
            total[kind] = total.get(kind, 0) + c


def _hop_value(path: PathSpec, unit: int, hop: int) -> int:
    return math.floor(unit * math.prod(path.rates[:hop]))


def ccn_cost(interactions: int, n: int = 1, unit: int = 30, seed: int = 0) -> dict[str, int]:
    totals: dict[str, int] = {}
    _merge(totals, {cid: c.tx_counts() for cid, c in ccn_settlement(interactions, n, unit, seed).chains.items()})
    return totals


def ccn_settlement(interactions: int, n: int = 1, unit: int = 30, seed: int = 0) -> PaymentRun:
    """Open one channel per hop, stream the interactions as cross-chain receipts, settle the
    aggregate through one R-HTLC run, then close every channel. Returns the finished run."""
    if interactions < 1:
        raise CostError("N must be >= 1")
    base = simple_path(n)
    path = simple_path(n, amount=interactions * unit, rate=base.rates[0], drain=base.drain_rates[0])
    deposits = [_hop_value(path, unit, i) * interactions for i in range(n + 1)]
    funding = [math.ceil(path.amount * math.prod(path.rates[:i])) + 100 + deposits[i] for i in range(n + 1)]
    run = PaymentRun(path, None, seed=seed, funding=funding)
    channels: list[Channel] = []
    for i, cid in enumerate(path.chains):
        locker, ben = path.locker(i), path.beneficiary(i)
        keys = {locker: run.agent(i).keys[cid], ben: run.agent(i + 1).keys[cid]}
        channels.append(open_channel(run.chains[cid], locker, ben, deposits[i], 0, keys))
    for k in range(interactions):
        for i, ch in enumerate(channels):
            pay_receipt(ch, ch.make_receipt("cross", path.locker(i), _hop_value(path, unit, i), path_id=f"x{k}"))
    result = run_payment(run)
    for i, ch in enumerate(channels):
        chain = run.chains[path.chains[i]]
        close_channel(chain, ch, settle_cross(ch), path.locker(i))
    for _ in range(max(ch.dispute_window for ch in channels) + 2):
        for chain in run.chains.values():
            chain.advance()
    if not all(result.tx_counts[cid].get("Unlock", 0) == 1 for cid in path.chains):
        raise CostError(f"settlement did not complete: {result.outcomes}")
    return run


def htlc_cost(interactions: int, n: int = 1, unit: int = 30, seed: int = 0) -> dict[str, int]:
    """Every interaction is its own on-chain HTLC payment over the path."""
    if interactions < 1:
        raise CostError("N must be >= 1")
    base = simple_path(n)
    path = simple_path(n, amount=unit, rate=base.rates[0], drain=base.drain_rates[0])
    totals: dict[str, int] = {}
    for k in range(interactions):
        _merge(totals, run_htlc_baseline(path, seed=seed + k).tx_counts)
    return totals


@dataclass
class CostRow:
    interactions: int
    ccn: dict[str, int]
    htlc: dict[str, int]

    @property
    def ccn_total(self) -> int:
        return sum(self.ccn.values())

    @property
    def htlc_total(self) -> int:
        return sum(self.htlc.values())


@dataclass
class CostTable:
    n: int
    rows: list[CostRow] = field(default_factory=list)

    def ccn_constant(self) -> bool:
        return len({row.ccn_total for row in self.rows}) == 1

    def htlc_linear(self) -> bool:
        if not self.rows:
            return False
        first = self.rows[0]
        per = first.htlc_total / first.interactions
        return per > 0 and all(row.htlc_total == per * row.interactions for row in self.rows)

    def ok(self) -> bool:
        return self.ccn_constant() and self.htlc_linear()

    def to_dict(self) -> dict:
        return {
            "hops": self.n,
            "ccn_constant": self.ccn_constant(),
            "htlc_linear": self.htlc_linear(),
            "rows": [
                {"N": r.interactions, "ccn_total": r.ccn_total, "htlc_total": r.htlc_total,
                 "ccn": dict(sorted(r.ccn.items())), "htlc": dict(sorted(r.htlc.items()))}
                for r in self.rows
            ],
        }


def cost_table(ns: Sequence[int] = DEFAULT_NS, n: int = 1, unit: int = 30, seed: int = 0) -> CostTable:
    table = CostTable(n)
    for count in ns:
        table.rows.append(CostRow(count, ccn_cost(count, n, unit, seed), htlc_cost(count, n, unit, seed)))
    return table
