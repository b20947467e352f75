"""Exhaustive atomicity checking over offline schedules and refund strategies."""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .escrow import EscrowState
from .orchestrator import (
    STRATEGIES,
    Fault,
    OfflineSchedule,
    PathSpec,
    PaymentRun,
    RunResult,
    run_payment,
    simple_path,
)

SENDER_FAULTS = (None, ("lock", "active"), ("confirm", "active"))
INTERMEDIARY_FAULTS = (None, ("lock", "active"), ("confirm", "active"), ("unlock", "active"), ("unlock", "passive"))
RECEIVER_FAULTS = (None, ("confirm", "active"), ("unlock", "active"))


def fault_options(path: PathSpec, j: int) -> tuple:
    if j == 0:
        return SENDER_FAULTS
    if j == path.n + 1:
        return RECEIVER_FAULTS
    return INTERMEDIARY_FAULTS


def expected_schedule_count(n: int) -> int:
    """Closed-form size of the leaf space: faults per party times strategies per locker."""
    return len(SENDER_FAULTS) * len(INTERMEDIARY_FAULTS) ** n * len(RECEIVER_FAULTS) * len(STRATEGIES) ** (n + 1)


@dataclass(frozen=True)
class Leaf:
    faults: tuple  # one option per party
    strategies: tuple  # one per locker

    def schedule(self, path: PathSpec) -> OfflineSchedule:
        return OfflineSchedule([
            Fault(path.parties[j], opt[0], opt[1])
            for j, opt in enumerate(self.faults) if opt is not None
        ])

    def strategy_map(self, path: PathSpec) -> dict[str, str]:
        return {path.parties[i]: s for i, s in enumerate(self.strategies)}

    def describe(self, path: PathSpec) -> str:
        parts = [f"{path.parties[j]}:{opt[1]}@{opt[0]}" for j, opt in enumerate(self.faults) if opt]
        parts += [f"{path.parties[i]}:{s}" for i, s in enumerate(self.strategies) if s != "honest"]
        return ", ".join(parts) or "all honest"


def enumerate_leaves(path: PathSpec) -> Iterator[Leaf]:
    per_party = [fault_options(path, j) for j in range(path.n + 2)]
    for faults in itertools.product(*per_party):
        for strategies in itertools.product(STRATEGIES, repeat=path.n + 1):
            yield Leaf(tuple(faults), tuple(strategies))


# ---------------------------------------------------------------------------
# Accounting
# ---------------------------------------------------------------------------


def locker_returns(result: RunResult, chain_id: str) -> int:
    snap = result.escrows.get(chain_id)
    if snap is None:
        return 0
    return sum(amount for _, amount, role in snap["payouts"] if role == "locker")


def beneficiary_credit(result: RunResult, chain_id: str) -> int:
    snap = result.escrows.get(chain_id)
    if snap is None:
        return 0
    return sum(amount for _, amount, role in snap["payouts"] if role == "beneficiary")


def honest_losses(run: PaymentRun, result: RunResult) -> list[str]:
    """Mechanical atomicity accounting for every honest party."""
    path = run.path
    n = path.n
    problems = []
    for j, name in enumerate(path.parties):
        if not run.agents[name].honest:
            continue
        if j <= n:
            snap = result.escrows.get(path.chains[j])
            if snap is not None:
                state = snap["state"]
                unsettled = state in (EscrowState.LOCK.value, EscrowState.REFUND2_PENDING.value) or (
                    state == EscrowState.UNLOCK.value and snap["locked"] > sum(p[1] for p in snap["payouts"])
                )
                if state == EscrowState.APPEAL.value:
                    problems.append(f"{name}: escrow on {path.chains[j]} seized by appeal")
                elif unsettled:
                    problems.append(f"{name}: escrow on {path.chains[j]} never settled ({state})")
            paid = beneficiary_credit(result, path.chains[j])
            if paid > 0 and 0 < j:
                if run.protocol == "htlc":
                    # no co-signed amount: the upstream escrow owes its full lock
                    owed = result.escrows[path.chains[j - 1]]["locked"] if path.chains[j - 1] in result.escrows else 0
                else:
                    owed = result.confirmations.get(j - 1, 0)
                got = beneficiary_credit(result, path.chains[j - 1])
                if owed <= 0 or got < owed:
                    problems.append(f"{name}: paid {paid} downstream but received {got} of {owed} upstream")
            if paid > 0 and j == 0 and beneficiary_credit(result, path.chains[n]) <= 0:
                problems.append(f"{name}: paid {paid} but the receiver was never paid")
    return problems


def payoff(result: RunResult, party: str) -> dict[str, int]:
    return result.net(party)


def dominated(actual: dict[str, int], counterfactual: dict[str, int]) -> bool:
    keys = set(actual) | set(counterfactual)
    le = all(actual.get(k, 0) <= counterfactual.get(k, 0) for k in keys)
    return le and any(actual.get(k, 0) < counterfactual.get(k, 0) for k in keys)


@dataclass
class LeafReport:
    leaf: str
    losses: list[str]
    excused: bool = False
    reason: str = ""

    @property
    def counterexample(self) -> bool:
        return bool(self.losses) and not self.excused


def _run(path: PathSpec, leaf: Leaf, watchers: int, seed: int, strategies: Optional[dict] = None):
    run = PaymentRun(path, leaf.schedule(path), strategies or leaf.strategy_map(path),
                     seed=seed, watchers_per_chain=watchers)
    return run, run_payment(run)


def _excused(path: PathSpec, leaf: Leaf, strategies: dict[str, str], result: RunResult,
             watchers: int, seed: int, depth: int = 0) -> Optional[str]:
    """Iterated strict dominance: find deviators whose honest play is strictly better for them
    and whose reversion leads to an outcome that is loss-free or excused in turn."""
    deviators = [p for p, s in strategies.items() if s != "honest"]
    for size in range(1, len(deviators) + 1):
        for group in itertools.combinations(deviators, size):
            cf_strategies = {**strategies, **{p: "honest" for p in group}}
            cf_run, cf = _run(path, leaf, watchers, seed, cf_strategies)
            if not all(dominated(payoff(result, p), payoff(cf, p)) for p in group):
                continue
            reason = f"{'/'.join(group)} strictly better off playing honest"
            if not honest_losses(cf_run, cf):
                return reason
            deeper = _excused(path, leaf, cf_strategies, cf, watchers, seed, depth + 1)
            if deeper is not None:
                return f"{reason}; then {deeper}"
    return None


def check_leaf(path: PathSpec, leaf: Leaf, watchers: int = 1, seed: int = 0) -> LeafReport:
    run, result = _run(path, leaf, watchers, seed)
    losses = honest_losses(run, result)
    report = LeafReport(leaf.describe(path), losses)
    if losses:
        reason = _excused(path, leaf, leaf.strategy_map(path), result, watchers, seed)
        if reason is not None:
            report.excused, report.reason = True, reason
    return report


@dataclass
class AtomicityReport:
    n: int
    watchers: int
    schedules: int
    expected: int
    counterexamples: list[LeafReport] = field(default_factory=list)
    excused: int = 0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "watchers_per_chain": self.watchers,
            "schedules": self.schedules,
            "expected_schedules": self.expected,
            "excused_dominated_deviations": self.excused,
            "counterexamples": [{"leaf": r.leaf, "losses": r.losses} for r in self.counterexamples],
        }


def _check_chunk(args) -> list[LeafReport]:
    path, leaves, watchers, seed = args
    return [check_leaf(path, leaf, watchers, seed) for leaf in leaves]


def enumerate_atomicity(n: int, watchers: int = 1, seed: int = 0, workers: Optional[int] = None,
                        path: Optional[PathSpec] = None) -> AtomicityReport:
    path = path or simple_path(n)
    leaves = list(enumerate_leaves(path))
    workers = workers if workers is not None else min(8, os.cpu_count() or 1)
    chunk = max(1, math.ceil(len(leaves) / max(1, workers * 4)))
    batches = [(path, leaves[k:k + chunk], watchers, seed) for k in range(0, len(leaves), chunk)]
    if workers > 1 and len(batches) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for batch in pool.map(_check_chunk, batches) for r in batch]
    else:
        results = [r for b in batches for r in _check_chunk(b)]
    report = AtomicityReport(n, watchers, len(leaves), expected_schedule_count(n))
    for r in results:
        if r.counterexample:
            report.counterexamples.append(r)
        elif r.losses:
            report.excused += 1
    return report


# ---------------------------------------------------------------------------
# Case 3: passive offline beneficiary
# ---------------------------------------------------------------------------


@dataclass
class Case3Outcome:
    description: str
    confirmed: int
    beneficiary_refund3: int
    payoff_refund3: int
    payoff_refund2: int
    appellant_gain: int

    @property
    def ok(self) -> bool:
        return (
            self.beneficiary_refund3 >= self.confirmed > 0
            and self.payoff_refund2 == 0
            and self.appellant_gain > 0
            and self.payoff_refund2 < self.payoff_refund3
        )


def case3_configurations(max_hops: int = 2) -> Iterator[tuple[PathSpec, tuple[int, ...], int, int]]:
    """(path, passive intermediaries, adversarial hop, watchers) for every Case-3 setting."""
    for n in range(1, max_hops + 1):
        for drain in (1, 2):
            path = simple_path(n, drain=drain)
            for size in range(1, n + 1):
                for passive in itertools.combinations(range(1, n + 1), size):
                    for j in passive:
                        for watchers in (1, 2):
                            yield path, passive, j - 1, watchers


def check_case3(path: PathSpec, passive: tuple[int, ...], hop: int, watchers: int, seed: int = 0) -> Case3Outcome:
    faults = OfflineSchedule([Fault(path.parties[j], "unlock", "passive") for j in passive])
    locker, cid = path.parties[hop], path.chains[hop]

    def branch(strategy: str) -> RunResult:
        run = PaymentRun(path, faults, {locker: strategy}, seed=seed, watchers_per_chain=watchers)
        return run_payment(run)

    honest, adversarial = branch("honest"), branch("refund2")
    seized = sum(
        amount for addr, amount, role in adversarial.escrows[cid]["payouts"] if role == "appellant"
    )
    return Case3Outcome(
        description=f"n={path.n} drain={path.drain_rates[0]} passive={[path.parties[j] for j in passive]} "
                    f"locker={locker} watchers={watchers}",
        confirmed=honest.confirmations.get(hop, 0),
        beneficiary_refund3=beneficiary_credit(honest, cid),
        payoff_refund3=locker_returns(honest, cid),
        payoff_refund2=locker_returns(adversarial, cid),
        appellant_gain=seized,
    )
