"""Multi-hop payment driver: prepare, lock cascade, confirmation, unlock cascade and refunds.

Parties are P_0 (sender) .. P_{n+1} (receiver). Hop i runs on chain i with locker P_i
and beneficiary P_{i+1}. Every agent decision is a function of its own knowledge and the
events visible to it, so whole runs are reproducible from (path, schedule, seed).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

from .chain import SimChain, Watcher, watcher_scan
from .circuits import CircuitKind, Proof, Statement, Witness, prove, unlock_statement, verify_proof
from .crypto import (
    KeyPair,
    LockSet,
    SecretChain,
    amount_digest,
    compute_locks,
    derive_secret_chain,
    primary_lock,
    random_secret,
    sha256,
    verify_sig,
    xor256,
)
from .escrow import DEFAULT_APPEAL_WINDOW, EscrowInstance, EscrowState, TERMINAL
from .txs import Event, TxEnvelope, TxRejected

log = logging.getLogger(__name__)

STRATEGIES = ("honest", "refund2", "abstain")
PHASES = ("lock", "confirm", "unlock", "refund")
REVEAL_LABELS = frozenset({"Unlocked", "Refunded", "Appealed"})


class PathError(ValueError):
    pass


class PrepareAborted(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Configuration types
# ---------------------------------------------------------------------------


@dataclass
class PathSpec:
    chains: list[str]
    parties: list[str]
    amount: int
    rates: list[Fraction]
    drain_rates: list[Fraction]
    timelocks: list[int]
    min_gap: int = 3

    def __post_init__(self):
        self.rates = [Fraction(r) for r in self.rates]
        self.drain_rates = [Fraction(r) for r in self.drain_rates]

    @property
    def n(self) -> int:
        return len(self.chains) - 1

    def validate(self) -> "PathSpec":
        n = self.n
        if n < 0:
            raise PathError("need at least one chain")
        if len(self.parties) != n + 2:
            raise PathError(f"{n + 1} chains need {n + 2} parties, got {len(self.parties)}")
        if len(set(self.parties)) != len(self.parties) or len(set(self.chains)) != len(self.chains):
            raise PathError("party and chain names must be unique")
        if len(self.rates) != n or len(self.drain_rates) != n + 1 or len(self.timelocks) != n + 1:
            raise PathError("rates need n entries; drain_rates and timelocks need n+1")
        if not isinstance(self.amount, int) or self.amount <= 0:
            raise PathError("principal amount must be a positive integer")
        if any(r <= 0 for r in self.rates) or any(r < 0 for r in self.drain_rates):
            raise PathError("exchange rates must be positive and drain rates non-negative")
        if self.min_gap <= 2:
            raise PathError("timelock gap must exceed 2 blocks per hop")
        for i in range(n):
            if self.timelocks[i] - self.timelocks[i + 1] < self.min_gap:
                raise PathError(f"timelocks must decrease by at least {self.min_gap} blocks per hop")
        return self

    def locker(self, hop: int) -> str:
        return self.parties[hop]

    def beneficiary(self, hop: int) -> str:
        return self.parties[hop + 1]


def default_timelocks(n: int, gap: int = 4, slack: int = 8, start: int = 0) -> list[int]:
    """Timelocks leaving room for a cascade that spends two blocks per lock."""
    terminal = start + 2 * n + slack
    return [terminal + gap * (n - i) for i in range(n + 1)]


def simple_path(n: int, amount: int = 30, rate: Fraction | int = 2, drain: Fraction | int = 1,
                gap: int = 4, slack: int = 8) -> PathSpec:
    """A path with uniform exchange rate and rate-consistent drain rates."""
    rate, drain = Fraction(rate), Fraction(drain)
    names = ["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"]
    parties = names[: n + 2] if n + 2 <= len(names) else [f"p{i}" for i in range(n + 2)]
    return PathSpec(
        chains=[f"chain{i}" for i in range(n + 1)],
        parties=parties,
        amount=amount,
        rates=[rate] * n,
        drain_rates=[drain * rate**i for i in range(n + 1)],
        timelocks=default_timelocks(n, gap, slack),
        min_gap=min(gap, 3),
    ).validate()


@dataclass(frozen=True)
class Fault:
    """``trigger`` is a phase name or a height; ``duration`` None means permanent."""

    party: str
    trigger: str | int
    kind: str = "active"
    duration: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("active", "passive"):
            raise PathError(f"unknown fault kind {self.kind!r}")
        if isinstance(self.trigger, str) and self.trigger not in PHASES:
            raise PathError(f"unknown fault trigger {self.trigger!r}")


@dataclass
class OfflineSchedule:
    faults: list[Fault] = field(default_factory=list)

    def for_party(self, party: str) -> list[Fault]:
        return [f for f in self.faults if f.party == party]

    def validate(self, path: PathSpec) -> "OfflineSchedule":
        for f in self.faults:
            if f.party not in path.parties:
                raise PathError(f"fault names unknown party {f.party!r}")
            if f.kind == "passive" and f.party in (path.parties[0], path.parties[-1]):
                raise PathError("passive faults apply to intermediaries")
        return self


@dataclass(frozen=True)
class CommitmentPlan:
    """A locker drawing a check against its available funds at a given height."""

    hop: int
    rcv: str
    amount: int
    at: int


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------


@dataclass
class Confirmation:
    amount: int
    digest: bytes
    sig_locker: bytes
    sig_beneficiary: bytes
    height: int


@dataclass
class HopState:
    index: int
    chain_id: str
    escrow_id: Optional[str] = None
    lock_submitted: Optional[int] = None
    confirmation: Optional[Confirmation] = None


@dataclass
class PartyAgent:
    name: str
    index: int
    keys: dict[str, KeyPair] = field(repr=False)
    strategy: str = "honest"
    online: bool = True
    faults: list[Fault] = field(default_factory=list)
    statement: Optional[Statement] = None
    proof: Optional[Proof] = None
    z_up: Optional[bytes] = None  # z2 of the incoming hop
    s2_down: Optional[bytes] = None  # secondary pair of the outgoing hop
    z_down: Optional[bytes] = None
    secrets: Optional[SecretChain] = None  # receiver only
    known_s1: dict[int, bytes] = field(default_factory=dict)
    pending: dict[tuple[str, int], int] = field(default_factory=dict)
    offline_since: Optional[int] = None
    offline_until: Optional[int] = None  # None with offline_since set means permanent
    fired: set = field(default_factory=set)

    @property
    def honest(self) -> bool:
        return self.strategy == "honest" and not any(f.kind == "active" for f in self.faults)

    def go_offline(self, height: int, duration: Optional[int]) -> None:
        self.online = False
        self.offline_since = height
        self.offline_until = None if duration is None else height + duration

    def refresh(self, height: int) -> None:
        if not self.online and self.offline_until is not None and height >= self.offline_until:
            self.online = True
        for f in self.faults:
            if isinstance(f.trigger, int) and f not in self.fired and height >= f.trigger:
                self.fired.add(f)
                self.go_offline(height, f.duration)

    def reach(self, phase: str, height: int, passive_return: int) -> bool:
        """Fire phase-triggered faults before acting in ``phase``; return online status."""
        for f in self.faults:
            if f.trigger == phase and f not in self.fired:
                self.fired.add(f)
                duration = f.duration
                if f.kind == "passive" and duration is None:
                    duration = max(1, passive_return - height)
                self.go_offline(height, duration)
        return self.online


# ---------------------------------------------------------------------------
# The run
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    protocol: str
    height: int
    halted_at: Optional[int]
    events: list[Event]
    balances: dict[str, dict[str, int]]
    initial: dict[str, dict[str, int]]
    escrows: dict[str, dict]
    outcomes: dict[str, str]
    availability: dict[str, list[tuple[int, int]]]
    tx_counts: dict[str, dict[str, int]]
    confirmations: dict[int, int]

    def net(self, party: str) -> dict[str, int]:
        return {
            c: self.balances[c].get(party, 0) - self.initial[c].get(party, 0)
            for c in self.balances
            if party in self.balances[c] or party in self.initial[c]
        }


class PaymentRun:
    """A single payment over ``path`` with its own chains, agents and watchers."""

    def __init__(
        self,
        path: PathSpec,
        schedule: Optional[OfflineSchedule] = None,
        strategies: Optional[dict[str, str]] = None,
        *,
        protocol: str = "ccn",
        seed: int = 0,
        watchers_per_chain: int = 1,
        appeal_window: int = DEFAULT_APPEAL_WINDOW,
        visibility_delay: int = 1,
        lock_delay: int = 1,
        start: int = 0,
        funding: Optional[Sequence[int]] = None,
        commitments: Sequence[CommitmentPlan] = (),
        horizon: Optional[int] = None,
        check_conservation: bool = True,
    ):
        if protocol not in ("ccn", "htlc"):
            raise PathError(f"unknown protocol {protocol!r}")
        self.path = path.validate()
        self.schedule = (schedule or OfflineSchedule()).validate(path)
        self.protocol = protocol
        self.seed = seed
        self.appeal_window = appeal_window
        self.visibility_delay = visibility_delay
        self.lock_delay = lock_delay
        self.start = start
        self.commitments = list(commitments)
        strategies = strategies or {}
        for name, s in strategies.items():
            if s not in STRATEGIES or name not in path.parties:
                raise PathError(f"bad strategy {name}={s}")
        n = path.n
        self.passive_return = max(path.timelocks) + appeal_window + 2
        self.horizon = horizon if horizon is not None else self.passive_return + appeal_window + 8
        self.h = 0
        self.halted_at: Optional[int] = None
        if funding is None:
            funding = [math.ceil(path.amount * math.prod(path.rates[:i])) + 100 for i in range(n + 1)]
        self.chains: dict[str, SimChain] = {}
        for i, cid in enumerate(path.chains):
            self.chains[cid] = SimChain(
                cid, {path.locker(i): funding[i], path.beneficiary(i): 0},
                check_conservation=check_conservation,
            )
        self.initial = {cid: dict(c.accounts) for cid, c in self.chains.items()}
        self.watchers = [
            Watcher(cid, f"miner{k}@{cid}", visibility_delay)
            for cid in path.chains for k in range(watchers_per_chain)
        ]
        for w in self.watchers:
            self.chains[w.home_chain].register(w.address, 0)
            self.initial[w.home_chain][w.address] = 0
        self.agents: dict[str, PartyAgent] = {}
        for j, name in enumerate(path.parties):
            adjacent = [path.chains[i] for i in (j - 1, j) if 0 <= i <= n]
            keys = {cid: KeyPair.from_seed(sha256(f"{seed}:{name}:{cid}".encode())) for cid in adjacent}
            self.agents[name] = PartyAgent(name, j, keys, strategies.get(name, "honest"),
                                           faults=self.schedule.for_party(name))
        self.hops = [HopState(i, cid) for i, cid in enumerate(path.chains)]
        self.secrets: Optional[SecretChain] = None
        self.locks: Optional[LockSet] = None
        self.prepared = False
        self.availability: dict[str, list[tuple[int, int]]] = {p: [] for p in path.parties}
        self.paid_to_locker: dict[int, int] = {}

    # -- helpers ------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.path.n

    def agent(self, j: int) -> PartyAgent:
        return self.agents[self.path.parties[j]]

    def chain(self, hop: int) -> SimChain:
        return self.chains[self.path.chains[hop]]

    def escrow(self, hop: int) -> Optional[EscrowInstance]:
        eid = self.hops[hop].escrow_id
        return None if eid is None else self.chain(hop).escrows.get(eid)

    def visible(self, hop: int) -> list[Event]:
        cutoff = self.h - (self.visibility_delay - 1)
        return [e for e in self.chain(hop).events if e.height <= cutoff]

    def visible_escrow(self, hop: int) -> Optional[EscrowInstance]:
        """The hop's escrow, provided its Locked event is visible."""
        e = self.escrow(hop)
        if e is None:
            return None
        return e if any(ev.label == "Locked" and ev.subject == e.escrow_id for ev in self.visible(hop)) else None

    def revealed_s1(self, hop: int) -> Optional[bytes]:
        eid = self.hops[hop].escrow_id
        if eid is None:
            return None
        for ev in self.visible(hop):
            if ev.subject == eid and ev.label in REVEAL_LABELS and ev.payload.get("revealed_s1"):
                return ev.payload["revealed_s1"]
        return None

    def _submit(self, agent: PartyAgent, hop: int, tx: TxEnvelope) -> Optional[int]:
        key = (tx.kind, hop)
        chain = self.chain(hop)
        if key in agent.pending and agent.pending[key] not in chain.outcomes:
            return None
        try:
            tx_id = chain.submit_tx(tx)
        except TxRejected as err:
            log.debug("%s could not submit %s: %s", agent.name, tx.kind, err)
            return None
        agent.pending[key] = tx_id
        return tx_id

    # -- prepare ------------------------------------------------------------

    def prepare(self, tamper: Optional[Callable[[str, Proof], Proof]] = None) -> None:
        n = self.n
        if self.protocol == "htlc":
            s = random_secret(self.seed)
            self.secrets = SecretChain(n, tuple([s] * (n + 1)), tuple([bytes(32)] * n), tuple([s] * n))
            digest = primary_lock(s)
            self.locks = LockSet(tuple([digest] * (n + 1)), tuple([None] * n))
            receiver = self.agent(n + 1)
            receiver.secrets = self.secrets
            for j in range(1, n + 1):
                self.agent(j).z_up = bytes(32)
            self.prepared = True
            return
        chain = derive_secret_chain(n, self.seed)
        locks = compute_locks(chain)
        self.secrets, self.locks = chain, locks
        witness = Witness({"s1": chain.s1, "z2": chain.z2, "s2": chain.s2})
        for j, name in enumerate(self.path.parties):
            agent = self.agents[name]
            if j in (0, n + 1):
                hop = 0 if j == 0 else n
                lock2 = {hop: locks.secondary[hop]} if hop < n else {}
                kind = CircuitKind.PREPARE_ENDPOINT
                st = Statement(kind, {"n": n, "lock1": {hop: locks.primary[hop]}, "lock2": lock2})
            else:
                hops = [j - 1] + ([j] if j < n else [])
                kind = CircuitKind.PREPARE_INTERMEDIARY
                st = Statement(kind, {
                    "n": n,
                    "lock1": {i: locks.primary[i] for i in (j - 1, j)},
                    "lock2": {i: locks.secondary[i] for i in hops},
                    "z2": {i: chain.z2[i] for i in hops},
                    "s2": {j: chain.s2[j]} if j < n else {},
                })
            proof = prove(kind, st, witness)
            if tamper is not None:
                proof = tamper(name, proof)
            if not verify_proof(kind, st, proof):
                raise PrepareAborted(f"{name} rejected its prepare proof")
            agent.statement, agent.proof = st, proof
            if 0 < j:
                agent.z_up = chain.z2[j - 1] if j <= n else None
            if j < n:
                agent.s2_down, agent.z_down = chain.s2[j], chain.z2[j]
        self.agent(n + 1).secrets = chain
        self.agent(n + 1).z_up = None
        self.prepared = True

    # -- agent behaviour ----------------------------------------------------

    def projected_frozen(self, hop: int, at: int) -> int:
        e = self.escrow(hop)
        return max(0, e.locked - e.drained(at) - e.unlocked_paid)

    def _try_lock(self, agent: PartyAgent) -> None:
        i = agent.index
        if i > self.n or self.hops[i].lock_submitted is not None:
            return
        if i == 0:
            if self.h < self.start:
                return
            amount = self.path.amount
        else:
            up = self.visible_escrow(i - 1)
            if up is None or not self._lock_acceptable(i - 1, up):
                return
            locked_ev = next(ev for ev in self.visible(i - 1) if ev.label == "Locked" and ev.subject == up.escrow_id)
            if self.h < locked_ev.height + self.lock_delay:
                return
            base = up.locked if self.protocol == "htlc" else self.projected_frozen(i - 1, self.h + 1)
            amount = math.floor(self.path.rates[i - 1] * base)
        if self.h + 1 >= self.path.timelocks[i] or amount <= 0:
            return
        if not agent.reach("lock", self.h, self.passive_return):
            return
        tx = TxEnvelope("Lock", agent.name, {
            "beneficiary": self.path.beneficiary(i),
            "amount": amount,
            "primary_lock": self.locks.primary[i],
            "secondary_lock": self.locks.secondary[i] if i < self.n else None,
            "drain_rate": self.path.drain_rates[i] if self.protocol == "ccn" else 0,
            "timelock": self.path.timelocks[i],
            "locker_pk": agent.keys[self.path.chains[i]].pk,
            "beneficiary_pk": self.agent(i + 1).keys[self.path.chains[i]].pk,
            "protocol": self.protocol,
            "appeal_window": self.appeal_window,
        })
        tx_id = self._submit(agent, i, tx)
        if tx_id is not None:
            self.hops[i].lock_submitted = self.h
            self.hops[i].escrow_id = self.chain(i).object_id(tx_id)

    def _lock_acceptable(self, hop: int, e: EscrowInstance) -> bool:
        """The beneficiary's check of the upstream lock before it locks downstream."""
        secondary = self.locks.secondary[hop] if hop < self.n else None
        return (
            e.primary_lock == self.locks.primary[hop]
            and e.secondary_lock == secondary
            and e.beneficiary == self.path.beneficiary(hop)
            and e.timelock == self.path.timelocks[hop]
            and e.state is EscrowState.LOCK
        )

    def all_locked(self) -> bool:
        return all(self.visible_escrow(i) is not None for i in range(self.n + 1))

    def confirm_amount(self, hop: int) -> Optional[Confirmation]:
        """Off-chain exchange of signatures over amount_digest(lock, v)."""
        state = self.hops[hop]
        if state.confirmation is not None:
            return state.confirmation
        e = self.visible_escrow(hop)
        if e is None or e.state is not EscrowState.LOCK:
            return None
        if hop > 0 and self.hops[hop - 1].confirmation is None:
            return None  # a locker only signs downstream once it holds its own upstream signature
        locker, beneficiary = self.agent(hop), self.agent(hop + 1)
        if not (locker.reach("confirm", self.h, self.passive_return)
                and beneficiary.reach("confirm", self.h, self.passive_return)):
            return None
        cid = self.path.chains[hop]
        v = self.projected_frozen(hop, self.h + 1)
        if v <= 0:
            return None
        digest = amount_digest(e.primary_lock, v)
        sig_b = beneficiary.keys[cid].sign(digest)
        # the locker recomputes F for the next block and only then countersigns
        if v != self.projected_frozen(hop, self.h + 1) or not verify_sig(beneficiary.keys[cid].pk, digest, sig_b):
            return None
        sig_l = locker.keys[cid].sign(digest)
        state.confirmation = Confirmation(v, digest, sig_l, sig_b, self.h)
        return state.confirmation

    def _try_commitments(self) -> None:
        for plan in self.commitments:
            if plan.at != self.h:
                continue
            agent = self.agent(plan.hop)
            e = self.visible_escrow(plan.hop)
            if e is None or not agent.online or e.state not in (EscrowState.LOCK, EscrowState.UNLOCK):
                continue
            conf = self.hops[plan.hop].confirmation
            reserve = e.locked - e.unlocked_paid - (conf.amount if conf and e.state is EscrowState.LOCK else 0)
            if e.committed + plan.amount > reserve or plan.amount > e.available_at(self.h + 1):
                continue
            self.chain(plan.hop).submit_tx(TxEnvelope("Check", agent.name, {
                "escrow_id": e.escrow_id, "rcv": plan.rcv, "amount": plan.amount}))

    def _try_unlock(self, agent: PartyAgent) -> None:
        j = agent.index
        if j == 0:
            return
        hop = j - 1
        e = self.visible_escrow(hop)
        if e is None or e.state is not EscrowState.LOCK or self.h + 1 >= e.timelock:
            return
        if j == self.n + 1:
            secret, s_next = agent.secrets.s1[hop], None
            if self.protocol == "htlc" and not self.all_locked():
                return
        else:
            s_next = self.revealed_s1(j)
            if s_next is None:
                return
            secret = xor256(s_next, agent.z_up)
            if primary_lock(secret) != e.primary_lock:
                return
        agent.known_s1[hop] = secret
        conf = self.hops[hop].confirmation
        if self.protocol == "ccn" and conf is None:
            return
        if not agent.reach("unlock", self.h, self.passive_return):
            return
        if self.protocol == "htlc":
            payload = {"escrow_id": e.escrow_id, "preimage": secret}
        else:
            locker_pk = self.agent(hop).keys[self.path.chains[hop]].pk
            if j == self.n + 1:
                kind = CircuitKind.UNLOCK_TERMINAL
                witness = Witness({})
            else:
                kind = CircuitKind.UNLOCK_INTERMEDIARY
                witness = Witness({"s1_next": s_next, "z2": agent.z_up})
            st = unlock_statement(kind, e.primary_lock, secret, conf.amount, conf.sig_locker, locker_pk)
            payload = {"escrow_id": e.escrow_id, "statement": st, "proof": prove(kind, st, witness)}
        self._submit(agent, hop, TxEnvelope("Unlock", agent.name, payload))

    def _try_refund(self, agent: PartyAgent) -> None:
        i = agent.index
        if i > self.n:
            return
        e = self.escrow(i)
        if e is None or e.state in TERMINAL or self.h < e.timelock:
            return
        if agent.strategy == "abstain":
            return
        if not agent.reach("refund", self.h, self.passive_return):
            return
        base = {"escrow_id": e.escrow_id}
        if e.state is EscrowState.UNLOCK:
            if e.balance > 0:
                self._submit(agent, i, TxEnvelope("Refund1", agent.name, base))
            return
        if e.state is EscrowState.REFUND2_PENDING:
            if self.h + 1 > e.appeal_deadline:
                self._submit(agent, i, TxEnvelope("Refund1", agent.name, base))
            return
        if e.terminal_chain:
            self._submit(agent, i, TxEnvelope("Refund1", agent.name, base))
            return
        s_next = self.revealed_s1(i + 1)
        conf = self.hops[i].confirmation
        if s_next is not None and conf is not None and agent.strategy == "honest":
            secret = xor256(s_next, agent.z_down)
            pk = self.agent(i + 1).keys[self.path.chains[i]].pk
            kind = CircuitKind.UNLOCK_INTERMEDIARY
            st = unlock_statement(kind, e.primary_lock, secret, conf.amount, conf.sig_beneficiary, pk)
            proof = prove(kind, st, Witness({"s1_next": s_next, "z2": agent.z_down}))
            self._submit(agent, i, TxEnvelope("Refund3", agent.name, {**base, "statement": st, "proof": proof}))
            return
        self._submit(agent, i, TxEnvelope("Refund2", agent.name, {**base, "s2": agent.s2_down, "z2": agent.z_down}))

    def _notice_reveals(self, agent: PartyAgent) -> None:
        """A passively faulty intermediary drops out right after its downstream reveal."""
        j = agent.index
        if 0 < j <= self.n and self.revealed_s1(j) is not None:
            for f in agent.faults:
                if f.kind == "passive" and f.trigger == "unlock" and f not in agent.fired:
                    agent.reach("unlock", self.h, self.passive_return)

    # -- clock --------------------------------------------------------------

    def step(self) -> None:
        if not self.prepared:
            self.prepare()
        for agent in self.agents.values():
            agent.refresh(self.h)
        for agent in self.agents.values():
            self._notice_reveals(agent)
        if self.protocol == "ccn" and self.all_locked():
            for hop in range(self.n + 1):
                self.confirm_amount(hop)
        self._try_commitments()
        for agent in self.agents.values():
            if not agent.online:
                continue
            self._try_lock(agent)
            if agent.online:
                self._try_unlock(agent)
            if agent.online:
                self._try_refund(agent)
        if self.protocol == "ccn":
            for w in self.watchers:
                tx = watcher_scan(w, self.chains, self.h)
                if tx is not None:
                    self.chains[w.home_chain].submit_tx(tx)
        for cid in self.path.chains:
            self.chains[cid].advance()
        self.h += 1
        self._record_availability()

    def _record_availability(self) -> None:
        for j, name in enumerate(self.path.parties):
            if j > self.n:
                continue
            e = self.escrow(j)
            units = 0
            if e is not None:
                if e.state in (EscrowState.LOCK, EscrowState.UNLOCK):
                    units = e.available_at(self.h) + e.committed
                else:
                    units = sum(p.amount for p in e.payouts if p.role in ("locker", "commitment"))
            self.availability[name].append((self.h, units))

    def run_until(self, done: Callable[[], bool], limit: Optional[int] = None) -> bool:
        limit = self.horizon if limit is None else limit
        while not done():
            if self.h >= limit:
                return False
            self.step()
        return True

    def settled(self) -> bool:
        """Every escrow is closed out and no further lock can appear."""
        for i in range(self.n + 1):
            e = self.escrow(i)
            if e is None:
                if self.hops[i].lock_submitted is not None or self.h + 1 < self.path.timelocks[i]:
                    return False
            elif e.state not in TERMINAL and not (e.state is EscrowState.UNLOCK and e.balance == 0):
                return False
        return True

    def result(self) -> RunResult:
        events = sorted(
            (ev for cid in self.path.chains for ev in self.chains[cid].events),
            key=lambda ev: (ev.height, self.path.chains.index(ev.chain_id)),
        )
        escrows = {}
        outcomes = {}
        for i in range(self.n + 1):
            e = self.escrow(i)
            key = self.path.chains[i]
            if e is None:
                outcomes[key] = "NOT_LOCKED"
                continue
            escrows[key] = e.snapshot()
            outcomes[key] = outcome_label(e, self.chain(i).events)
        return RunResult(
            protocol=self.protocol,
            height=self.h,
            halted_at=self.halted_at,
            events=events,
            balances={cid: dict(c.accounts) for cid, c in self.chains.items()},
            initial={cid: dict(v) for cid, v in self.initial.items()},
            escrows=escrows,
            outcomes=outcomes,
            availability={k: list(v) for k, v in self.availability.items()},
            tx_counts={cid: c.tx_counts() for cid, c in self.chains.items()},
            confirmations={i: h.confirmation.amount for i, h in enumerate(self.hops) if h.confirmation},
        )


def outcome_label(e: EscrowInstance, events: Sequence[Event]) -> str:
    if e.state is EscrowState.REFUND:
        case = next((ev.payload.get("case") for ev in reversed(events)
                     if ev.subject == e.escrow_id and ev.label == "Refunded"), None)
        return f"REFUND_CASE{case}"
    if e.state is EscrowState.UNLOCK and e.balance == 0:
        return "UNLOCK_SETTLED"
    return e.state.value


# ---------------------------------------------------------------------------
# Phase drivers
# ---------------------------------------------------------------------------


def run_prepare(run: PaymentRun, tamper: Optional[Callable[[str, Proof], Proof]] = None) -> PaymentRun:
    run.prepare(tamper)
    return run


def run_lock_cascade(run: PaymentRun, patience: Optional[int] = None) -> int:
    """Step until every hop is locked or the cascade stalls; returns locked hop count."""
    if not run.prepared:
        run.prepare()
    patience = run.lock_delay + 3 if patience is None else patience
    last_progress = run.h
    locked = 0
    while run.h < run.horizon:
        count = sum(run.escrow(i) is not None for i in range(run.n + 1))
        if count != locked:
            locked, last_progress = count, run.h
        if run.all_locked():
            return run.n + 1
        if run.h - last_progress > patience and run.h >= run.start + patience:
            run.halted_at = locked
            return locked
        run.step()
    return locked


def run_unlock_cascade(run: PaymentRun) -> int:
    """Step until every hop unlocked or the last unlock window closes; returns unlocked hops."""
    def unlocked() -> int:
        return sum(
            1 for i in range(run.n + 1)
            if run.escrow(i) is not None and run.escrow(i).unlocked_paid > 0
        )
    run.run_until(lambda: unlocked() == run.n + 1, limit=run.path.timelocks[0])
    return unlocked()


def run_refund(run: PaymentRun) -> bool:
    """Step until every chain reaches a terminal settlement (or the horizon)."""
    return run.run_until(run.settled)


def run_payment(run: PaymentRun) -> RunResult:
    if not run.prepared:
        run.prepare()
    run_lock_cascade(run)
    run_unlock_cascade(run)
    run_refund(run)
    return run.result()


def run_htlc_baseline(path: PathSpec, schedule: Optional[OfflineSchedule] = None, **kwargs) -> RunResult:
    """Classic HTLC over the same path: shared hash lock, full amounts, no hourglass."""
    kwargs.pop("protocol", None)
    return run_payment(PaymentRun(path, schedule, protocol="htlc", **kwargs))


# ---------------------------------------------------------------------------
# Trace checks
# ---------------------------------------------------------------------------


def reveal_heights(result: RunResult, chains: Sequence[str]) -> dict[int, int]:
    out: dict[int, int] = {}
    for ev in result.events:
        if ev.label in REVEAL_LABELS and ev.payload.get("revealed_s1") and ev.chain_id in chains:
            hop = list(chains).index(ev.chain_id)
            out.setdefault(hop, ev.height)
    return out


def reveal_order_ok(result: RunResult, chains: Sequence[str]) -> bool:
    """s1 of hop i never appears on-chain before s1 of hop i+1."""
    seen = reveal_heights(result, chains)
    for hop, height in seen.items():
        if hop + 1 < len(chains) and not (hop + 1 in seen and seen[hop + 1] < height):
            return False
    return True


def lock_digests(result: RunResult) -> list[bytes]:
    out = []
    for ev in result.events:
        if ev.label == "Locked":
            out.append(ev.payload["primary_lock"])
            if ev.payload.get("secondary_lock"):
                out.append(ev.payload["secondary_lock"])
    return out
