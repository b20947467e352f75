"""The unlinkability game: two concurrent payments through a shared honest segment.

Topology for payment k (b picks the receiver): S_k - I_k - H1 - H2 - J_m - R_m over five
chains, m = k xor b. H1 and H2 are honest and shared by both payments. The adversary sees
every on-chain event plus the view of its corrupted intermediaries (Prepare statements,
channel receipts, own escrows) and must output b.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Protocol, Sequence

from .chain import SimChain
from .channel import Channel, pay_receipt
from .circuits import CircuitKind, Witness, prove, unlock_statement
from .crypto import KeyPair, amount_digest, compute_locks, derive_secret_chain, primary_lock, sha256, xor256
from .txs import TxEnvelope

ROLES = ("I", "H1", "H2", "J")
CHAINS = tuple(f"u{i}" for i in range(5))
ADVERSARIES = ("hashlock-matcher", "amount-correlator", "xor-relation", "combined")
CORRUPTION = {"sender-side": frozenset({"I"}), "both-sides": frozenset({"I", "J"})}


class GameError(ValueError):
    pass


@dataclass(frozen=True)
class Traffic:
    """Background intra-chain receipts per settled channel hop, and the cross-chain value range."""

    min_receipts: int = 1
    max_receipts: int = 8
    max_amount: int = 250
    value_range: tuple[int, int] = (10, 50)

    def __post_init__(self):
        if not 0 <= self.min_receipts <= self.max_receipts or self.max_amount < 1:
            raise GameError("traffic needs 0 <= min_receipts <= max_receipts and max_amount >= 1")
        if not 1 <= self.value_range[0] <= self.value_range[1]:
            raise GameError("value_range must be a non-empty positive interval")

    @classmethod
    def none(cls) -> "Traffic":
        return cls(min_receipts=0, max_receipts=0)


@dataclass
class CorruptView:
    name: str
    statements: list[dict]  # one Prepare statement per payment the node forwards
    receipts: list[tuple[str, str, str, int]]  # (kind, snd, rcv, amount)
    escrows: list[str]


@dataclass
class Transcript:
    protocol: str
    senders: tuple[str, str]
    receivers: tuple[str, str]
    rates: tuple[Fraction, ...]
    events: list[dict]
    views: dict[str, CorruptView]


class Adversary(Protocol):
    def __call__(self, t: Transcript, rng: random.Random) -> int: ...


def path_parties(k: int, m: int) -> list[str]:
    return [f"S{k}", f"I{k}", "H1", "H2", f"J{m}", f"R{m}"]


def role_of(name: str) -> Optional[str]:
    for role in ROLES:
        if name == role or (len(role) == 1 and name[:-1] == role):
            return role
    return None


def validate_corruption(corrupt: frozenset[str]) -> None:
    unknown = set(corrupt) - set(ROLES)
    if unknown:
        raise GameError(f"unknown roles {sorted(unknown)}")
    if set(corrupt) >= set(ROLES):
        raise GameError("every intermediary on the path is corrupted; the threat model needs an honest node")


def parse_corruption(spec: str) -> frozenset[str]:
    """A named set ("sender-side", "both-sides") or comma-separated roles such as "I,H2"."""
    corrupt = CORRUPTION.get(spec)
    if corrupt is None:
        corrupt = frozenset(r.strip() for r in spec.split(",") if r.strip())
        if not corrupt:
            raise GameError("empty corruption set")
    validate_corruption(corrupt)
    return corrupt


# ---------------------------------------------------------------------------
# Challenger
# ---------------------------------------------------------------------------


def _intra(rng: random.Random, traffic: Traffic) -> list[int]:
    return [rng.randint(1, traffic.max_amount) for _ in range(rng.randint(traffic.min_receipts, traffic.max_receipts))]


def play_trial(b: int, rng: random.Random, *, protocol: str = "ccn", traffic: Traffic = Traffic(),
               corrupt: frozenset[str] = CORRUPTION["sender-side"],
               rates: Sequence[Fraction] = (1, 1, 1, 1)) -> Transcript:
    validate_corruption(corrupt)
    rates = tuple(Fraction(r) for r in rates)
    lo, hi = traffic.value_range
    if "J" in corrupt:
        # both ends see the forwarded cross-chain value; the challenge payments must match
        x = rng.randint(lo, hi)
        values = [x, x]
    else:
        values = [rng.randint(lo, hi), rng.randint(lo, hi)]
    chains = {cid: SimChain(cid) for cid in CHAINS}
    keys: dict[tuple[str, str], KeyPair] = {}
    seed_base = rng.getrandbits(64)

    def key(name: str, cid: str) -> KeyPair:
        if (name, cid) not in keys:
            keys[name, cid] = KeyPair.from_seed(sha256(f"{seed_base}:{name}:{cid}".encode()))
        return keys[name, cid]

    payments = []
    views: dict[str, CorruptView] = {}
    for k in (0, 1):
        m = k ^ b
        parties = path_parties(k, m)
        if protocol == "htlc":
            s = rng.getrandbits(256).to_bytes(32, "big")
            s1 = [s] * 5
            plocks = [primary_lock(s)] * 5
            slocks = [None] * 4
            z2 = [bytes(32)] * 4
            s2 = [s] * 4
        else:
            sc = derive_secret_chain(4, rng.getrandbits(64))
            locks = compute_locks(sc)
            s1, plocks, slocks, z2, s2 = sc.s1, locks.primary, locks.secondary, sc.z2, sc.s2
        amounts = []
        receipts: dict[int, list] = {}
        for hop in range(5):
            locker, ben = parties[hop], parties[hop + 1]
            cross = math.floor(values[k] * math.prod(rates[:hop]))
            intra = _intra(rng, traffic)
            if role_of(locker) in corrupt or role_of(ben) in corrupt:
                # a corrupted endpoint holds the signed receipts, so they are real
                ch = Channel(f"{CHAINS[hop]}/{locker}-{ben}", CHAINS[hop], locker, ben, 10**6, 0,
                             keys={locker: key(locker, CHAINS[hop]), ben: key(ben, CHAINS[hop])})
                pay_receipt(ch, ch.make_receipt("cross", locker, cross, path_id=f"p{k}"))
                for v in intra:
                    pay_receipt(ch, ch.make_receipt("intra", locker, v))
                receipts[hop] = [(r.kind, r.snd, r.rcv, r.amount) for r in ch.receipt_log]
            amounts.append(cross + sum(intra))
            chains[CHAINS[hop]].register(locker, amounts[-1])
            chains[CHAINS[hop]].register(ben, 0)
        payments.append((parties, s1, plocks, slocks, z2, s2, amounts))
        for j, name in enumerate(parties[1:5], start=1):
            if role_of(name) not in corrupt:
                continue
            hops = [j - 1] + ([j] if j < 4 else [])
            statement = {
                "lock1": {i: plocks[i] for i in (j - 1, j)},
                "lock2": {i: slocks[i] for i in hops if slocks[i] is not None},
                "z2": {i: z2[i] for i in hops} if protocol == "ccn" else {},
                "s2": {j: s2[j]} if protocol == "ccn" and j < 4 else {},
            }
            view = views.setdefault(name, CorruptView(name, [], [], []))
            view.statements.append(statement)
            view.receipts.extend(receipts[j - 1] + receipts[j])

    escrow_ids: dict[tuple[int, int], str] = {}
    for hop in range(5):
        order = [0, 1]
        rng.shuffle(order)
        for k in order:
            parties, s1, plocks, slocks, z2, s2, amounts = payments[k]
            locker, ben = parties[hop], parties[hop + 1]
            tx_id = chains[CHAINS[hop]].submit_tx(TxEnvelope("Lock", locker, {
                "beneficiary": ben, "amount": amounts[hop], "primary_lock": plocks[hop],
                "secondary_lock": slocks[hop] if hop < 4 else None, "drain_rate": 0,
                "timelock": 100, "locker_pk": key(locker, CHAINS[hop]).pk,
                "beneficiary_pk": key(ben, CHAINS[hop]).pk, "protocol": protocol, "appeal_window": 10,
            }))
            escrow_ids[k, hop] = chains[CHAINS[hop]].object_id(tx_id)
        for c in chains.values():
            c.advance()
    for hop in reversed(range(5)):
        order = [0, 1]
        rng.shuffle(order)
        for k in order:
            parties, s1, plocks, slocks, z2, s2, amounts = payments[k]
            locker, ben = parties[hop], parties[hop + 1]
            eid = escrow_ids[k, hop]
            if protocol == "htlc":
                payload = {"escrow_id": eid, "preimage": s1[hop]}
            else:
                lk = key(locker, CHAINS[hop])
                sig = lk.sign(amount_digest(plocks[hop], amounts[hop]))
                if hop == 4:
                    kind, w = CircuitKind.UNLOCK_TERMINAL, Witness({})
                else:
                    kind, w = CircuitKind.UNLOCK_INTERMEDIARY, Witness({"s1_next": s1[hop + 1], "z2": z2[hop]})
                st = unlock_statement(kind, plocks[hop], s1[hop], amounts[hop], sig, lk.pk)
                payload = {"escrow_id": eid, "statement": st, "proof": prove(kind, st, w)}
            chains[CHAINS[hop]].submit_tx(TxEnvelope("Unlock", ben, payload))
        for c in chains.values():
            c.advance()
    for (k, hop), eid in escrow_ids.items():
        parties = payments[k][0]
        for name in (parties[hop], parties[hop + 1]):
            if name in views:
                views[name].escrows.append(eid)

    events = []
    for cid in CHAINS:
        for ev in chains[cid].events:
            d = {"chain": cid, "height": ev.height, "label": ev.label, "escrow": ev.subject, **ev.payload}
            events.append(d)
    return Transcript(protocol, ("S0", "S1"), ("R0", "R1"), rates, events, views)


# ---------------------------------------------------------------------------
# Adversaries
# ---------------------------------------------------------------------------


def _escrow_table(t: Transcript) -> dict[str, dict]:
    table: dict[str, dict] = {}
    for ev in t.events:
        if ev["label"] == "Locked":
            table[ev["escrow"]] = {
                "id": ev["escrow"], "chain": ev["chain"], "locker": ev["locker"], "beneficiary": ev["beneficiary"],
                "amount": ev["amount"], "lock": ev["primary_lock"], "secondary": ev.get("secondary_lock"),
            }
        elif ev["label"] == "Unlocked":
            table[ev["escrow"]]["revealed"] = ev["revealed_s1"]
    return table


def _side_views(t: Transcript) -> tuple[dict[int, CorruptView], dict[int, CorruptView]]:
    senders = {int(n[1:]): v for n, v in t.views.items() if role_of(n) == "I"}
    receivers = {int(n[1:]): v for n, v in t.views.items() if role_of(n) == "J"}
    return senders, receivers


def _receiver_escrows(table: dict[str, dict], m: int) -> list[dict]:
    return [e for e in table.values() if e["beneficiary"] in (f"R{m}", f"J{m}")]


def _decide(scores: dict[int, Optional[float]], rng: random.Random) -> int:
    """scores[b] is a cost (lower is better); None means no evidence."""
    s0, s1 = scores.get(0), scores.get(1)
    if s0 is None or s1 is None or s0 == s1:
        return rng.randrange(2)
    return 0 if s0 < s1 else 1


def _sender_escrows(table: dict[str, dict], k: int) -> list[dict]:
    return [e for e in table.values() if e["locker"] in (f"S{k}", f"I{k}")]


def _link_vote(linked: Callable[[dict, dict], bool], table: dict[str, dict], rng: random.Random) -> int:
    evidence = {0: 0.0, 1: 0.0}
    seen = False
    for k in (0, 1):
        for m in (0, 1):
            if any(linked(a, z) for a in _sender_escrows(table, k) for z in _receiver_escrows(table, m)):
                seen = True
                evidence[k ^ m] -= 1
    return _decide(evidence if seen else {}, rng)


def hashlock_matcher(t: Transcript, rng: random.Random) -> int:
    """Public digest equality between sender-side and receiver-side escrows."""
    table = _escrow_table(t)
    return _link_vote(lambda a, z: a["lock"] == z["lock"], table, rng)


def amount_correlator(t: Transcript, rng: random.Random) -> int:
    table = _escrow_table(t)
    senders, receivers = _side_views(t)
    values = {}
    for k, view in senders.items():
        values[k] = sum(a for kind, snd, rcv, a in view.receipts if kind == "cross" and rcv == view.name)
    if not values:
        return rng.randrange(2)
    gain = math.prod(t.rates)
    cost = {0: 0.0, 1: 0.0}
    for m in (0, 1):
        # the receiving hop's escrow amount is cross value plus unpredictable intra-chain traffic
        observed = [e["amount"] for e in table.values() if e["beneficiary"] == f"R{m}"]
        for k, x in values.items():
            for amount in observed:
                cost[k ^ m] += abs(amount - x * gain)
    return _decide(cost, rng)


def _components(t: Transcript) -> dict[str, int]:
    """Union escrows connected by known preimages and XOR offsets visible to the adversary."""
    table = _escrow_table(t)
    by_lock: dict[bytes, list[str]] = {}
    for eid, e in table.items():
        by_lock.setdefault(e["lock"], []).append(eid)
    parent = {eid: eid for eid in table}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        parent[find(a)] = find(b)

    offsets = set()
    for view in t.views.values():
        for st in view.statements:
            offsets.update(st["z2"].values())
            linked = [eid for d in st["lock1"].values() for eid in by_lock.get(d, [])]
            for a, b in zip(linked, linked[1:]):
                union(a, b)
    for eid, e in table.items():
        s = e.get("revealed")
        if s is None:
            continue
        for z in offsets:
            for other in by_lock.get(primary_lock(xor256(s, z)), []):
                union(eid, other)
        for other in by_lock.get(e["lock"], []):
            union(eid, other)
    return {eid: find(eid) for eid in table}


def xor_relation(t: Transcript, rng: random.Random) -> int:
    comp = _components(t)
    table = _escrow_table(t)
    return _link_vote(lambda a, z: comp[a["id"]] == comp[z["id"]], table, rng)


def combined(t: Transcript, rng: random.Random) -> int:
    """Structural evidence first (shared digests, XOR chains), amounts as the fallback."""
    for attack in (hashlock_matcher, xor_relation):
        probe = random.Random(0)
        first, second = attack(t, probe), attack(t, random.Random(1))
        if first == second:
            return first
    return amount_correlator(t, rng)


ADVERSARY_IMPLS: dict[str, Callable[[Transcript, random.Random], int]] = {
    "hashlock-matcher": hashlock_matcher,
    "amount-correlator": amount_correlator,
    "xor-relation": xor_relation,
    "combined": combined,
}


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def wilson(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return centre - half, centre + half


@dataclass
class GameReport:
    protocol: str
    adversary: str
    trials: int
    wins: int
    corruption: str
    traffic: Traffic
    per_adversary: dict[str, int] = field(default_factory=dict)

    @property
    def success(self) -> float:
        return self.wins / self.trials

    @property
    def advantage(self) -> float:
        return abs(self.success - 0.5)

    def interval(self) -> tuple[float, float]:
        lo, hi = wilson(self.wins, self.trials)
        return lo - 0.5, hi - 0.5

    def to_dict(self) -> dict:
        lo, hi = self.interval()
        return {
            "protocol": self.protocol,
            "adversary": self.adversary,
            "trials": self.trials,
            "wins": self.wins,
            "success_rate": self.success,
            "advantage": self.advantage,
            "success_minus_half_ci95": [lo, hi],
            "corruption": self.corruption,
            "traffic": {"min_receipts": self.traffic.min_receipts, "max_receipts": self.traffic.max_receipts, "max_amount": self.traffic.max_amount,
                        "value_range": list(self.traffic.value_range)},
            "all_adversaries": {
                name: {"wins": w, "advantage": abs(w / self.trials - 0.5)} for name, w in self.per_adversary.items()
            },
        }


def run_game(trials: int, adversary: str = "combined", protocol: str = "ccn", *, seed: int = 0,
             traffic: Traffic = Traffic(), corruption: str = "sender-side",
             rates: Sequence[Fraction] = (1, 1, 1, 1)) -> GameReport:
    if trials < 100:
        raise GameError("the game needs at least 100 trials")
    if adversary not in ADVERSARY_IMPLS:
        raise GameError(f"unknown adversary {adversary!r}")
    corrupt = parse_corruption(corruption)
    rng = random.Random(seed)
    wins = {name: 0 for name in ADVERSARY_IMPLS}
    for _ in range(trials):
        b = rng.randrange(2)
        t = play_trial(b, random.Random(rng.getrandbits(64)), protocol=protocol, traffic=traffic,
                       corrupt=corrupt, rates=rates)
        guess_seed = rng.getrandbits(64)
        for name, attack in ADVERSARY_IMPLS.items():
            wins[name] += attack(t, random.Random(guess_seed)) == b
    return GameReport(protocol, adversary, trials, wins[adversary], corruption, traffic, wins)
