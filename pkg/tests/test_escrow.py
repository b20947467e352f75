from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import intermediary_claim, keys, terminal_claim, two_chain
from ccnlab import escrow as esc
from ccnlab.crypto import KeyPair, random_secret
from ccnlab.escrow import EscrowError, EscrowState

CONTRACT = KeyPair.from_seed(b"\x01" * 32)
K = keys("alice", "bob", "carol")


def alpha(rate=1, amount=30, timelock=40, height=0, window=10):
    chain, locks = two_chain()
    e = esc.lock("a/0", "alice", "bob", amount, locks.primary[0], locks.secondary[0], rate, timelock,
                 height, K["alice"].pk, K["bob"].pk, appeal_window=window)
    return e, chain, locks


def beta(rate=2, amount=60, timelock=30, height=0):
    chain, locks = two_chain()
    e = esc.lock("b/0", "bob", "carol", amount, locks.primary[1], None, rate, timelock,
                 height, K["bob"].pk, K["carol"].pk)
    return e, chain, locks


def completeness(e):
    assert e.paid_out == e.locked and e.balance == 0


def test_lock_initial_state():
    e, *_ = alpha()
    assert (e.locked, e.frozen, e.available, e.state) == (30, 30, 0, EscrowState.LOCK)


def test_zero_rate_never_drains():
    e, *_ = alpha(rate=0)
    assert esc.tick(e, 39) == (30, 0)


def test_zero_lock_rejected():
    with pytest.raises(EscrowError) as exc:
        alpha(amount=0)
    assert exc.value.code == "rejected-amount"


@pytest.mark.parametrize("amount,rate,expected", [(30, 1, 27), (60, 2, 54)])
def test_tick_three_blocks(amount, rate, expected):
    e, *_ = alpha(rate=rate, amount=amount)
    assert esc.tick(e, 3) == (expected, amount - expected)


def test_tick_floors_at_zero():
    e, *_ = alpha()
    assert esc.tick(e, 40) == (0, 30)


def test_check_bounds_and_sequence():
    e, *_ = alpha()
    esc.tick(e, 5)
    cmt = esc.check(e, "alice", "dave", 5, 5, CONTRACT)
    assert e.available == 0 and esc.verify_commitment(e.escrow_id, cmt, CONTRACT.pk)
    e2, *_ = alpha()
    with pytest.raises(EscrowError) as exc:
        esc.check(e2, "alice", "dave", 5, 3, CONTRACT)
    assert exc.value.code == "insufficient-available"
    esc.check(e2, "alice", "dave", 2, 3, CONTRACT)
    with pytest.raises(EscrowError):
        esc.check(e2, "alice", "dave", 2, 3, CONTRACT)
    with pytest.raises(EscrowError) as exc:
        esc.check(e2, "bob", "dave", 1, 3, CONTRACT)
    assert exc.value.code == "not-locker"


def test_terminal_unlock_then_refund1():
    e, chain, locks = beta()
    st_, pf = terminal_claim(locks.primary[1], chain.s1[1], 54, K["bob"])
    assert esc.unlock(e, st_, pf, 3)[0].amount == 54
    assert e.state is EscrowState.UNLOCK
    with pytest.raises(EscrowError):
        esc.refund1(e, "bob", 30)
    out = esc.refund1(e, "bob", 31)
    assert [(p.address, p.amount) for p in out] == [("bob", 6)]
    completeness(e)


def test_unlock_after_timeout_rejected():
    e, chain, locks = beta()
    st_, pf = terminal_claim(locks.primary[1], chain.s1[1], 54, K["bob"])
    with pytest.raises(EscrowError) as exc:
        esc.unlock(e, st_, pf, 30)
    assert exc.value.code == "rejected-timeout"


def test_unlock_needs_locker_signature():
    e, chain, locks = beta()
    st_, pf = terminal_claim(locks.primary[1], chain.s1[1], 54, K["carol"])
    with pytest.raises(EscrowError) as exc:
        esc.unlock(e, st_, pf, 3)
    assert exc.value.code == "rejected-proof"


def test_unlock_amount_over_bound_rejected():
    e, chain, locks = alpha()
    esc.tick(e, 3)
    esc.check(e, "alice", "dave", 3, 3, CONTRACT)
    st_, pf = intermediary_claim(locks.primary[0], chain.s1[0], 28, K["alice"], chain.s1[1], chain.z2[0])
    with pytest.raises(EscrowError) as exc:
        esc.unlock(e, st_, pf, 3)
    assert exc.value.code == "rejected-amount"


@pytest.mark.parametrize("cmt,expected", [(1, [("dave", 1), ("alice", 2)]), (0, [("alice", 3)])])
def test_refund1_remainders(cmt, expected):
    e, chain, locks = alpha()
    if cmt:
        esc.check(e, "alice", "dave", cmt, 3, CONTRACT)
    st_, pf = intermediary_claim(locks.primary[0], chain.s1[0], 27, K["alice"], chain.s1[1], chain.z2[0])
    esc.unlock(e, st_, pf, 4)
    out = esc.refund1(e, "alice", 41)
    assert [(p.address, p.amount) for p in out] == expected
    completeness(e)


def test_refund1_rejected_on_nonterminal_lock():
    e, *_ = alpha()
    with pytest.raises(EscrowError) as exc:
        esc.refund1(e, "alice", 41)
    assert exc.value.code == "bad-state"


def test_refund2_honest_case_then_finalize():
    e, chain, _ = alpha()
    esc.check(e, "alice", "dave", 2, 2, CONTRACT)
    with pytest.raises(EscrowError) as exc:
        esc.refund2(e, "alice", chain.s2[0], random_secret(1), 41)
    assert exc.value.code == "hash-mismatch"
    esc.refund2(e, "alice", chain.s2[0], chain.z2[0], 41)
    assert e.state is EscrowState.REFUND2_PENDING and e.appeal_deadline == 51
    with pytest.raises(EscrowError):
        esc.refund1(e, "alice", 51)
    out = esc.refund1(e, "alice", 52)
    assert [(p.address, p.amount) for p in out] == [("dave", 2), ("alice", 28)]
    assert e.state is EscrowState.REFUND
    completeness(e)


def test_refund2_needs_secondary_lock():
    e, chain, _ = beta()
    with pytest.raises(EscrowError) as exc:
        esc.refund2(e, "bob", chain.s2[0], chain.z2[0], 31)
    assert exc.value.code == "no-secondary"


def test_appeal_seizes_everything_but_commitments():
    e, chain, _ = alpha()
    esc.check(e, "alice", "dave", 2, 2, CONTRACT)
    esc.refund2(e, "alice", chain.s2[0], chain.z2[0], 41)
    with pytest.raises(EscrowError):
        esc.appeal(e, "miner", random_secret(3), 42)
    s1 = bytes(a ^ b for a, b in zip(chain.s1[1], chain.z2[0]))
    out = esc.appeal(e, "miner", s1, 42)
    assert [(p.address, p.amount) for p in out] == [("dave", 2), ("miner", 28)]
    assert e.state is EscrowState.APPEAL
    completeness(e)


def test_appeal_after_window_rejected():
    e, chain, _ = alpha()
    esc.refund2(e, "alice", chain.s2[0], chain.z2[0], 41)
    with pytest.raises(EscrowError) as exc:
        esc.appeal(e, "miner", chain.s1[0], 52)
    assert exc.value.code == "window-closed"


def test_refund3_pays_offline_beneficiary():
    e, chain, locks = alpha()
    claim = intermediary_claim(locks.primary[0], chain.s1[0], 27, K["bob"], chain.s1[1], chain.z2[0])
    with pytest.raises(EscrowError) as exc:
        esc.refund3(e, "alice", *claim, 40)
    assert exc.value.code == "too-early"
    out = esc.refund3(e, "alice", *claim, 41)
    assert [(p.address, p.amount) for p in out] == [("bob", 27), ("alice", 3)]
    completeness(e)


def test_refund3_rejects_locker_signature():
    e, chain, locks = alpha()
    claim = intermediary_claim(locks.primary[0], chain.s1[0], 27, K["alice"], chain.s1[1], chain.z2[0])
    with pytest.raises(EscrowError) as exc:
        esc.refund3(e, "alice", *claim, 41)
    assert exc.value.code == "rejected-proof"


def test_closed_states_reject_everything():
    e, chain, locks = beta()
    esc.refund1(e, "bob", 31)
    claim = terminal_claim(locks.primary[1], chain.s1[1], 1, K["bob"])
    for op in (
        lambda: esc.unlock(e, *claim, 5),
        lambda: esc.refund1(e, "bob", 40),
        lambda: esc.check(e, "bob", "x", 1, 40, CONTRACT),
        lambda: esc.appeal(e, "m", chain.s1[1], 40),
    ):
        with pytest.raises(EscrowError):
            op()


@settings(max_examples=200, deadline=None)
@given(
    amount=st.integers(1, 500),
    rate=st.fractions(min_value=0, max_value=7, max_denominator=5),
    checks=st.lists(st.tuples(st.integers(0, 60), st.integers(1, 40)), max_size=6),
)
def test_hourglass_invariants(amount, rate, checks):
    e = esc.lock("x", "l", "b", amount, b"\x00" * 32, b"\x01" * 32, Fraction(rate), 100, 0, b"", b"")
    prev_f, prev_ac = e.frozen, e.available + e.committed
    for h, v in sorted(checks):
        try:
            esc.check(e, "l", "d", v, h, CONTRACT)
        except EscrowError:
            esc.tick(e, h)
        assert e.available >= 0
        assert e.frozen + e.available + e.committed + e.unlocked_paid == e.locked
        assert e.frozen <= prev_f and e.available + e.committed >= prev_ac
        prev_f, prev_ac = e.frozen, e.available + e.committed
