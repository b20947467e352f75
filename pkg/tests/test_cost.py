import pytest

from ccnlab.cost import CostError, ccn_cost, cost_table, htlc_cost


def test_single_interaction_base_counts():
    ccn = ccn_cost(1)
    # per hop: open, lock, unlock, remainder refund, close
    assert ccn == {"ChannelOpen": 2, "Lock": 2, "Unlock": 2, "Refund1": 2, "ChannelClose": 2}
    assert htlc_cost(1) == {"Lock": 2, "Unlock": 2}


def test_hundred_interactions():
    assert ccn_cost(100) == ccn_cost(1)
    base = htlc_cost(1)
    assert htlc_cost(100) == {k: 100 * v for k, v in base.items()}


def test_shape_two_hops():
    table = cost_table((1, 7), n=2)
    assert table.ccn_constant() and table.htlc_linear()
    assert table.rows[0].ccn_total == 15


def test_invalid_count():
    with pytest.raises(CostError):
        ccn_cost(0)
    with pytest.raises(CostError):
        htlc_cost(0)
