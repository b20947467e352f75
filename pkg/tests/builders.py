"""Shared helpers for building signed unlock claims in tests."""

import random

from ccnlab.circuits import CircuitKind, Witness, prove, unlock_statement
from ccnlab.crypto import KeyPair, amount_digest, compute_locks, derive_secret_chain


def keys(*names, seed=0):
    rng = random.Random(seed)
    return {n: KeyPair.generate(rng) for n in names}


def two_chain(seed=7):
    chain = derive_secret_chain(1, seed)
    return chain, compute_locks(chain)


def terminal_claim(lock, s1, amount, signer):
    sig = signer.sign(amount_digest(lock, amount))
    st = unlock_statement(CircuitKind.UNLOCK_TERMINAL, lock, s1, amount, sig, signer.pk)
    return st, prove(CircuitKind.UNLOCK_TERMINAL, st, Witness({}))


def intermediary_claim(lock, s1, amount, signer, s1_next, z2):
    sig = signer.sign(amount_digest(lock, amount))
    st = unlock_statement(CircuitKind.UNLOCK_INTERMEDIARY, lock, s1, amount, sig, signer.pk)
    return st, prove(CircuitKind.UNLOCK_INTERMEDIARY, st, Witness({"s1_next": s1_next, "z2": z2}))
