"""Independent reference implementations used only by tests."""

import struct

_K = [
    0x428A2F98, 0x71374491, 0xB5C0FBCF, 0xE9B5DBA5, 0x3956C25B, 0x59F111F1, 0x923F82A4, 0xAB1C5ED5,
    0xD807AA98, 0x12835B01, 0x243185BE, 0x550C7DC3, 0x72BE5D74, 0x80DEB1FE, 0x9BDC06A7, 0xC19BF174,
    0xE49B69C1, 0xEFBE4786, 0x0FC19DC6, 0x240CA1CC, 0x2DE92C6F, 0x4A7484AA, 0x5CB0A9DC, 0x76F988DA,
    0x983E5152, 0xA831C66D, 0xB00327C8, 0xBF597FC7, 0xC6E00BF3, 0xD5A79147, 0x06CA6351, 0x14292967,
    0x27B70A85, 0x2E1B2138, 0x4D2C6DFC, 0x53380D13, 0x650A7354, 0x766A0ABB, 0x81C2C92E, 0x92722C85,
    0xA2BFE8A1, 0xA81A664B, 0xC24B8B70, 0xC76C51A3, 0xD192E819, 0xD6990624, 0xF40E3585, 0x106AA070,
    0x19A4C116, 0x1E376C08, 0x2748774C, 0x34B0BCB5, 0x391C0CB3, 0x4ED8AA4A, 0x5B9CCA4F, 0x682E6FF3,
    0x748F82EE, 0x78A5636F, 0x84C87814, 0x8CC70208, 0x90BEFFFA, 0xA4506CEB, 0xBEF9A3F7, 0xC67178F2,
]


def _rotr(x, n):
    return ((x >> n) | (x << (32 - n))) & 0xFFFFFFFF


def sha256_ref(msg: bytes) -> bytes:
    h = [0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A, 0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19]
    ml = len(msg) * 8
    msg = msg + b"\x80" + b"\x00" * ((55 - len(msg)) % 64) + struct.pack(">Q", ml)
    for off in range(0, len(msg), 64):
        w = list(struct.unpack(">16I", msg[off:off + 64]))
        for t in range(16, 64):
            s0 = _rotr(w[t - 15], 7) ^ _rotr(w[t - 15], 18) ^ (w[t - 15] >> 3)
            s1 = _rotr(w[t - 2], 17) ^ _rotr(w[t - 2], 19) ^ (w[t - 2] >> 10)
            w.append((w[t - 16] + s0 + w[t - 7] + s1) & 0xFFFFFFFF)
        a, b, c, d, e, f, g, hh = h
        for t in range(64):
            t1 = (hh + (_rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)) + ((e & f) ^ (~e & g)) + _K[t] + w[t]) & 0xFFFFFFFF
            t2 = ((_rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)) + ((a & b) ^ (a & c) ^ (b & c))) & 0xFFFFFFFF
            a, b, c, d, e, f, g, hh = (t1 + t2) & 0xFFFFFFFF, a, b, c, (d + t1) & 0xFFFFFFFF, e, f, g
        h = [(x + y) & 0xFFFFFFFF for x, y in zip(h, [a, b, c, d, e, f, g, hh])]
    return struct.pack(">8I", *h)


def bits(value: bytes) -> str:
    return "".join(f"{byte:08b}" for byte in value)


def bitwise(op, a: bytes, b: bytes) -> bytes:
    """Bit-by-bit evaluation over binary strings, independent of int arithmetic."""
    out = "".join(op(x, y) for x, y in zip(bits(a), bits(b)))
    return bytes(int(out[i:i + 8], 2) for i in range(0, 256, 8))


def xor_ref(a, b):
    return bitwise(lambda x, y: "1" if x != y else "0", a, b)


def and_ref(a, b):
    return bitwise(lambda x, y: "1" if x == y == "1" else "0", a, b)


def hourglass_frozen_ref(locked: int, rate_num: int, rate_den: int, height: int, lock_height: int,
                         unlocked: int = 0) -> int:
    """Frozen balance with integer-only arithmetic: L - floor(r * elapsed) - U, floored at 0."""
    elapsed = max(0, height - lock_height)
    return max(0, locked - (rate_num * elapsed) // rate_den - unlocked)


def forwarded_ref(rate_num: int, rate_den: int, frozen: int) -> int:
    return (rate_num * frozen) // rate_den


def conservation_violations(genesis: dict, events: list) -> list:
    """Replay raw event dicts block by block; funds are in accounts, escrows or channels.

    Returns every (chain, height, reason) where the per-chain total differs from genesis, a
    terminal escrow still holds funds, or any holder goes negative.
    """
    accounts = {c: dict(a) for c, a in genesis.items()}
    supply = {c: sum(a.values()) for c, a in genesis.items()}
    held = {}
    channel_held = {}
    problems = []
    by_block = {}
    for ev in events:
        by_block.setdefault((ev["chain_id"], ev["height"]), []).append(ev)
    for (cid, height) in sorted(by_block, key=lambda k: (k[1], k[0])):
        acc = accounts[cid]
        for ev in by_block[cid, height]:
            label, p, subject = ev["label"], ev["payload"], ev["subject"]
            if label == "Locked":
                acc[p["locker"]] = acc.get(p["locker"], 0) - p["amount"]
                held[subject] = p["amount"]
            elif label in ("Unlocked", "Refunded", "Appealed"):
                for address, amount, _ in p["payouts"]:
                    acc[address] = acc.get(address, 0) + amount
                    held[subject] -= amount
                if label != "Unlocked" and held[subject] != 0:
                    problems.append((cid, height, f"{subject} terminal with {held[subject]} left"))
            elif label == "ChannelOpened":
                for party, deposit in zip(p["parties"], p["deposits"]):
                    acc[party] = acc.get(party, 0) - deposit
                channel_held[subject] = sum(p["deposits"])
            elif label == "StateClosed":
                for party, amount in p["payout"].items():
                    acc[party] = acc.get(party, 0) + amount
                    channel_held[subject] -= amount
                if channel_held[subject] != 0:
                    problems.append((cid, height, f"{subject} closed with {channel_held[subject]} left"))
        in_escrow = sum(v for k, v in held.items() if k.startswith(cid + "/"))
        in_channels = sum(v for k, v in channel_held.items() if k.startswith(cid + "/"))
        total = sum(acc.values()) + in_escrow + in_channels
        if total != supply[cid]:
            problems.append((cid, height, f"total {total} != supply {supply[cid]}"))
        if any(v < 0 for v in acc.values()) or any(v < 0 for v in held.values()):
            problems.append((cid, height, "negative holding"))
    return problems
