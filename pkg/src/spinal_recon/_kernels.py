"""Compiled inner loops for the spinal encoder and bubble decoder.

Hash states are carried in int64 and masked back to 32 bits after every add;
uint64 mixed with int literals would promote to float64 under numba.
"""

import numpy as np
from numba import njit

MASK32 = 0xFFFFFFFF


@njit(cache=True, inline="always")
def oaat_step(h, byte):
    h = (h + byte) & 0xFFFFFFFF
    h = (h + (h << 10)) & 0xFFFFFFFF
    h ^= h >> 6
    return h


@njit(cache=True, inline="always")
def oaat_word(h, word):
    # absorb a 32-bit word as 4 big-endian bytes
    h = oaat_step(h, (word >> 24) & 0xFF)
    h = oaat_step(h, (word >> 16) & 0xFF)
    h = oaat_step(h, (word >> 8) & 0xFF)
    h = oaat_step(h, word & 0xFF)
    return h


@njit(cache=True, inline="always")
def oaat_final(h):
    h = (h + (h << 3)) & 0xFFFFFFFF
    h ^= h >> 11
    h = (h + (h << 15)) & 0xFFFFFFFF
    return h


@njit(cache=True, inline="always")
def spine_step(state, block):
    h = oaat_word(np.int64(0), state)
    h = oaat_step(h, block)
    return oaat_final(h)


@njit(cache=True, inline="always")
def rng_prefix(spine, seed, seed_bytes):
    h = oaat_word(np.int64(0), spine)
    for j in range(seed_bytes - 1, -1, -1):
        h = oaat_step(h, (seed >> (8 * j)) & 0xFF)
    return h


@njit(cache=True, inline="always")
def rng_word(prefix, t):
    return oaat_final(oaat_word(prefix, t))


@njit(cache=True)
def spine_chain(blocks, s0):
    out = np.empty(blocks.shape[0], dtype=np.int64)
    s = np.int64(s0)
    for i in range(blocks.shape[0]):
        s = spine_step(s, np.int64(blocks[i]))
        out[i] = s
    return out


@njit(cache=True)
def stream_bits(spine, seed, seed_bytes, start, count):
    """Bits [start, start+count) of the stream keyed by (spine, seed), one uint8 per bit."""
    out = np.empty(count, dtype=np.uint8)
    prefix = rng_prefix(np.int64(spine), np.int64(seed), seed_bytes)
    q_loaded = -1
    w = np.int64(0)
    for j in range(count):
        pos = start + j
        q = pos >> 5
        if q != q_loaded:
            w = rng_word(prefix, np.int64(q))
            q_loaded = q
        out[j] = (w >> (31 - (pos & 31))) & 1
    return out


@njit(cache=True, inline="always")
def _symbol_index(prefix, offset, c, words, stamp, tag):
    # c-bit field at bit offset `offset` of the stream, MSB-first; words are
    # memoised per node through `stamp`
    q = offset >> 5
    if stamp[q] != tag:
        words[q] = rng_word(prefix, np.int64(q))
        stamp[q] = tag
    hi = words[q]
    r = offset & 31
    if r + c <= 32:
        return (hi >> (32 - r - c)) & ((1 << c) - 1)
    if stamp[q + 1] != tag:
        words[q + 1] = rng_word(prefix, np.int64(q + 1))
        stamp[q + 1] = tag
    both = (hi << 32) | words[q + 1]
    return (both >> (64 - r - c)) & ((1 << c) - 1)


@njit(cache=True)
def encode_symbols(spines, seed, seed_bytes, passes, c, table):
    """Symbols x[i, j] for spine i and 1-based pass passes[j]."""
    n_sp = spines.shape[0]
    n_p = passes.shape[0]
    out = np.empty((n_sp, n_p), dtype=np.float64)
    max_q = ((int(passes.max()) * c) >> 5) + 2
    words = np.zeros(max_q, dtype=np.int64)
    stamp = np.full(max_q, -1, dtype=np.int64)
    for i in range(n_sp):
        prefix = rng_prefix(spines[i], np.int64(seed), seed_bytes)
        for j in range(n_p):
            b = _symbol_index(prefix, (int(passes[j]) - 1) * c, c, words, stamp, i)
            out[i, j] = table[b]
    return out


@njit(cache=True)
def _pass_layout(passes, c):
    # word index and right-shift of each pass's c-bit field inside the
    # 64-bit window formed by words q and q+1
    n_p = passes.shape[0]
    q = np.empty(n_p, dtype=np.int64)
    sh = np.empty(n_p, dtype=np.int64)
    for j in range(n_p):
        off = (int(passes[j]) - 1) * c
        q[j] = off >> 5
        sh[j] = 64 - (off & 31) - c
    return q, sh


@njit(cache=True)
def expand_level(parent_states, parent_costs, k, received, passes, seed, seed_bytes, c, table):
    """Children of every parent, ordered parent-major then by k-bit block value.

    Returns child spine states and path costs (parent cost + squared residual
    over the available passes for this spine position).
    """
    n_par = parent_states.shape[0]
    fan = 1 << k
    n_ch = n_par * fan
    n_p = passes.shape[0]
    states = np.empty(n_ch, dtype=np.int64)
    costs = np.empty(n_ch, dtype=np.float64)
    q, sh = _pass_layout(passes, c)
    n_w = int(q.max()) + 2
    words = np.empty(n_w, dtype=np.int64)
    need = np.zeros(n_w, dtype=np.bool_)
    for j in range(n_p):
        need[q[j]] = True
        need[q[j] + 1] = True
    mask = (1 << c) - 1
    for p in range(n_par):
        base = oaat_word(np.int64(0), parent_states[p])
        for m in range(fan):
            idx = p * fan + m
            s = oaat_final(oaat_step(base, np.int64(m)))
            states[idx] = s
            prefix = rng_prefix(s, np.int64(seed), seed_bytes)
            for t in range(n_w):
                if need[t]:
                    words[t] = rng_word(prefix, np.int64(t))
            branch = 0.0
            for j in range(n_p):
                b = (((words[q[j]] << 32) | words[q[j] + 1]) >> sh[j]) & mask
                d = received[j] - table[b]
                branch += d * d
            costs[idx] = parent_costs[p] + branch
    return states, costs
