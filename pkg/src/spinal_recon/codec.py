"""Spinal encoder and bubble decoder.

Messages are numpy arrays of bits (uint8, values 0/1). Bits are grouped into
k-bit spine blocks MSB-first, and RNG streams are read MSB-first as well.
The hash is one-at-a-time over big-endian byte serializations of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import ndtr, ndtri

from . import _kernels


@dataclass(frozen=True)
class CodecConfig:
    """Constants shared by encoder and decoder.

    ``rng_seed`` is the pre-shared RNG seed (``w`` bits), ``s0`` the
    pre-shared initial spine state (``v`` bits).
    """

    n: int = 1024
    k: int = 4
    c: int = 6
    B: int = 256
    beta_trunc: float = 3.0
    p_star: float = 1.0
    v: int = 32
    w: int = 32
    s0: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.c < 1 or self.B < 1:
            raise ValueError("k, c and B must be positive")
        if self.n < self.k or self.n % self.k:
            raise ValueError(f"n={self.n} is not a positive multiple of k={self.k}")
        if self.v != 32:
            raise ValueError("only 32-bit spine states are supported")
        if self.k > 8:
            raise ValueError("spine blocks are hashed as a single byte; k must be <= 8")
        if self.c > 32:
            raise ValueError("c must be <= 32")
        if self.w % 8 or not 8 <= self.w <= 64:
            raise ValueError("w must be a whole number of bytes in [8, 64]")
        if not self.p_star > 0 or not self.beta_trunc > 0:
            raise ValueError("p_star and beta_trunc must be positive")
        if not 0 <= self.s0 < 1 << self.v:
            raise ValueError("s0 does not fit in v bits")
        if not 0 <= self.rng_seed < 1 << self.w:
            raise ValueError("rng_seed does not fit in w bits")

    @property
    def spine_length(self) -> int:
        return self.n // self.k

    @cached_property
    def constellation(self) -> np.ndarray:
        """All 2^c mapped levels, indexed by the c-bit symbol value."""
        b = np.arange(1 << self.c)
        alpha = (2 * b + 1) / 2.0 ** (self.c + 1)
        gamma = ndtr(-self.beta_trunc)
        return ndtri(gamma + (1 - 2 * gamma) * alpha) * np.sqrt(self.p_star)


@dataclass(frozen=True)
class SpineChain:
    states: tuple[int, ...]

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class PassBlock:
    pass_index: int
    symbols: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class DecodeResult:
    message: np.ndarray = field(repr=False)
    cost: float
    levels_expanded: int
    nodes_visited: int


def hash_state(state: int, block: int, k: int = 4) -> int:
    """One-at-a-time hash of ``state`` (4 bytes, big-endian) followed by ``block`` (1 byte)."""
    if not 0 <= block < 1 << k:
        raise ValueError(f"block {block} does not fit in {k} bits")
    if not 0 <= state < 1 << 32:
        raise ValueError("state must be a 32-bit word")
    return int(_kernels.spine_step(np.int64(state), np.int64(block)))


def message_blocks(message, k: int) -> np.ndarray:
    """Split a bit array into k-bit integers, MSB-first."""
    bits = np.asarray(message, dtype=np.int64)
    if bits.size % k:
        raise ValueError(f"message length {bits.size} is not a multiple of k={k}")
    weights = 1 << np.arange(k - 1, -1, -1)
    return bits.reshape(-1, k) @ weights


def blocks_to_bits(blocks, k: int) -> np.ndarray:
    blocks = np.asarray(blocks, dtype=np.int64)
    shifts = np.arange(k - 1, -1, -1)
    return ((blocks[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def _check_message(message, cfg: CodecConfig) -> np.ndarray:
    bits = np.asarray(message)
    if bits.ndim != 1 or bits.size != cfg.n:
        raise ValueError(f"expected a message of {cfg.n} bits, got shape {bits.shape}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("message must contain only 0/1 values")
    return bits


def _spine_array(message, cfg: CodecConfig) -> np.ndarray:
    bits = _check_message(message, cfg)
    return _kernels.spine_chain(message_blocks(bits, cfg.k), np.int64(cfg.s0))


def compute_spine(message, cfg: CodecConfig) -> SpineChain:
    return SpineChain(tuple(int(s) for s in _spine_array(message, cfg)))


def rng_bits(spine: int, pass_index: int, count: int, cfg: CodecConfig) -> np.ndarray:
    """RNG output for one spine value, starting at the bits of pass ``pass_index``.

    The stream of a spine is the concatenation of 32-bit words
    ``OAAT(spine || rng_seed || t)`` for t = 0, 1, ...; pass l owns the bits
    ``[(l-1)c, l*c)``. Any pass can be produced without the earlier ones.
    """
    if pass_index < 1 or count < 1:
        raise ValueError("pass_index and count must be >= 1")
    start = (pass_index - 1) * cfg.c
    return _kernels.stream_bits(
        np.int64(spine), np.int64(cfg.rng_seed), cfg.w // 8, start, count
    )


def map_symbol(b: int, cfg: CodecConfig) -> float:
    if not 0 <= b < 1 << cfg.c:
        raise ValueError(f"symbol index {b} out of range for c={cfg.c}")
    return float(cfg.constellation[b])


def _as_pass_array(passes) -> np.ndarray:
    arr = np.asarray(passes, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("need at least one pass")
    if arr.min() < 1:
        raise ValueError("pass indices are 1-based")
    return arr


def encode_matrix(message, passes, cfg: CodecConfig) -> np.ndarray:
    """Symbols as a (n/k, len(passes)) array; column j holds pass ``passes[j]``."""
    spines = _spine_array(message, cfg)
    return _kernels.encode_symbols(
        spines, np.int64(cfg.rng_seed), cfg.w // 8, _as_pass_array(passes), cfg.c,
        cfg.constellation,
    )


def encode_passes(message, pass_range: tuple[int, int], cfg: CodecConfig) -> list[PassBlock]:
    first, last = pass_range
    if not 1 <= first <= last:
        raise ValueError(f"bad pass range {pass_range}")
    passes = np.arange(first, last + 1)
    x = encode_matrix(message, passes, cfg)
    return [PassBlock(int(p), x[:, j].copy()) for j, p in enumerate(passes)]


def bubble_decode(received: list[PassBlock], cfg: CodecConfig) -> DecodeResult:
    """Beam search over the message-prefix tree keeping the B cheapest nodes per depth.

    The beam is always stored in lexicographic order of the prefixes it holds,
    so child ``parent_rank * 2^k + block`` order is lexicographic too and a
    stable sort on cost breaks ties towards the smaller prefix.
    """
    if not received:
        raise ValueError("no passes to decode")
    order = sorted(range(len(received)), key=lambda j: received[j].pass_index)
    passes = _as_pass_array([received[j].pass_index for j in order])
    if np.unique(passes).size != passes.size:
        raise ValueError("duplicate pass indices")
    y = np.empty((cfg.spine_length, passes.size), dtype=np.float64)
    for col, j in enumerate(order):
        sym = np.asarray(received[j].symbols, dtype=np.float64)
        if sym.shape != (cfg.spine_length,):
            raise ValueError(
                f"pass {received[j].pass_index} has {sym.size} symbols, expected {cfg.spine_length}"
            )
        y[:, col] = sym
    return decode_matrix(y, passes, cfg)


def decode_matrix(y: np.ndarray, passes, cfg: CodecConfig) -> DecodeResult:
    """:func:`bubble_decode` on a (n/k, len(passes)) array of received symbols."""
    passes = _as_pass_array(passes)
    if np.any(np.diff(passes) <= 0):
        raise ValueError("pass indices must be strictly increasing")
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != (cfg.spine_length, passes.size):
        raise ValueError(f"received array has shape {y.shape}, expected {(cfg.spine_length, passes.size)}")
    k, fan = cfg.k, 1 << cfg.k
    seed_bytes = cfg.w // 8
    table = cfg.constellation

    states = np.array([cfg.s0], dtype=np.int64)
    costs = np.zeros(1)
    backptr = []
    visited = 0
    for i in range(cfg.spine_length):
        child_states, child_costs = _kernels.expand_level(
            states, costs, k, y[i], passes, np.int64(cfg.rng_seed), seed_bytes, cfg.c, table
        )
        visited += child_costs.size
        keep = np.sort(np.argsort(child_costs, kind="stable")[: cfg.B])
        backptr.append(keep)
        states, costs = child_states[keep], child_costs[keep]

    best = int(np.argmin(costs))
    blocks = np.empty(cfg.spine_length, dtype=np.int64)
    node = best
    for i in range(cfg.spine_length - 1, -1, -1):
        child = int(backptr[i][node])
        blocks[i] = child % fan
        node = child // fan
    return DecodeResult(
        message=blocks_to_bits(blocks, k),
        cost=float(costs[best]),
        levels_expanded=cfg.spine_length,
        nodes_visited=visited,
    )


def path_cost(message, y: np.ndarray, passes, cfg: CodecConfig) -> float:
    """Sum of squared residuals between ``y`` and the re-encoded ``message``."""
    x = encode_matrix(message, passes, cfg)
    return float(((np.asarray(y) - x) ** 2).sum())
