"""Reverse reconciliation over a spinal-coded virtual channel.

Bob (key owner) encodes a random key M and publishes Delta = y - c pass by
pass together with a CRC-32 tag of M. Alice turns her raw data into side
information c' = x - Delta, bubble-decodes, and answers ACK when the CRC of
her estimate matches, NACK to ask for one more pass, or gives up after
``i_max`` attempts.

Raw samples are consumed as follows: the first ``l_min`` passes take
``y[0 : l_min * n/k]`` spine-major (symbol (i, l) uses sample ``i*l_min + l-1``);
every later pass takes the next ``n/k`` samples in spine order.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .channel import compute_differences, recover_side_info
from .codec import CodecConfig, decode_matrix, encode_matrix

log = logging.getLogger(__name__)


class ProtocolError(Exception):
    """Peer sent something the state machine cannot accept."""


class ResourceExhausted(Exception):
    """Not enough raw data left to send the requested passes."""


@dataclass(frozen=True)
class ProtocolParams:
    snr: float
    v_a: float
    v_z: float
    p_star: float
    eta: float
    s_nr_virtual: float
    r: float
    n: int
    k: int
    c: int
    l_min: int
    lam: int
    v: int
    w: int
    omega: int
    i_max: int
    pass_increment: int = 1

    @property
    def leakage(self) -> float:
        return leakage_bound(self.n, self.v, self.omega, self.lam)

    def codec(self, cfg: CodecConfig) -> CodecConfig:
        """``cfg`` with the derived modulation variance filled in."""
        return dataclasses.replace(cfg, p_star=self.p_star)

    def samples_needed(self, passes: int) -> int:
        return passes * (self.n // self.k)


def capacity(snr: float) -> float:
    if snr < 0:
        raise ValueError("snr must be non-negative")
    return 0.5 * math.log2(1.0 + snr)


def min_passes(k: int, s_nr_virtual: float) -> int:
    return math.ceil(k / capacity(s_nr_virtual))


def compression_rate(n: int, v: int, omega: int, lam: int) -> float:
    return 1.0 - (lam / n + math.ldexp(1.0, -(v + omega)))


def leakage_bound(n: int, v: int, omega: int, lam: int) -> float:
    """Upper bound on Eve's information about the key, in bits."""
    return math.ldexp(n, -(v + omega)) + lam


def code_rate(n: int, k: int, L: int, v: int, omega: int, lam: int, r: float) -> float:
    """Secret bits kept per raw sample after paying for leakage and pre-shared seeds."""
    if L < 1:
        raise ValueError("L must be >= 1")
    kept = n - (math.ldexp(n, -(v + omega)) + lam) - (v + omega) / r
    return k * kept / (n * L)


def derive_params(snr: float, v_a: float, cfg: CodecConfig, lam: int = 32, i_max: int = 50) -> ProtocolParams:
    """Modulation variance, l_min, omega and r for a channel of the given SNR.

    r enters eta, eta fixes l_min, l_min fixes omega and omega fixes r, so the
    set is solved by fixed-point iteration from r = 1 - lam/n.
    """
    if not snr > 0:
        raise ValueError("snr must be positive")
    if not v_a > 0:
        raise ValueError("v_a must be positive")
    if not 1 <= lam <= 32:
        raise ValueError("lambda must be in [1, 32]")
    n, k, c, v, w = cfg.n, cfg.k, cfg.c, cfg.v, cfg.w
    cap = math.log2(1.0 + snr)

    def solve(r):
        denom = v * r * (n - v / r - lam)
        if denom <= 0:
            raise ValueError(f"n={n} too short for v={v}, lambda={lam}")
        eta = (v * r * n * cap + 2 * k * c * w) / denom
        s_virt = 2.0**eta - 1.0
        l_min = min_passes(k, s_virt)
        omega = math.ceil(w * l_min * c / v)
        return eta, s_virt, l_min, omega, compression_rate(n, v, omega, lam)

    r = 1.0 - lam / n
    for _ in range(100):
        eta, s_virt, l_min, omega, r_next = solve(r)
        converged = abs(r_next - r) < 1e-12
        r = r_next
        if converged:
            break
    else:
        raise RuntimeError(f"parameter fixed point did not converge (snr={snr}, r={r})")
    eta, s_virt, l_min, omega, _ = solve(r)
    return ProtocolParams(
        snr=snr, v_a=v_a, v_z=v_a / snr, p_star=s_virt * v_a / snr, eta=eta,
        s_nr_virtual=s_virt, r=r, n=n, k=k, c=c, l_min=l_min, lam=lam, v=v, w=w,
        omega=omega, i_max=i_max,
    )


def crc_tag(message, lam: int = 32) -> int:
    """CRC-32 (IEEE, reflected) of the bits packed MSB-first into bytes.

    For ``lam < 32`` the tag is the low ``lam`` bits of the CRC-32.
    """
    if not 1 <= lam <= 32:
        raise ValueError("lambda must be in [1, 32]")
    bits = np.asarray(message, dtype=np.uint8)
    return zlib.crc32(np.packbits(bits).tobytes()) & ((1 << lam) - 1)


def sample_indices(pass_index: int, params: ProtocolParams) -> np.ndarray:
    """Raw-data positions paired with the n/k symbols of one pass."""
    per_pass = params.n // params.k
    spine = np.arange(per_pass)
    if pass_index <= params.l_min:
        return spine * params.l_min + (pass_index - 1)
    return params.l_min * per_pass + (pass_index - params.l_min - 1) * per_pass + spine


# -- messages ---------------------------------------------------------------


class AbortReason(IntEnum):
    DECODE_FAILED = 1
    RAW_DATA_EXHAUSTED = 2
    PROTOCOL = 3
    DISCONNECTED = 4


@dataclass(frozen=True)
class Hello:
    params: ProtocolParams


@dataclass(frozen=True)
class Delta:
    pass_index: int
    values: np.ndarray = field(repr=False)

    def __eq__(self, other):
        return (
            isinstance(other, Delta)
            and self.pass_index == other.pass_index
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class CrcTag:
    tag: int


@dataclass(frozen=True)
class Ack:
    pass


@dataclass(frozen=True)
class Nack:
    pass


@dataclass(frozen=True)
class Abort:
    reason: AbortReason


@dataclass
class SessionTranscript:
    messages: list = field(default_factory=list)
    decode_attempts: int = 0
    passes_sent: int = 0
    classical_bits_disclosed: int = 0

    lam: int = 32

    def record(self, msgs):
        for m in msgs:
            self.messages.append(m)
            if isinstance(m, Delta):
                self.classical_bits_disclosed += 64 * len(m.values)
            elif isinstance(m, CrcTag):
                self.classical_bits_disclosed += self.lam
        return msgs


@dataclass
class OutcomeRecord:
    success: bool
    L: int
    iterations: int
    code_rate: float
    beta_eff: float | None
    leaked_bits: float
    elapsed: float


# -- sessions ---------------------------------------------------------------


class _Session:
    def __init__(self, params: ProtocolParams, cfg: CodecConfig):
        self.params = params
        self.cfg = params.codec(cfg)
        self.transcript = SessionTranscript(lam=params.lam)
        self.state = "live"  # live | ack | fail | abort
        self.abort_reason: AbortReason | None = None
        self._t0 = time.perf_counter()
        self._t1: float | None = None

    @property
    def done(self) -> bool:
        return self.state != "live"

    def _finish(self, state, reason=None):
        self.state = state
        self.abort_reason = reason
        self._t1 = time.perf_counter()

    def finalize(self, snr: float | None = None) -> OutcomeRecord:
        """Metrics of a terminated session; ``snr`` is the true channel SNR used for beta."""
        if not self.done:
            raise ProtocolError("session still running")
        p = self.params
        L = self.transcript.passes_sent
        R = code_rate(p.n, p.k, L, p.v, p.omega, p.lam, p.r) if L else 0.0
        success = self.state == "ack"
        return OutcomeRecord(
            success=success,
            L=L,
            iterations=self.transcript.decode_attempts,
            code_rate=R,
            beta_eff=R / capacity(p.snr if snr is None else snr) if success else None,
            leaked_bits=p.leakage,
            elapsed=self._t1 - self._t0,
        )


class BobSession(_Session):
    """Encoder side: owns the key and Bob's raw data ``y``."""

    def __init__(self, params, cfg, y, key_seed: int):
        super().__init__(params, cfg)
        self.y = np.asarray(y, dtype=np.float64)
        gen = np.random.Generator(np.random.Philox(key_seed))
        self.key = gen.integers(0, 2, size=params.n, dtype=np.uint8)
        self.passes_sent = 0

    def _deltas(self, first, last):
        passes = np.arange(first, last + 1)
        if self.params.samples_needed(last) > self.y.size:
            raise ResourceExhausted(
                f"pass {last} needs {self.params.samples_needed(last)} raw samples, have {self.y.size}"
            )
        x = encode_matrix(self.key, passes, self.cfg)
        msgs = []
        for j, p in enumerate(passes):
            idx = sample_indices(int(p), self.params)
            msgs.append(Delta(int(p), compute_differences(self.y[idx], x[:, j])))
        self.passes_sent = last
        self.transcript.passes_sent = last
        return msgs

    def start(self):
        msgs = [Hello(self.params), *self._deltas(1, self.params.l_min), CrcTag(crc_tag(self.key, self.params.lam))]
        return self.transcript.record(msgs)

    def more(self, n_passes: int = 1):
        if self.done:
            raise ProtocolError(f"session already {self.state}")
        try:
            msgs = self._deltas(self.passes_sent + 1, self.passes_sent + n_passes)
        except ResourceExhausted:
            self._finish("abort", AbortReason.RAW_DATA_EXHAUSTED)
            msgs = [Abort(AbortReason.RAW_DATA_EXHAUSTED)]
        return self.transcript.record(msgs)

    def receive(self, msg):
        """Handle a reply from Alice; returns the messages to send back."""
        self.transcript.messages.append(msg)
        if isinstance(msg, Ack):
            self.transcript.decode_attempts += 1
            self._finish("ack")
            return []
        if isinstance(msg, Nack):
            self.transcript.decode_attempts += 1
            return self.more(self.params.pass_increment)
        if isinstance(msg, Abort):
            if msg.reason == AbortReason.DECODE_FAILED:
                self.transcript.decode_attempts += 1
                self._finish("fail", msg.reason)
            else:
                self._finish("abort", msg.reason)
            return []
        self._finish("abort", AbortReason.PROTOCOL)
        return self.transcript.record([Abort(AbortReason.PROTOCOL)])


class AliceSession(_Session):
    """Decoder side: holds Alice's raw data ``x`` and never sees the key before ACK."""

    def __init__(self, params, cfg, x):
        super().__init__(params, cfg)
        self.x = np.asarray(x, dtype=np.float64)
        self.side_info: dict[int, np.ndarray] = {}
        self.tag: int | None = None
        self.hello_seen = False
        self.expected = params.l_min
        self.estimate: np.ndarray | None = None
        self.last_cost: float | None = None

    def _protocol_error(self, why):
        log.warning("alice: protocol error: %s", why)
        self._finish("abort", AbortReason.PROTOCOL)
        return self.transcript.record([Abort(AbortReason.PROTOCOL)])

    def add_delta(self, msg: Delta):
        p = msg.pass_index
        if p in self.side_info or p < 1 or p > self.expected:
            raise ProtocolError(f"unexpected pass {p}")
        idx = sample_indices(p, self.params)
        if len(msg.values) != len(idx):
            raise ProtocolError(f"pass {p}: {len(msg.values)} deltas, expected {len(idx)}")
        if idx[-1] >= self.x.size:
            raise ProtocolError(f"pass {p} runs past the end of the raw data")
        self.side_info[p] = recover_side_info(self.x[idx], msg.values)
        self.transcript.passes_sent = len(self.side_info)

    def ready(self) -> bool:
        return self.tag is not None and len(self.side_info) == self.expected

    def attempt(self):
        """Decode with every pass received so far and answer ACK, NACK or ABORT."""
        passes = sorted(self.side_info)
        y = np.column_stack([self.side_info[p] for p in passes])
        result = decode_matrix(y, passes, self.cfg)
        self.transcript.decode_attempts += 1
        self.estimate, self.last_cost = result.message, result.cost
        if crc_tag(result.message, self.params.lam) == self.tag:
            self._finish("ack")
            return self.transcript.record([Ack()])
        if self.transcript.decode_attempts >= self.params.i_max:
            self._finish("fail", AbortReason.DECODE_FAILED)
            return self.transcript.record([Abort(AbortReason.DECODE_FAILED)])
        self.expected += self.params.pass_increment
        return self.transcript.record([Nack()])

    def receive(self, msg):
        """Feed one message from Bob; returns the replies (possibly none)."""
        if self.done:
            raise ProtocolError(f"session already {self.state}")
        self.transcript.messages.append(msg)
        try:
            if isinstance(msg, Hello):
                if self.hello_seen or msg.params != self.params:
                    raise ProtocolError("HELLO does not match local parameters")
                self.hello_seen = True
            elif not self.hello_seen:
                raise ProtocolError(f"{type(msg).__name__} before HELLO")
            elif isinstance(msg, Delta):
                self.add_delta(msg)
            elif isinstance(msg, CrcTag):
                if self.tag is not None:
                    raise ProtocolError("duplicate CRC tag")
                self.tag = msg.tag
            elif isinstance(msg, Abort):
                self._finish("abort", msg.reason)
                return []
            else:
                raise ProtocolError(f"unexpected {type(msg).__name__} from Bob")
        except ProtocolError as exc:
            return self._protocol_error(exc)
        return self.attempt() if self.ready() else []


def bob_start(params, cfg, y, key_seed):
    """Create Bob's session and the opening messages (HELLO, l_min DELTAs, CRC_TAG)."""
    session = BobSession(params, cfg, y, key_seed)
    return session, session.start()


def bob_more(session: BobSession, n_passes: int = 1):
    return session.more(n_passes)


def alice_start(params, cfg, x) -> AliceSession:
    return AliceSession(params, cfg, x)


def alice_attempt(session: AliceSession, deltas):
    """Absorb new DELTA messages, then run one decode attempt."""
    for d in deltas:
        try:
            session.add_delta(d)
        except ProtocolError:
            session._finish("abort", AbortReason.PROTOCOL)
            raise
    if session.tag is None:
        raise ProtocolError("no CRC tag received yet")
    return session.attempt()[0]


def finalize(session: _Session, snr: float | None = None) -> OutcomeRecord:
    return session.finalize(snr)


def run_inprocess(params, cfg, x, y, key_seed):
    """Drive both sessions directly, without serialization. Returns (bob, alice)."""
    bob, outbox = bob_start(params, cfg, y, key_seed)
    alice = alice_start(params, cfg, x)
    while outbox:
        replies = []
        for msg in outbox:
            if not alice.done:
                replies.extend(alice.receive(msg))
        outbox = []
        for msg in replies:
            if not bob.done:
                outbox.extend(bob.receive(msg))
        if not replies:
            break
    return bob, alice
