"""Length-prefixed framing of protocol messages and a blocking session driver.

Frame layout: ``type (1 byte) | length (u32 big-endian) | payload``.

Payloads:

* HELLO: little-endian ``<7d 10I`` packing of ProtocolParams in the order
  snr, v_a, v_z, p_star, eta, s_nr_virtual, r, n, k, c, l_min, lam, v, w,
  omega, i_max, pass_increment
* DELTA: ``pass_index u32 | count u32`` (little-endian) then ``count`` float64 LE
* CRC_TAG: u32 little-endian
* ACK, NACK: empty
* ABORT: one reason byte (see :class:`AbortReason`)
"""

from __future__ import annotations

import socket
import struct
import threading
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .protocol import (
    Abort, AbortReason, Ack, AliceSession, BobSession, CrcTag, Delta, Hello, Nack,
    ProtocolError, ProtocolParams,
)


class MsgType(IntEnum):
    HELLO = 0x01
    DELTA = 0x02
    CRC_TAG = 0x03
    ACK = 0x04
    NACK = 0x05
    ABORT = 0x06


class IncompleteFrame(Exception):
    """Stream ended in the middle of a frame."""


HEADER = struct.Struct(">BI")
_HELLO = struct.Struct("<7d10I")
_DELTA_HEAD = struct.Struct("<II")
_PARAM_FIELDS = (
    "snr", "v_a", "v_z", "p_star", "eta", "s_nr_virtual", "r",
    "n", "k", "c", "l_min", "lam", "v", "w", "omega", "i_max", "pass_increment",
)


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    payload: bytes = b""


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) >= 1 << 32:
        raise ValueError("payload too large for a u32 length")
    return HEADER.pack(int(frame.msg_type), len(frame.payload)) + frame.payload


def _msg_type(byte: int) -> MsgType:
    try:
        return MsgType(byte)
    except ValueError:
        raise ProtocolError(f"unknown message type 0x{byte:02x}") from None


class FrameDecoder:
    """Incremental parser: feed arbitrary chunks, pull complete frames."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Frame]:
        self._buf += data
        frames = []
        while len(self._buf) >= HEADER.size:
            kind, length = HEADER.unpack_from(self._buf)
            msg_type = _msg_type(kind)
            end = HEADER.size + length
            if len(self._buf) < end:
                break
            frames.append(Frame(msg_type, bytes(self._buf[HEADER.size:end])))
            del self._buf[:end]
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)

    def close(self):
        if self._buf:
            raise IncompleteFrame(f"{len(self._buf)} trailing bytes")


def decode_frame(data: bytes) -> tuple[Frame | None, bytes]:
    """Parse one frame from the front of ``data``.

    Returns ``(frame, rest)``, or ``(None, data)`` when more bytes are needed.
    """
    if len(data) < HEADER.size:
        return None, data
    kind, length = HEADER.unpack_from(data)
    msg_type = _msg_type(kind)
    end = HEADER.size + length
    if len(data) < end:
        return None, data
    return Frame(msg_type, bytes(data[HEADER.size:end])), data[end:]


def pack_params(p: ProtocolParams) -> bytes:
    return _HELLO.pack(*(getattr(p, f) for f in _PARAM_FIELDS))


def unpack_params(payload: bytes) -> ProtocolParams:
    if len(payload) != _HELLO.size:
        raise ProtocolError(f"HELLO payload is {len(payload)} bytes, expected {_HELLO.size}")
    return ProtocolParams(**dict(zip(_PARAM_FIELDS, _HELLO.unpack(payload))))


def to_frame(msg) -> Frame:
    if isinstance(msg, Hello):
        return Frame(MsgType.HELLO, pack_params(msg.params))
    if isinstance(msg, Delta):
        values = np.asarray(msg.values, dtype="<f8")
        return Frame(MsgType.DELTA, _DELTA_HEAD.pack(msg.pass_index, values.size) + values.tobytes())
    if isinstance(msg, CrcTag):
        return Frame(MsgType.CRC_TAG, struct.pack("<I", msg.tag))
    if isinstance(msg, Ack):
        return Frame(MsgType.ACK)
    if isinstance(msg, Nack):
        return Frame(MsgType.NACK)
    if isinstance(msg, Abort):
        return Frame(MsgType.ABORT, bytes([int(msg.reason)]))
    raise TypeError(f"not a protocol message: {msg!r}")


def from_frame(frame: Frame):
    t, body = frame.msg_type, frame.payload
    if t == MsgType.HELLO:
        return Hello(unpack_params(body))
    if t == MsgType.DELTA:
        if len(body) < _DELTA_HEAD.size:
            raise ProtocolError("short DELTA payload")
        pass_index, count = _DELTA_HEAD.unpack_from(body)
        if len(body) != _DELTA_HEAD.size + 8 * count:
            raise ProtocolError(f"DELTA announces {count} samples but carries {len(body) - 8} bytes")
        return Delta(pass_index, np.frombuffer(body, dtype="<f8", offset=_DELTA_HEAD.size).astype(np.float64))
    if t == MsgType.CRC_TAG:
        if len(body) != 4:
            raise ProtocolError("CRC_TAG payload must be 4 bytes")
        return CrcTag(struct.unpack("<I", body)[0])
    if body and t in (MsgType.ACK, MsgType.NACK):
        raise ProtocolError(f"{t.name} carries a payload")
    if t == MsgType.ACK:
        return Ack()
    if t == MsgType.NACK:
        return Nack()
    if len(body) != 1:
        raise ProtocolError("ABORT payload must be one byte")
    try:
        return Abort(AbortReason(body[0]))
    except ValueError:
        raise ProtocolError(f"unknown abort reason {body[0]}") from None


def transcript_bytes(messages) -> bytes:
    return b"".join(encode_frame(to_frame(m)) for m in messages)


class StreamEndpoint:
    """Message-level view of a connected stream socket."""

    def __init__(self, sock: socket.socket, chunk: int = 65536):
        self.sock = sock
        self.chunk = chunk
        self._decoder = FrameDecoder()
        self._queue: list[Frame] = []

    def send(self, msgs):
        if msgs:
            self.sock.sendall(transcript_bytes(msgs))

    def recv(self):
        """Next message, or None once the peer has closed the stream."""
        while not self._queue:
            data = self.sock.recv(self.chunk)
            if not data:
                self._decoder.close()
                return None
            self._queue.extend(self._decoder.feed(data))
        return from_frame(self._queue.pop(0))

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def run_session(role: str, endpoint: StreamEndpoint, params, cfg, data, key_seed=None, snr=None):
    """Drive one side of a reconciliation over ``endpoint`` until it terminates.

    ``data`` is Bob's y for role ``"bob"`` and Alice's x for ``"alice"``.
    Returns ``(session, outcome)``.
    """
    if role == "bob":
        if key_seed is None:
            raise ValueError("bob needs a key seed")
        session = BobSession(params, cfg, data, key_seed)
        outgoing = session.start()
    elif role == "alice":
        session = AliceSession(params, cfg, data)
        outgoing = []
    else:
        raise ValueError(f"unknown role {role!r}")

    try:
        endpoint.send(outgoing)
        while not session.done:
            try:
                msg = endpoint.recv()
            except (ProtocolError, IncompleteFrame):
                session._finish("abort", AbortReason.PROTOCOL)
                endpoint.send([Abort(AbortReason.PROTOCOL)])
                break
            if msg is None:
                session._finish("abort", AbortReason.DISCONNECTED)
                break
            endpoint.send(session.receive(msg))
    except OSError:
        if not session.done:
            session._finish("abort", AbortReason.DISCONNECTED)
    return session, session.finalize(snr)


def loopback_pair() -> tuple[StreamEndpoint, StreamEndpoint]:
    a, b = socket.socketpair()
    return StreamEndpoint(a), StreamEndpoint(b)


def run_loopback(params, cfg, x, y, key_seed, snr=None):
    """Both roles in one process over a socket pair; Bob runs on a helper thread.

    Returns ``(bob_session, alice_session, alice_outcome)``.
    """
    alice_end, bob_end = loopback_pair()
    box = {}

    def bob_side():
        try:
            box["bob"] = run_session("bob", bob_end, params, cfg, y, key_seed=key_seed, snr=snr)
        finally:
            bob_end.close()

    thread = threading.Thread(target=bob_side, daemon=True)
    thread.start()
    try:
        alice, outcome = run_session("alice", alice_end, params, cfg, x, snr=snr)
    finally:
        alice_end.close()
    thread.join()
    return box["bob"][0], alice, outcome
