"""
Binary lockstep protocol between a transmission node and a distribution node.

Frame layout (little-endian): magic "TDCS", version byte, message type byte,
uint32 sequence number, uint16 payload length, then the payload as float64
values. Every message type has a fixed field count.
"""

import logging
import math
import socket
import time
from dataclasses import astuple, dataclass, fields
from typing import Callable, Dict, Optional, Type, Union

import construct as cst

from config import ScenarioConfig, scenario_hash
from cosim import DistributionNode, RunTrace, TransmissionNode, calibrate_static_thresholds
from anomaly import Detector
from extrapolation import wrap_angle
from transmission import CollapseError

logger = logging.getLogger(__name__)

MAGIC = b"TDCS"
VERSION = 1
CONNECT_RETRY_S = 0.05

HEADER = cst.Struct(
    "magic" / cst.Bytes(4),
    "version" / cst.Int8ul,
    "msg_type" / cst.Int8ul,
    "seq" / cst.Int32ul,
    "payload_len" / cst.Int16ul,
)
HEADER_SIZE = HEADER.sizeof()


class ProtocolError(RuntimeError):
    """Base class for framing and session errors; the session is closed."""


class BadMagicError(ProtocolError):
    pass


class UnknownMessageError(ProtocolError):
    pass


class LengthMismatchError(ProtocolError):
    pass


class SequenceError(ProtocolError):
    pass


class HandshakeRejected(ProtocolError):
    pass


class PeerDisconnected(ProtocolError):
    pass


@dataclass(frozen=True)
class Handshake:
    t_t: float
    t_d: float
    duration: float
    scenario_hash: float
    seq: int = 0


@dataclass(frozen=True)
class TxToDx:
    t: float
    v_mag: float
    theta: float
    p_sfr_request_kw: float
    f_sys: float
    seq: int = 0


@dataclass(frozen=True)
class DxToTx:
    t: float
    p_kw: float
    q_kvar: float
    p_avail_kw: float
    seq: int = 0


@dataclass(frozen=True)
class End:
    t: float
    seq: int = 0


Message = Union[Handshake, TxToDx, DxToTx, End]

MESSAGE_TYPES: Dict[int, Type] = {0x01: Handshake, 0x02: TxToDx, 0x03: DxToTx, 0x04: End}
TYPE_CODES = {cls: code for code, cls in MESSAGE_TYPES.items()}


def _field_count(cls) -> int:
    return len(fields(cls)) - 1


PAYLOADS = {code: cst.Array(_field_count(cls), cst.Float64l) for code, cls in MESSAGE_TYPES.items()}


def validate_handshake(msg: Handshake) -> Handshake:
    """Reject timestep pairs whose ratio is not a positive integer."""
    if not (msg.t_t >= msg.t_d > 0):
        raise HandshakeRejected(f"need t_t >= t_d > 0, got {msg.t_t}, {msg.t_d}")
    ratio = msg.t_t / msg.t_d
    if abs(ratio - round(ratio)) > 1e-9 * ratio:
        raise HandshakeRejected(f"t_t/t_d = {ratio} is not an integer")
    return msg


def encode(msg: Message) -> bytes:
    """Serialize a message into one frame."""
    code = TYPE_CODES[type(msg)]
    values = [float(v) for v in astuple(msg)[:-1]]
    payload = PAYLOADS[code].build(values)
    header = HEADER.build(
        dict(magic=MAGIC, version=VERSION, msg_type=code, seq=msg.seq, payload_len=len(payload))
    )
    return header + payload


def decode_header(data: bytes) -> cst.Container:
    if len(data) < HEADER_SIZE:
        raise LengthMismatchError(f"frame shorter than header: {len(data)} bytes")
    header = HEADER.parse(data[:HEADER_SIZE])
    if header.magic != MAGIC:
        raise BadMagicError(f"bad magic {header.magic!r}")
    if header.version != VERSION:
        raise ProtocolError(f"unsupported protocol version {header.version}")
    if header.msg_type not in MESSAGE_TYPES:
        raise UnknownMessageError(f"unknown message type 0x{header.msg_type:02x}")
    expected = 8 * _field_count(MESSAGE_TYPES[header.msg_type])
    if header.payload_len != expected:
        raise LengthMismatchError(
            f"type 0x{header.msg_type:02x} needs {expected} payload bytes, header says {header.payload_len}"
        )
    return header


def decode(data: bytes) -> Message:
    """
    Parse one complete frame.

    Args:
        data: Header plus payload

    Returns:
        The decoded message, seq included
    """
    header = decode_header(data)
    if len(data) != HEADER_SIZE + header.payload_len:
        raise LengthMismatchError(
            f"frame is {len(data)} bytes, header announces {HEADER_SIZE + header.payload_len}"
        )
    values = PAYLOADS[header.msg_type].parse(data[HEADER_SIZE:])
    msg = MESSAGE_TYPES[header.msg_type](*values, seq=header.seq)
    if isinstance(msg, Handshake):
        validate_handshake(msg)
    return msg


class Channel:
    """Blocking framed message stream over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.tx_seq = 0
        self.rx_seq = 0

    def send(self, msg: Message):
        self.tx_seq += 1
        frame = encode(type(msg)(*astuple(msg)[:-1], seq=self.tx_seq))
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise PeerDisconnected(f"send failed: {exc}") from exc

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            try:
                chunk = self.sock.recv(remaining)
            except OSError as exc:
                raise PeerDisconnected(f"receive failed: {exc}") from exc
            if not chunk:
                raise PeerDisconnected("peer closed the connection")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def recv(self) -> Message:
        head = self._recv_exact(HEADER_SIZE)
        header = decode_header(head)
        msg = decode(head + self._recv_exact(header.payload_len))
        if msg.seq != self.rx_seq + 1:
            raise SequenceError(f"expected seq {self.rx_seq + 1}, got {msg.seq}")
        self.rx_seq = msg.seq
        return msg

    def expect(self, cls: Type) -> Message:
        msg = self.recv()
        if not isinstance(msg, cls):
            raise ProtocolError(f"expected {cls.__name__}, got {type(msg).__name__}")
        return msg

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


def _handshake_for(config: ScenarioConfig) -> Handshake:
    return Handshake(config.t_t, config.t_d, config.duration, float(scenario_hash(config)))


def run_tx_node(
    config: ScenarioConfig,
    host: str = "127.0.0.1",
    port: int = 5720,
    timeout: Optional[float] = 60.0,
    on_listening: Optional[Callable[[int], None]] = None,
) -> RunTrace:
    """
    Serve the transmission half of a run to one distribution peer.

    Args:
        config: Scenario, identical to the peer's
        host: Bind address
        port: Bind port (0 picks a free one)
        timeout: Socket timeout (s)
        on_listening: Called with the bound port once accepting

    Returns:
        Coarse trace; status "error" if the session broke off
    """
    trace = RunTrace.allocate(config)
    with socket.create_server((host, port)) as server:
        server.settimeout(timeout)
        bound = server.getsockname()[1]
        logger.info("tx node listening on %s:%d", host, bound)
        if on_listening is not None:
            on_listening(bound)
        conn, peer = server.accept()
    conn.settimeout(timeout)
    chan = Channel(conn)
    logger.info("tx node: peer %s connected", peer)
    try:
        chan.send(_handshake_for(config))
        first = chan.expect(DxToTx)
        logger.info("handshake accepted, initial feedback %.3f kW", first.p_kw)
        tx = TransmissionNode(config, first.p_kw)
        feedback = None
        for k in range(config.n_exchanges):
            out = tx.step(feedback)
            trace.record_coarse(k, out, tx.last_feedback_kw)
            s = out.sample
            chan.send(TxToDx(s.t, s.v_mag, wrap_angle(s.theta), out.p_sfr_request_kw, out.f_sys))
            reply = chan.expect(DxToTx)
            if reply.t != s.t:
                raise ProtocolError(f"lockstep broken: sent t={s.t}, reply for t={reply.t}")
            feedback = reply.p_kw
        chan.send(End(config.n_exchanges * config.t_t))
    except CollapseError as exc:
        trace.fail(exc)
        _try_end(chan, trace.n_coarse * config.t_t)
    except ProtocolError as exc:
        trace.fail(exc)
    finally:
        chan.close()
    return trace.finish()


def _try_end(chan: Channel, t: float):
    try:
        chan.send(End(t))
    except ProtocolError:
        pass


def _connect(host: str, port: int, timeout: Optional[float]) -> socket.socket:
    """Connect, retrying refused attempts until the timeout while the peer starts listening."""
    deadline = None if timeout is None else time.monotonic() + timeout
    while True:
        try:
            return socket.create_connection((host, port), timeout=timeout)
        except ConnectionRefusedError:
            if deadline is not None and time.monotonic() >= deadline:
                raise
            time.sleep(CONNECT_RETRY_S)


def run_dx_node(
    config: ScenarioConfig,
    host: str = "127.0.0.1",
    port: int = 5720,
    timeout: Optional[float] = 60.0,
) -> RunTrace:
    """
    Connect to a transmission node and run the distribution half.

    A handshake that does not match this scenario raises HandshakeRejected;
    a session that breaks off later returns the partial trace.

    Returns:
        Fine and verdict trace
    """
    static = calibrate_static_thresholds(config) if config.detector is Detector.STATIC else None
    dx = DistributionNode(config, static)
    trace = RunTrace.allocate(config)
    sock = _connect(host, port, timeout)
    chan = Channel(sock)
    try:
        hs = chan.expect(Handshake)
        ours = _handshake_for(config)
        if (hs.t_t, hs.t_d, hs.duration, hs.scenario_hash) != astuple(ours)[:-1]:
            raise HandshakeRejected(f"peer scenario {hs} does not match {ours}")
        initial = dx.initial_feedback
        chan.send(DxToTx(0.0, initial.p_kw, initial.q_kvar, initial.p_avail_kw))
        while True:
            msg = chan.recv()
            if isinstance(msg, End):
                expected = config.n_exchanges * config.t_t
                if not math.isclose(msg.t, expected):
                    trace.fail(ProtocolError(f"peer ended at t={msg.t}, expected {expected}"))
                break
            if not isinstance(msg, TxToDx):
                raise ProtocolError(f"unexpected {type(msg).__name__} in session")
            fb = dx.on_exchange(msg.t, msg.v_mag, msg.theta, msg.p_sfr_request_kw, msg.f_sys, trace)
            chan.send(DxToTx(msg.t, fb.p_kw, fb.q_kvar, fb.p_avail_kw))
    except HandshakeRejected:
        raise
    except ProtocolError as exc:
        trace.fail(exc)
    finally:
        chan.close()
    logger.info("dx node finished: %s", trace.status)
    return trace.finish()

