"""Framed wire protocol plus the client session and store server built on it.

Every inter-process exchange in the system is a request/reply of frames over
a reliable byte stream:

    u32 length | magic "DMND" | u8 version | u8 op | u8 flags | u32 seq | body

`length` counts everything after itself. Version is 1. Replies echo the
request's sequence number, and each session's replies arrive in request
order. A session starts with a Hello frame naming the caller's tier id;
idle clients re-send Hello with the keepalive flag. Frames above 16 MiB are
answered with an Error and the session stays open, as do unknown ops and
malformed bodies; only framing corruption closes a session.

The server owns the fail-safe trigger: when a tier's most recent session
closes, or stops sending frames for `heartbeat_seconds * missed_beats`, the
demands that tier holds are requeued.
"""

from __future__ import annotations

import json
import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from . import demand as dm
from .demand import Cursor, Demand, DemandKind, DemandSignature, TierId
from .errors import (
    ConnectError,
    HandshakeError,
    NotFoundError,
    OwnershipError,
    ProtocolError,
    TiernetError,
    TransportError,
    UnknownTierError,
)
from .store import Accepted, AlreadyComputed, DemandStore, StoreStats

log = logging.getLogger(__name__)

MAGIC = b"DMND"
VERSION = 1
MAX_FRAME = 16 * 1024 * 1024
HEADER = struct.Struct(">4sBBBI")  # magic, version, op, flags, seq

OP_HELLO = 1
OP_DEPOSIT = 2
OP_GRAB = 3
OP_RETURN = 4
OP_LOOKUP = 5
OP_REQUEUE = 6
OP_STATS = 7
OP_REPLY = 8
OP_ERROR = 9

FLAG_KEEPALIVE = 0x01

_KIND_BIT = {DemandKind.INTENSIONAL: 1, DemandKind.PROCEDURAL: 2, DemandKind.SYSTEM: 4}

_ERROR_CLASSES = {
    "protocol": ProtocolError,
    "ownership": OwnershipError,
    "not-found": NotFoundError,
    "unknown-tier": UnknownTierError,
    "state-machine": ProtocolError,
    "handshake": HandshakeError,
}


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        host, sep, port = text.strip().rpartition(":")
        if not sep or not host:
            raise ValueError(f"endpoint must be host:port, got {text!r}")
        p = int(port)
        if not (0 <= p <= 65535):
            raise ValueError(f"port out of range: {text!r}")
        return cls(host, p)


@dataclass(frozen=True)
class Frame:
    op: int
    seq: int
    body: bytes = b""
    flags: int = 0
    version: int = VERSION


def write_frame(sock: socket.socket, frame: Frame) -> None:
    header = HEADER.pack(MAGIC, frame.version, frame.op, frame.flags, frame.seq)
    payload = header + frame.body
    if len(payload) > MAX_FRAME + HEADER.size:
        raise TransportError(f"frame body of {len(frame.body)} bytes exceeds 16 MiB limit")
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def _recv_exact(rfile, n: int) -> bytes:
    buf = rfile.read(n)
    if buf is None or len(buf) < n:
        raise EOFError("connection closed")
    return buf


def _teardown(sock: socket.socket, rfile=None) -> None:
    """Close a socket so blocked readers (here or on the peer) wake up.

    makefile() keeps the fd referenced, so close() alone neither sends FIN
    nor unblocks a reader; shutdown() first, then drop both handles.
    """
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    if rfile is not None:
        try:
            rfile.close()
        except OSError:
            pass
    try:
        sock.close()
    except OSError:
        pass


def read_frame(rfile, enforce_version: bool = True):
    """Read one frame; returns (Frame, oversize_flag).

    Oversize frames are drained and flagged rather than raised so the server
    can reply with a structured error on a still-healthy session.
    """
    (length,) = struct.unpack(">I", _recv_exact(rfile, 4))
    if length < HEADER.size:
        raise TransportError("runt frame")
    header = _recv_exact(rfile, HEADER.size)
    magic, version, op, flags, seq = HEADER.unpack(header)
    if magic != MAGIC:
        raise TransportError("bad magic; stream corrupt")
    body_len = length - HEADER.size
    if length > MAX_FRAME + HEADER.size:
        remaining = body_len
        while remaining > 0:
            chunk = rfile.read(min(65536, remaining))
            if not chunk:
                raise EOFError("connection closed")
            remaining -= len(chunk)
        return Frame(op=op, seq=seq, flags=flags, version=version), True
    body = _recv_exact(rfile, body_len) if body_len else b""
    if enforce_version and version != VERSION:
        raise HandshakeError(f"peer speaks version {version}, expected {VERSION}")
    return Frame(op=op, seq=seq, body=body, flags=flags, version=version), False


def encode_error(code: str, message: str) -> bytes:
    return dm.pack_str(code) + dm.pack_str(message)


def decode_error(body: bytes):
    cur = Cursor(body)
    return cur.str_(), cur.str_()


def encode_grab_request(kinds: Iterable, context_filter=None) -> bytes:
    mask = 0
    for k in kinds:
        mask |= _KIND_BIT[k]
    entries = list(context_filter or [])
    out = [bytes([mask]), struct.pack(">I", len(entries))]
    for name, tag in entries:
        out.append(dm.pack_str(str(name)))
        out.append(struct.pack(">q", int(tag)))
    return b"".join(out)


def decode_grab_request(body: bytes):
    cur = Cursor(body)
    mask = cur.u8()
    kinds = {k for k, bit in _KIND_BIT.items() if mask & bit}
    n = cur.u32()
    context_filter = [(cur.str_(), cur.i64()) for _ in range(n)]
    return kinds, context_filter


# --- client session ----------------------------------------------------------


class Session:
    """One open connection to a store; one logical caller at a time."""

    def __init__(self, sock: socket.socket, endpoint: Endpoint, tier: TierId):
        self._sock = sock
        self._rfile = sock.makefile("rb")
        self.endpoint = endpoint
        self.peer_tier = tier
        self._seq = 0
        self._lock = threading.Lock()
        self._closed = False
        self._keepalive_thread = None
        self._keepalive_stop = threading.Event()

    @property
    def open(self) -> bool:
        return not self._closed

    def call(self, op: int, body: bytes = b"", flags: int = 0) -> Frame:
        with self._lock:
            if self._closed:
                raise TransportError("session is closed")
            self._seq += 1
            seq = self._seq
            try:
                write_frame(self._sock, Frame(op=op, seq=seq, body=body, flags=flags))
                reply, oversize = read_frame(self._rfile)
            except (OSError, EOFError, ValueError) as e:
                self.close()
                raise TransportError(f"session to {self.endpoint} lost: {e}") from e
            if oversize:
                raise TransportError("oversize reply")
        if reply.seq != seq:
            self.close()
            raise TransportError(f"reply out of order: sent {seq}, got {reply.seq}")
        if reply.op == OP_ERROR:
            code, message = decode_error(reply.body)
            raise _ERROR_CLASSES.get(code, TiernetError)(message)
        if reply.op != OP_REPLY:
            self.close()
            raise TransportError(f"unexpected reply op {reply.op}")
        return reply

    def hello(self, keepalive: bool = False) -> None:
        self.call(
            OP_HELLO,
            dm.encode_tier_id(self.peer_tier),
            flags=FLAG_KEEPALIVE if keepalive else 0,
        )

    def rebind(self, tier: TierId) -> None:
        """Re-identify this session (a node learns its id after registering)."""
        self.peer_tier = tier
        self.hello()

    def deposit(self, demand: Demand):
        reply = self.call(OP_DEPOSIT, dm.encode_demand(demand))
        cur = Cursor(reply.body)
        if cur.u8() == 1:
            return AlreadyComputed(cur.bytes_())
        return Accepted()

    def grab(self, kinds: Iterable, context_filter=None) -> Optional[Demand]:
        reply = self.call(OP_GRAB, encode_grab_request(kinds, context_filter))
        cur = Cursor(reply.body)
        if cur.u8() == 0:
            return None
        return dm.decode_demand(None, cur)

    def return_result(self, signature: DemandSignature, result: bytes) -> None:
        self.call(OP_RETURN, dm.encode_signature(signature) + dm.pack_bytes(result))

    def lookup(self, signature: DemandSignature) -> Optional[bytes]:
        reply = self.call(OP_LOOKUP, dm.encode_signature(signature))
        cur = Cursor(reply.body)
        if cur.u8() == 0:
            return None
        return cur.bytes_()

    def requeue(self, tier: TierId) -> int:
        reply = self.call(OP_REQUEUE, dm.encode_tier_id(tier))
        return Cursor(reply.body).u32()

    def stats(self) -> StoreStats:
        reply = self.call(OP_STATS)
        return StoreStats.from_dict(json.loads(reply.body.decode("utf-8")))

    def start_keepalive(self, interval: float = 10.0) -> None:
        if self._keepalive_thread is not None:
            return

        def beat():
            while not self._keepalive_stop.wait(interval):
                try:
                    self.hello(keepalive=True)
                except TiernetError:
                    return

        self._keepalive_thread = threading.Thread(target=beat, daemon=True)
        self._keepalive_thread.start()

    def close(self) -> None:
        self._closed = True
        self._keepalive_stop.set()
        _teardown(self._sock, self._rfile)

    def kill(self) -> None:
        """Abrupt failure: RST the connection, skip every shutdown nicety."""
        self._closed = True
        self._keepalive_stop.set()
        try:
            self._sock.setsockopt(
                socket.SOL_SOCKET, socket.SO_LINGER, struct.pack("ii", 1, 0)
            )
        except OSError:
            pass
        try:
            self._rfile.close()
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


def connect(
    endpoint: Endpoint,
    self_tier: TierId,
    timeout: float = 10.0,
    call_timeout: float = 60.0,
) -> Session:
    """Open a session and complete the Hello exchange."""
    try:
        sock = socket.create_connection((endpoint.host, endpoint.port), timeout=timeout)
    except OSError as e:
        raise ConnectError(f"cannot connect to {endpoint}: {e}") from e
    sock.settimeout(call_timeout)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    session = Session(sock, endpoint, self_tier)
    session.hello()
    return session


# --- server ------------------------------------------------------------------


class _ServerSession:
    def __init__(self, sock, addr):
        self.sock = sock
        self.addr = addr
        self.rfile = sock.makefile("rb")
        self.tier: Optional[TierId] = None
        self.last_seen = time.monotonic()


class StoreServer:
    """Serves one DemandStore over the framed protocol.

    Tracks the most recent session per tier; when that session closes or its
    heartbeat lapses, the tier's held demands are requeued and `on_tier_lost`
    fires. `on_tier_seen` fires whenever a session (re)binds a tier identity.
    """

    def __init__(
        self,
        store: DemandStore,
        host: str = "127.0.0.1",
        port: int = 0,
        heartbeat_seconds: float = 10.0,
        missed_beats: int = 3,
        on_tier_seen: Optional[Callable[[TierId], None]] = None,
        on_tier_lost: Optional[Callable[[TierId], None]] = None,
    ):
        self.store = store
        self.heartbeat_seconds = heartbeat_seconds
        self.missed_beats = missed_beats
        self.on_tier_seen = on_tier_seen
        self.on_tier_lost = on_tier_lost
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self.endpoint = Endpoint(host, self._listener.getsockname()[1])
        self._latest: dict = {}  # TierId -> _ServerSession
        self._sessions: set = set()
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._threads = []

    def start(self) -> "StoreServer":
        self._listener.listen(128)
        t = threading.Thread(target=self._accept_loop, daemon=True, name="store-accept")
        t.start()
        self._threads.append(t)
        r = threading.Thread(target=self._reaper_loop, daemon=True, name="store-reaper")
        r.start()
        self._threads.append(r)
        log.info("store listening on %s", self.endpoint)
        return self

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            sessions = list(self._sessions)
        for s in sessions:
            _teardown(s.sock, s.rfile)

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            session = _ServerSession(sock, addr)
            with self._lock:
                self._sessions.add(session)
            t = threading.Thread(
                target=self._serve_session, args=(session,), daemon=True
            )
            t.start()

    def _reaper_loop(self) -> None:
        interval = max(0.05, self.heartbeat_seconds / 2)
        deadline = self.heartbeat_seconds * self.missed_beats
        while not self._stop.wait(interval):
            now = time.monotonic()
            with self._lock:
                stale = [s for s in self._sessions if now - s.last_seen > deadline]
            for s in stale:
                log.warning(
                    "session %s (%s) missed %d heartbeats; closing",
                    s.addr,
                    s.tier,
                    self.missed_beats,
                )
                _teardown(s.sock, s.rfile)

    def _serve_session(self, session: _ServerSession) -> None:
        try:
            while True:
                try:
                    frame, oversize = read_frame(session.rfile, enforce_version=False)
                except (EOFError, OSError, TransportError, ValueError):
                    return
                session.last_seen = time.monotonic()
                if oversize:
                    self._reply_error(session, frame.seq, "protocol", "frame exceeds 16 MiB")
                    continue
                try:
                    self._dispatch(session, frame)
                except (OSError, TransportError):
                    return
        finally:
            self._session_ended(session)

    def _dispatch(self, session: _ServerSession, frame: Frame) -> None:
        if frame.version != VERSION:
            self._reply_error(
                session,
                frame.seq,
                "handshake",
                f"version {frame.version} not supported, expected {VERSION}",
            )
            return
        if frame.op == OP_HELLO:
            try:
                tier = dm.decode_tier_id(Cursor(frame.body))
            except ValueError as e:
                self._reply_error(session, frame.seq, "protocol", f"bad hello: {e}")
                return
            keepalive = bool(frame.flags & FLAG_KEEPALIVE)
            if not keepalive or session.tier is None:
                self._bind_tier(session, tier)
            self._reply(session, frame.seq, b"")
            return
        if session.tier is None:
            self._reply_error(session, frame.seq, "protocol", "hello must precede other ops")
            return
        try:
            if frame.op == OP_DEPOSIT:
                demand = dm.decode_demand(frame.body)
                outcome = self.store.deposit(demand)
                if isinstance(outcome, AlreadyComputed):
                    self._reply(session, frame.seq, b"\x01" + dm.pack_bytes(outcome.result))
                else:
                    self._reply(session, frame.seq, b"\x00")
            elif frame.op == OP_GRAB:
                kinds, context_filter = decode_grab_request(frame.body)
                demand = self.store.grab(session.tier, kinds, context_filter or None)
                if demand is None:
                    self._reply(session, frame.seq, b"\x00")
                else:
                    self._reply(session, frame.seq, b"\x01" + dm.encode_demand(demand))
            elif frame.op == OP_RETURN:
                cur = Cursor(frame.body)
                signature = dm.decode_signature(cur)
                result = cur.bytes_()
                self.store.return_result(session.tier, signature, result)
                self._reply(session, frame.seq, b"")
            elif frame.op == OP_LOOKUP:
                signature = dm.decode_signature(Cursor(frame.body))
                result = self.store.lookup(signature)
                if result is None:
                    self._reply(session, frame.seq, b"\x00")
                else:
                    self._reply(session, frame.seq, b"\x01" + dm.pack_bytes(result))
            elif frame.op == OP_REQUEUE:
                tier = dm.decode_tier_id(Cursor(frame.body))
                count = self.store.requeue_tier(tier)
                self._reply(session, frame.seq, struct.pack(">I", count))
            elif frame.op == OP_STATS:
                body = json.dumps(self.store.stats().as_dict()).encode("utf-8")
                self._reply(session, frame.seq, body)
            else:
                self._reply_error(session, frame.seq, "protocol", f"unknown op {frame.op}")
        except TiernetError as e:
            self._reply_error(session, frame.seq, e.code, str(e))
        except ValueError as e:
            self._reply_error(session, frame.seq, "protocol", f"malformed body: {e}")

    def has_session(self, tier: TierId) -> bool:
        with self._lock:
            return tier in self._latest

    def _bind_tier(self, session: _ServerSession, tier: TierId) -> None:
        self.store.connect_tier(tier)
        with self._lock:
            session.tier = tier
            self._latest[tier] = session
        if self.on_tier_seen is not None:
            self.on_tier_seen(tier)

    def _session_ended(self, session: _ServerSession) -> None:
        _teardown(session.sock, session.rfile)
        lost = None
        with self._lock:
            self._sessions.discard(session)
            tier = session.tier
            if tier is not None and self._latest.get(tier) is session:
                del self._latest[tier]
                lost = tier
        if lost is not None:
            requeued = self.store.requeue_tier(lost)
            if requeued:
                log.warning("tier %s went out of service; requeued %d demands", lost, requeued)
            if self.on_tier_lost is not None:
                self.on_tier_lost(lost)

    def _reply(self, session: _ServerSession, seq: int, body: bytes) -> None:
        write_frame(session.sock, Frame(op=OP_REPLY, seq=seq, body=body))

    def _reply_error(self, session: _ServerSession, seq: int, code: str, message: str) -> None:
        write_frame(session.sock, Frame(op=OP_ERROR, seq=seq, body=encode_error(code, message)))
