"""Binary update frames and the single-round hub/worker protocol.

Update frame (all fields little-endian)::

    offset  size  field
    0       4     magic b"DIC1"
    4       1     version (1)
    5       4     machine_id  u32
    9       4     p           u32
    13      4     n           u32
    17      8     rho         f64
    25      4     entry_count u32
    29      16*k  entries: i u32, j u32, v f64, sorted by (i, j), i <= j

Every protocol message travels as a u32 payload length followed by the
payload, whose first byte is the message kind:

    HELLO   0x01  machine_id u32
    CONFIG  0x02  p u32, n u32, lambda f64, B u64, base_seed u64
    UPDATE  0x03  update frame
    ACK     0x04  status u8 (0 accepted, 1 rejected)

A worker connection carries exactly one HELLO -> CONFIG -> UPDATE -> ACK
exchange and is then closed by the hub.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .debias import SparseUpdate, machine_estimate
from .errors import (
    ConnectionFailed,
    DimensionMismatch,
    InvalidParameter,
    InvariantViolation,
    MalformedFrame,
    ProtocolTimeout,
)
from .hub import HubEstimate, combine
from .matrixcore import SparseSymMatrix, as_data_matrix

log = logging.getLogger(__name__)

MAGIC = b"DIC1"
VERSION = 1
HEADER = struct.Struct("<4sBIIIdI")
ENTRY = np.dtype([("i", "<u4"), ("j", "<u4"), ("v", "<f8")])
HEADER_SIZE = HEADER.size  # 29

HELLO, CONFIG, UPDATE, ACK = 1, 2, 3, 4
ACK_OK, ACK_REJECT = 0, 1
_LEN = struct.Struct("<I")
_HELLO = struct.Struct("<BI")
_CONFIG = struct.Struct("<BIIdQQ")
_ACK = struct.Struct("<BB")
MAX_PAYLOAD = 1 << 31


def encode_update(update: SparseUpdate) -> bytes:
    e = update.entries
    header = HEADER.pack(MAGIC, VERSION, update.machine_id, update.p, update.n, update.rho, e.nnz)
    body = np.empty(e.nnz, dtype=ENTRY)
    body["i"] = e.rows
    body["j"] = e.cols
    body["v"] = e.values
    return header + body.tobytes()


def decode_update(data: bytes) -> SparseUpdate:
    data = bytes(data)
    if len(data) < HEADER_SIZE:
        raise MalformedFrame(f"frame of {len(data)} bytes is shorter than the header")
    magic, version, machine_id, p, n, rho, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedFrame(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedFrame(f"unsupported version {version}")
    expected = HEADER_SIZE + count * ENTRY.itemsize
    if len(data) != expected:
        raise MalformedFrame(f"frame declares {count} entries ({expected} bytes) but has {len(data)} bytes")
    body = np.frombuffer(data, dtype=ENTRY, count=count, offset=HEADER_SIZE)
    rows = body["i"].astype(np.int64)
    cols = body["j"].astype(np.int64)
    vals = body["v"].astype(np.float64)
    if count:
        if np.any(rows > cols):
            raise InvariantViolation("entry with i > j")
        keys = rows * max(p, 1) + cols
        if np.any(np.diff(keys) <= 0):
            raise InvariantViolation("entries are unsorted or duplicated")
        if np.any(cols >= p):
            raise InvariantViolation("entry index out of range")
        if np.any(vals == 0):
            raise InvariantViolation("zero-valued entry")
    if p < 1:
        raise InvariantViolation("p must be >= 1")
    entries = SparseSymMatrix(p, rows, cols, vals)
    return SparseUpdate(machine_id=machine_id, p=p, n=n, entries=entries, rho=rho)


@dataclass(frozen=True)
class WorkerConfig:
    """What the hub pushes to every worker."""

    p: int
    n: int
    lam: float
    B: int
    base_seed: int


class FrameStream:
    """Length-prefixed frames over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock

    def send_frame(self, payload: bytes) -> None:
        self.sock.sendall(_LEN.pack(len(payload)) + payload)

    def _recv_exact(self, size: int) -> bytes:
        chunks = []
        while size:
            chunk = self.sock.recv(min(size, 1 << 20))
            if not chunk:
                raise ConnectionFailed("peer closed the connection mid-frame")
            chunks.append(chunk)
            size -= len(chunk)
        return b"".join(chunks)

    def recv_frame(self) -> bytes:
        (size,) = _LEN.unpack(self._recv_exact(_LEN.size))
        if size == 0 or size > MAX_PAYLOAD:
            raise MalformedFrame(f"bad payload length {size}")
        return self._recv_exact(size)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def pack_hello(machine_id: int) -> bytes:
    return _HELLO.pack(HELLO, machine_id)


def pack_config(cfg: WorkerConfig) -> bytes:
    return _CONFIG.pack(CONFIG, cfg.p, cfg.n, cfg.lam, cfg.B, cfg.base_seed)


def pack_update(update: SparseUpdate) -> bytes:
    return bytes([UPDATE]) + encode_update(update)


def pack_ack(status: int) -> bytes:
    return _ACK.pack(ACK, status)


def unpack_message(payload: bytes):
    """Return ``(kind, body)`` where body is the decoded message content."""
    if not payload:
        raise MalformedFrame("empty payload")
    kind = payload[0]
    try:
        if kind == HELLO:
            return kind, _HELLO.unpack(payload)[1]
        if kind == CONFIG:
            _, p, n, lam, B, seed = _CONFIG.unpack(payload)
            return kind, WorkerConfig(p, n, lam, B, seed)
        if kind == UPDATE:
            return kind, decode_update(payload[1:])
        if kind == ACK:
            return kind, _ACK.unpack(payload)[1]
    except struct.error as exc:
        raise MalformedFrame(f"message kind {kind}: {exc}") from exc
    raise MalformedFrame(f"unknown message kind {kind}")


def _expect(stream: FrameStream, kind: int):
    got, body = unpack_message(stream.recv_frame())
    if got != kind:
        raise MalformedFrame(f"expected message kind {kind}, got {got}")
    return body


class Hub:
    """Collect exactly one update from each of ``M`` workers, then combine.

    Sessions run on their own threads. A HELLO for a machine that is
    already connected or done is answered with a rejecting ACK and the hub
    keeps waiting for the missing ids.
    """

    def __init__(self, M: int, worker_config: WorkerConfig, tau: float, address=("127.0.0.1", 0), timeout=60.0):
        if M < 1:
            raise InvalidParameter("M must be >= 1")
        self.M = M
        self.worker_config = worker_config
        self.tau = tau
        self.timeout = timeout
        self._lock = threading.Condition()
        self._updates: dict[int, SparseUpdate] = {}
        self._active: set[int] = set()
        self._dropped: dict[int, str] = {}
        self.rejected: list[int] = []
        self._sock = socket.create_server(address)
        self._sock.settimeout(0.05)

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()[:2]

    def _session(self, conn: socket.socket) -> None:
        stream = FrameStream(conn)
        conn.settimeout(self.timeout)
        machine_id = None
        try:
            machine_id = _expect(stream, HELLO)
            with self._lock:
                bad = machine_id >= self.M or machine_id in self._active or machine_id in self._updates
                if not bad:
                    self._active.add(machine_id)
            if bad:
                log.warning("rejecting HELLO from machine %d", machine_id)
                self.rejected.append(machine_id)
                stream.send_frame(pack_ack(ACK_REJECT))
                machine_id = None
                return
            stream.send_frame(pack_config(self.worker_config))
            update = _expect(stream, UPDATE)
            if update.machine_id != machine_id:
                raise InvariantViolation(f"update claims machine {update.machine_id}, session is {machine_id}")
            if update.p != self.worker_config.p:
                raise DimensionMismatch(f"update has p={update.p}, expected {self.worker_config.p}")
            if update.bandwidth_used > self.worker_config.B:
                raise InvariantViolation(
                    f"machine {machine_id} used {update.bandwidth_used} cells of a {self.worker_config.B} budget"
                )
            stream.send_frame(pack_ack(ACK_OK))
            with self._lock:
                self._active.discard(machine_id)
                self._updates[machine_id] = update
                self._lock.notify_all()
            machine_id = None
        except (OSError, ConnectionFailed, MalformedFrame, InvariantViolation, DimensionMismatch) as exc:
            log.warning("session for machine %s failed: %s", machine_id, exc)
            if machine_id is not None:
                try:
                    stream.send_frame(pack_ack(ACK_REJECT))
                except OSError:
                    pass
        finally:
            if machine_id is not None:
                with self._lock:
                    self._active.discard(machine_id)
                    self._dropped[machine_id] = "disconnected before UPDATE"
                    self._lock.notify_all()
            stream.close()

    def serve(self) -> HubEstimate:
        deadline = time.monotonic() + self.timeout
        threads = []
        try:
            while True:
                with self._lock:
                    if len(self._updates) == self.M:
                        break
                if time.monotonic() > deadline:
                    with self._lock:
                        missing = sorted(set(range(self.M)) - set(self._updates))
                        dropped = {m: self._dropped[m] for m in missing if m in self._dropped}
                    detail = f"; dropped: {dropped}" if dropped else ""
                    raise ProtocolTimeout(f"no update from machines {missing}{detail}", machine_ids=missing)
                try:
                    conn, _ = self._sock.accept()
                except socket.timeout:
                    continue
                th = threading.Thread(target=self._session, args=(conn,), daemon=True)
                th.start()
                threads.append(th)
        finally:
            self._sock.close()
        for th in threads:
            th.join(timeout=1.0)
        with self._lock:
            updates = [self._updates[m] for m in sorted(self._updates)]
        return combine(updates, self.tau)

    def close(self) -> None:
        self._sock.close()


def hub_serve(config, address=None) -> HubEstimate:
    """Serve one round for ``config`` (an ``ExperimentConfig``) and return the combined estimate."""
    addr = address or (config.address, config.port)
    wc = WorkerConfig(config.p, config.n, config.lam_machine, config.bandwidth, config.base_seed)
    return Hub(config.M, wc, config.tau_hub, addr, config.timeout).serve()


def worker_run(data, address, machine_id: int, timeout: float = 60.0, stream_factory=FrameStream) -> int:
    """Connect, announce ``machine_id``, compute the update the hub asks for and send it.

    ``data`` is the machine's sample block, or a callable that receives the
    hub's :class:`WorkerConfig` and returns the block. Returns the ACK status.
    """
    try:
        sock = socket.create_connection(tuple(address), timeout=timeout)
    except OSError as exc:
        raise ConnectionFailed(f"cannot reach hub at {address}: {exc}") from exc
    stream = stream_factory(sock)
    try:
        stream.send_frame(pack_hello(machine_id))
        kind, body = unpack_message(stream.recv_frame())
        if kind == ACK:
            return body
        if kind != CONFIG:
            raise MalformedFrame(f"expected CONFIG, got kind {kind}")
        cfg = body
        x = as_data_matrix(data(cfg) if callable(data) else data)
        if x.shape != (cfg.n, cfg.p):
            raise DimensionMismatch(f"data has shape {x.shape}, hub expects ({cfg.n}, {cfg.p})")
        update = machine_estimate(x, cfg.lam, cfg.B, machine_id)
        if update.bandwidth_used > cfg.B:
            raise InvariantViolation(f"update needs {update.bandwidth_used} cells, budget is {cfg.B}")
        stream.send_frame(pack_update(update))
        return _expect(stream, ACK)
    except OSError as exc:
        raise ConnectionFailed(str(exc)) from exc
    finally:
        stream.close()
