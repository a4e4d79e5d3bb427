"""Localhost TCP backend with the same API as ``SimTransport``.

Each node listens on its own port.  Frames are a 4-byte big-endian length
followed by an encoded Communique.  Reader threads only enqueue frames; all
delivery, handler and timer work happens in whichever thread calls
``step``, so the single-owner rule of the simulator still holds.
Advertisements spread by flooding with duplicate suppression by id.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import queue
import socket
import struct
import threading
import time
from typing import Callable, Optional

from .transport import (
    _ADV,
    Advertisement,
    BaseTransport,
    Communique,
    SendResult,
    SendState,
    SimParams,
    TransportError,
    TransportStopped,
    decode_frame,
    encode_frame,
)

log = logging.getLogger(__name__)

__all__ = ["SocketTransport", "read_frame", "write_frame"]

_LEN = struct.Struct(">I")


def write_frame(sock: socket.socket, data: bytes) -> None:
    sock.sendall(_LEN.pack(len(data)) + data)


def _read_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket) -> Optional[bytes]:
    head = _read_exact(sock, _LEN.size)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    return _read_exact(sock, n)


class SocketTransport(BaseTransport):
    def __init__(self, params: Optional[SimParams] = None, host: str = "127.0.0.1"):
        super().__init__(params)
        self.host = host
        self.addresses: dict = {}
        self._listeners: dict = {}
        self._conns: dict = {}
        self._lock = threading.Lock()
        self._inbound: queue.Queue = queue.Queue()
        self._timers: list = []
        self._tick = itertools.count()
        self._t0 = time.monotonic()
        self._threads: list = []

    @property
    def now(self) -> float:
        return (time.monotonic() - self._t0) * 1000.0

    # -- endpoints ------------------------------------------------------------
    def add_node(self, node: str) -> None:
        super().add_node(node)
        if node in self._listeners:
            return
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((self.host, 0))
        srv.listen()
        self._listeners[node] = srv
        self.addresses[node] = srv.getsockname()
        t = threading.Thread(target=self._accept, args=(node, srv), daemon=True)
        t.start()
        self._threads.append(t)

    def _accept(self, node: str, srv: socket.socket) -> None:
        while True:
            try:
                conn, _ = srv.accept()
            except OSError:
                return
            t = threading.Thread(target=self._read, args=(node, conn), daemon=True)
            t.start()

    def _read(self, node: str, conn: socket.socket) -> None:
        with conn:
            while True:
                try:
                    data = read_frame(conn)
                except OSError:
                    return
                if data is None:
                    return
                try:
                    self._inbound.put(decode_frame(data))
                except (TransportError, KeyError, ValueError):
                    log.warning("%s: dropped malformed frame", node)

    def kill(self, node: str) -> None:
        super().kill(node)
        srv = self._listeners.pop(node, None)
        if srv is not None:
            srv.close()
        with self._lock:
            for key in [k for k in self._conns if node in k]:
                self._conns.pop(key).close()

    def close(self) -> None:
        self.stop()
        for node in list(self._listeners):
            self._listeners.pop(node).close()
        with self._lock:
            for s in self._conns.values():
                s.close()
            self._conns.clear()

    # -- sending ------------------------------------------------------------------
    def _connection(self, src: str, dst: str) -> socket.socket:
        with self._lock:
            s = self._conns.get((src, dst))
            if s is None:
                s = socket.create_connection(self.addresses[dst], timeout=self.params.timeout / 1000)
                self._conns[(src, dst)] = s
            return s

    def send(self, msg: Communique, attempts: Optional[int] = None,
             timeout: Optional[int] = None) -> SendResult:
        if not self.running:
            raise TransportStopped("transport stopped")
        self._check_channel(msg.channel)
        self._check_size(msg)
        if msg.dst not in self.nodes:
            raise TransportError(f"unknown destination {msg.dst}")
        attempts = attempts or self.params.attempts
        res = SendResult(msg, started_at=self.now)
        self.sent_by[msg.src] += 1
        frame = encode_frame(msg)
        for k in range(attempts):
            res.attempts = k + 1
            if not self.reachable(msg.src, msg.dst):
                continue
            try:
                write_frame(self._connection(msg.src, msg.dst), frame)
            except OSError:
                with self._lock:
                    bad = self._conns.pop((msg.src, msg.dst), None)
                if bad is not None:
                    bad.close()
                continue
            res._finish(SendState.DELIVERED, self.now)
            return res
        res._finish(SendState.GAVE_UP, self.now)
        self._skip(msg, self.now)
        return res

    def _deliver(self, msg: Communique, now: float) -> None:
        if msg.channel == _ADV and self.alive(msg.dst):
            adv = Advertisement.decode(msg.payload)
            fresh = adv.id not in self.caches[msg.dst]
            super()._deliver(msg, now)
            if fresh:
                for peer in sorted(self.nodes):
                    if peer not in (msg.dst, msg.src) and self.reachable(msg.dst, peer):
                        self.send(self.make(msg.dst, peer, _ADV, msg.payload, None))
            return
        super()._deliver(msg, now)

    # -- time -------------------------------------------------------------------------
    def schedule(self, at: float, fn: Callable[[], None]) -> None:
        heapq.heappush(self._timers, (at, next(self._tick), fn))

    def step(self, until: float) -> list:
        start = len(self.events)
        while True:
            while True:
                try:
                    msg = self._inbound.get_nowait()
                except queue.Empty:
                    break
                self._arrive(msg, self.now)
            if self._timers and self._timers[0][0] <= self.now:
                _, _, fn = heapq.heappop(self._timers)
                fn()
                continue
            now = self.now
            if now >= until:
                break
            wake = min([until] + [t[0] for t in self._timers[:1]])
            try:
                msg = self._inbound.get(timeout=max(0.0, (wake - now) / 1000.0))
            except queue.Empty:
                continue
            self._arrive(msg, self.now)
        return [e for e in self.events[start:] if e.kind == "delivered"]

    def idle(self) -> bool:
        return self._inbound.empty() and not self._timers
