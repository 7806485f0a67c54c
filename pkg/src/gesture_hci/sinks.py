"""Newline-delimited JSON event sinks (stdout, file, TCP)."""
from __future__ import annotations

import json
import logging
import select
import socket
import sys
import time

log = logging.getLogger(__name__)


def encode_record(record: dict) -> str:
    return json.dumps(record, separators=(",", ":")) + "\n"


class StreamSink:
    def __init__(self, stream=None):
        self.stream = stream if stream is not None else sys.stdout
        self.sent = 0
        self.dropped = 0

    def publish(self, records) -> None:
        for r in records:
            self.stream.write(encode_record(r))
            self.sent += 1
        self.stream.flush()

    def close(self) -> None:
        if self.stream not in (sys.stdout, sys.stderr):
            self.stream.close()


class TcpSink:
    """Publishes to one TCP subscriber. Refusal at construction is fatal;
    later disconnects drop (and count) records while reconnecting with
    exponential backoff capped at `max_backoff` seconds."""

    def __init__(self, host: str, port: int, timeout: float = 2.0,
                 min_backoff: float = 0.05, max_backoff: float = 1.0):
        self.host, self.port = host, port
        self.timeout = timeout
        self.min_backoff, self.max_backoff = min_backoff, max_backoff
        self.backoff = min_backoff
        self.next_retry = 0.0
        self.sent = 0
        self.dropped = 0
        self.reconnects = 0
        self.sock = self._connect()

    def _connect(self) -> socket.socket:
        s = socket.create_connection((self.host, self.port), timeout=self.timeout)
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return s

    def _peer_closed(self) -> bool:
        r, _, _ = select.select([self.sock], [], [], 0)
        if not r:
            return False
        try:
            return self.sock.recv(1, socket.MSG_PEEK) == b""
        except OSError:
            return True

    def _drop_connection(self) -> None:
        if self.sock is not None:
            try:
                self.sock.close()
            except OSError:
                pass
        self.sock = None
        self.next_retry = time.monotonic() + self.backoff
        self.backoff = min(self.backoff * 2, self.max_backoff)
        log.warning("subscriber %s:%d disconnected", self.host, self.port)

    def _ensure(self) -> bool:
        if self.sock is not None:
            if not self._peer_closed():
                return True
            self._drop_connection()
        if time.monotonic() < self.next_retry:
            return False
        try:
            self.sock = self._connect()
        except OSError:
            self.sock = None
            self.next_retry = time.monotonic() + self.backoff
            self.backoff = min(self.backoff * 2, self.max_backoff)
            return False
        self.backoff = self.min_backoff
        self.reconnects += 1
        return True

    def publish(self, records) -> None:
        records = list(records)
        if not records:
            return
        if not self._ensure():
            self.dropped += len(records)
            return
        payload = "".join(encode_record(r) for r in records).encode()
        try:
            self.sock.sendall(payload)
            self.sent += len(records)
        except OSError:
            self.dropped += len(records)
            self._drop_connection()

    def close(self) -> None:
        if self.sock is not None:
            self.sock.close()
            self.sock = None


def open_sink(spec: str | None):
    """'stdout' (default) or 'tcp:HOST:PORT'."""
    if not spec or spec == "stdout":
        return StreamSink()
    if spec.startswith("tcp:"):
        host, _, port = spec[4:].rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad sink {spec!r}, expected tcp:HOST:PORT")
        return TcpSink(host, int(port))
    raise ValueError(f"unknown sink {spec!r}")
