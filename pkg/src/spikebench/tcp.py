"""TCP backend: one OS process per simulation process.

Each round is framed by a (round number, value) header; counts and
barrier tokens are header-only, payload frames carry the announced
number of bytes.  One long-lived connection per ordered pair: the
connecting side is the sender.  There is no retransmission or
fault-tolerance logic -- a dead or silent peer aborts the run with an
error naming it.

Roster file format: one `rank host:port` line per process.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from collections import deque
from pathlib import Path

from .transport import PeerTimeoutError, ProtocolError, Transport, TransportError

_HEADER = struct.Struct("<QQ")
_HELLO = struct.Struct("<Q")

_CONNECT_RETRY_S = 0.05


def parse_roster(path: str | Path) -> dict[int, tuple[str, int]]:
    roster: dict[int, tuple[str, int]] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rank_s, addr = line.split()
        host, port_s = addr.rsplit(":", 1)
        roster[int(rank_s)] = (host, int(port_s))
    return roster


def write_roster(path: str | Path, roster: dict[int, tuple[str, int]]) -> None:
    lines = [f"{rank} {host}:{port}" for rank, (host, port) in sorted(roster.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def allocate_local_roster(size: int) -> dict[int, tuple[str, int]]:
    """Reserve one loopback port per rank by binding and releasing."""
    roster = {}
    socks = []
    for rank in range(size):
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.bind(("127.0.0.1", 0))
        socks.append(s)
        roster[rank] = ("127.0.0.1", s.getsockname()[1])
    for s in socks:
        s.close()
    return roster


def _recv_exact(sock: socket.socket, n: int, peer: int, rank: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        try:
            chunk = sock.recv(min(n - got, 1 << 20))
        except socket.timeout:
            raise PeerTimeoutError(rank, [peer], "tcp receive") from None
        if not chunk:
            raise TransportError(
                f"process {rank}: connection from process {peer} closed mid-round")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


class TcpTransport(Transport):
    def __init__(self, rank: int, roster: dict[int, tuple[str, int]],
                 timeout: float = 120.0, connect_timeout: float = 30.0):
        self.rank = rank
        self.size = len(roster)
        self.timeout = timeout
        self._roster = roster
        self._round = 0
        self._last_announced: dict[int, int] = {}
        self._loopback: deque = deque()

        host, port = roster[rank]
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(self.size)

        self._inbound: dict[int, socket.socket] = {}
        self._inbound_ready = threading.Event()
        self._accept_error: Exception | None = None
        accepter = threading.Thread(target=self._accept_loop, daemon=True)
        accepter.start()

        self._outbound: dict[int, socket.socket] = {}
        deadline = time.monotonic() + connect_timeout
        for peer in sorted(roster):
            if peer == rank:
                continue
            self._outbound[peer] = self._connect(peer, deadline)

        if not self._inbound_ready.wait(connect_timeout):
            missing = set(roster) - {rank} - set(self._inbound)
            raise PeerTimeoutError(rank, missing, "tcp mesh setup")
        if self._accept_error is not None:
            raise self._accept_error

    def _connect(self, peer: int, deadline: float) -> socket.socket:
        host, port = self._roster[peer]
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=2.0)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise PeerTimeoutError(self.rank, [peer], "tcp connect") from None
                time.sleep(_CONNECT_RETRY_S)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(self.timeout)
        sock.sendall(_HELLO.pack(self.rank))
        return sock

    def _accept_loop(self) -> None:
        try:
            expected = self.size - 1
            while len(self._inbound) < expected:
                sock, _ = self._listener.accept()
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                sock.settimeout(self.timeout)
                peer = _HELLO.unpack(_recv_exact(sock, _HELLO.size, -1, self.rank))[0]
                self._inbound[peer] = sock
            self._inbound_ready.set()
        except Exception as exc:  # surfaced by __init__
            self._accept_error = exc
            self._inbound_ready.set()

    def _next_round(self) -> int:
        self._round += 1
        return self._round

    # -- framing ----------------------------------------------------------

    def _send_frame(self, peer: int, round_no: int, value: int,
                    body: bytes = b"") -> None:
        if peer == self.rank:
            self._loopback.append((round_no, value, body))
        else:
            self._outbound[peer].sendall(_HEADER.pack(round_no, value) + body)

    def _recv_header(self, peer: int, round_no: int, what: str) -> int:
        if peer == self.rank:
            rno, value, body = self._loopback[0]
            if not body:
                self._loopback.popleft()  # body-less frame consumed here
        else:
            rno, value = _HEADER.unpack(
                _recv_exact(self._inbound[peer], _HEADER.size, peer, self.rank))
        if rno != round_no:
            raise ProtocolError(
                f"process {self.rank} expected round {round_no} from process "
                f"{peer} during {what}, got round {rno} (lockstep violation)")
        return value

    def _recv_body(self, peer: int, nbytes: int) -> bytes:
        if peer == self.rank:
            _, _, body = self._loopback.popleft()
            return body
        return _recv_exact(self._inbound[peer], nbytes, peer, self.rank)

    # -- collectives -------------------------------------------------------

    def alltoall_counts(self, outgoing, recv_from) -> dict[int, int]:
        rno = self._next_round()
        self._last_announced = {p: int(c) for p, c in outgoing.items()}
        for peer in sorted(outgoing):
            self._send_frame(peer, rno, int(outgoing[peer]))
        incoming = {}
        for src in sorted(recv_from):
            incoming[src] = self._recv_header(src, rno, "counts exchange")
        return incoming

    def exchange_payloads(self, outgoing, expected, record_size) -> dict[int, bytes]:
        rno = self._next_round()
        for peer in outgoing:
            if self._last_announced.get(peer, 0) == 0:
                raise ProtocolError(
                    f"process {self.rank} tried to send a payload to process "
                    f"{peer} on a zero-counter pair in round {rno}")

        # Self-delivery first (never blocks); the sender thread handles the
        # remote peers concurrently with our receives so large symmetric
        # payloads cannot deadlock on full socket buffers.
        if self.rank in outgoing:
            body = bytes(outgoing[self.rank])
            self._send_frame(self.rank, rno, len(body), body)
        send_error: list[Exception] = []

        def send_all():
            try:
                for peer in sorted(outgoing):
                    if peer == self.rank:
                        continue
                    self._send_frame(peer, rno, len(outgoing[peer]), bytes(outgoing[peer]))
            except Exception as exc:
                send_error.append(exc)

        sender = threading.Thread(target=send_all)
        sender.start()
        incoming = {}
        try:
            for src in sorted(expected):
                count = expected[src]
                if count == 0:
                    continue
                nbytes = self._recv_header(src, rno, "payload exchange")
                payload = self._recv_body(src, nbytes)
                if nbytes != count * record_size:
                    raise ProtocolError(
                        f"payload size mismatch between processes {src} -> "
                        f"{self.rank} in round {rno}: announced {count} records "
                        f"({count * record_size} bytes), received {nbytes} bytes")
                incoming[src] = payload
        finally:
            sender.join()
        if send_error:
            raise send_error[0]
        return incoming

    def barrier(self) -> float:
        rno = self._next_round()
        start = time.perf_counter()
        for peer in range(self.size):
            if peer != self.rank:
                self._send_frame(peer, rno, 0)
        for peer in range(self.size):
            if peer != self.rank:
                self._recv_header(peer, rno, "barrier")
        return time.perf_counter() - start

    def close(self) -> None:
        for sock in [*self._outbound.values(), *self._inbound.values(), self._listener]:
            try:
                sock.close()
            except OSError:
                pass
