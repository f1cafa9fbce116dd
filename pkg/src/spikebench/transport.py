"""Message passing between simulation processes.

Every communication round is a synchronous collective: first an
all-to-all exchange of per-peer record counters, then payload transfer
restricted to the pairs whose counter is nonzero.  An optional explicit
barrier lets the profiler attribute workload-fluctuation wait time
separately from the counts exchange.

Two interchangeable backends implement the same Transport interface:
an in-process reference backend (threads sharing a cluster object, used
by default and for assertions) and a TCP backend (one OS process per
simulation process, see tcp.py).  Both must deliver byte-identical
incoming maps for identical rounds.
"""

from __future__ import annotations

import threading
import time
from typing import Iterable, Mapping

import numpy as np


class TransportError(RuntimeError):
    pass


class ProtocolError(TransportError):
    """Counter/payload mismatch or roster disagreement between peers."""


class PeerTimeoutError(TransportError):
    def __init__(self, waiting_rank: int, missing: Iterable[int], what: str):
        missing = sorted(missing)
        super().__init__(
            f"process {waiting_rank} timed out in {what}; "
            f"no response from processes {missing}")
        self.missing = missing


# ---------------------------------------------------------------------------
# Wire formats (little-endian, fixed width; part of the backend-equivalence
# contract -- the TCP and in-process backends must move identical bytes).

SPIKE_DTYPE = np.dtype([("gid", "<u4"), ("time", "<u4")])
SYNAPSE_DTYPE = np.dtype([
    ("source_gid", "<u4"),
    ("target_gid", "<u4"),
    ("weight", "<f4"),
    ("delay", "u1"),
    ("kind", "u1"),
    ("pad", "<u2"),
])

SPIKE_RECORD_SIZE = SPIKE_DTYPE.itemsize      # 8
SYNAPSE_RECORD_SIZE = SYNAPSE_DTYPE.itemsize  # 16


def encode_spikes(gids: np.ndarray, emission_step: int) -> bytes:
    out = np.empty(len(gids), dtype=SPIKE_DTYPE)
    out["gid"] = gids
    out["time"] = emission_step
    return out.tobytes()


def decode_spikes(payload: bytes) -> tuple[np.ndarray, np.ndarray]:
    rec = np.frombuffer(payload, dtype=SPIKE_DTYPE)
    return rec["gid"].astype(np.int64), rec["time"].astype(np.int64)


def encode_synapses(source_gid: np.ndarray, target_gid: np.ndarray,
                    weight: np.ndarray, delay: np.ndarray,
                    excitatory_source: np.ndarray) -> bytes:
    out = np.empty(len(source_gid), dtype=SYNAPSE_DTYPE)
    out["source_gid"] = source_gid
    out["target_gid"] = target_gid
    out["weight"] = weight
    out["delay"] = delay
    out["kind"] = np.where(excitatory_source, 0, 1)
    out["pad"] = 0
    return out.tobytes()


def decode_synapses(payload: bytes) -> dict[str, np.ndarray]:
    rec = np.frombuffer(payload, dtype=SYNAPSE_DTYPE)
    return {
        "source_gid": rec["source_gid"].astype(np.int64),
        "target_gid": rec["target_gid"].astype(np.int64),
        "weight": rec["weight"].astype(np.float64),
        "delay": rec["delay"].astype(np.int64),
        "excitatory_source": rec["kind"] == 0,
    }


# ---------------------------------------------------------------------------


class Transport:
    """Per-process endpoint; all cross-process interaction flows through it."""

    rank: int
    size: int

    def alltoall_counts(self, outgoing: Mapping[int, int],
                        recv_from: Iterable[int]) -> dict[int, int]:
        """Announce one counter per peer; collect the counters aimed at us.

        Must be called once per round by every process; blocks until the
        round completes.
        """
        raise NotImplementedError

    def exchange_payloads(self, outgoing: Mapping[int, bytes],
                          expected: Mapping[int, int],
                          record_size: int) -> dict[int, bytes]:
        """Move payload bytes along pairs with nonzero counters only."""
        raise NotImplementedError

    def barrier(self) -> float:
        """Block until every process arrives; returns this process's wait."""
        raise NotImplementedError

    def close(self) -> None:
        pass


class _ClusterBarrier:
    """Reusable barrier that can name the processes that never arrived.

    Every crossing carries a tag; disagreeing tags mean the endpoints
    diverged from lockstep and are reported as a protocol error.
    """

    def __init__(self, size: int, timeout: float):
        self.size = size
        self.timeout = timeout
        self._cond = threading.Condition()
        self._arrived: set[int] = set()
        self._tag: str | None = None
        self._generation = 0
        self._aborted: str | None = None

    def abort(self, reason: str) -> None:
        """Wake every waiter with an error; used when one process failed."""
        with self._cond:
            self._aborted = reason
            self._cond.notify_all()

    def wait(self, rank: int, tag: str) -> None:
        with self._cond:
            if self._aborted:
                raise TransportError(f"round aborted: {self._aborted}")
            gen = self._generation
            if self._tag is None:
                self._tag = tag
            elif self._tag != tag:
                raise ProtocolError(
                    f"process {rank} entered {tag!r} while the cluster is "
                    f"synchronizing on {self._tag!r} (lockstep violation)")
            self._arrived.add(rank)
            if len(self._arrived) == self.size:
                self._arrived = set()
                self._tag = None
                self._generation += 1
                self._cond.notify_all()
                return
            deadline = time.monotonic() + self.timeout
            while self._generation == gen:
                if self._aborted:
                    raise TransportError(f"round aborted: {self._aborted}")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    missing = set(range(self.size)) - self._arrived
                    raise PeerTimeoutError(rank, missing, tag)
                self._cond.wait(remaining)


class InProcCluster:
    """Shared rendezvous state for H in-process endpoints.

    Collectives are globally ordered; every endpoint must issue the same
    sequence of rounds (lockstep).  With record_traffic=True the cluster
    logs announced counters and transferred payload sizes for assertions.
    """

    def __init__(self, size: int, timeout: float = 120.0,
                 record_traffic: bool = False):
        self.size = size
        self._barrier = _ClusterBarrier(size, timeout)
        self._lock = threading.Lock()
        self._slots: dict[tuple[int, int, int], object] = {}
        self.record_traffic = record_traffic
        self.traffic_log: list[tuple] = []

    def endpoint(self, rank: int) -> "InProcTransport":
        return InProcTransport(self, rank)

    def abort(self, reason: str) -> None:
        self._barrier.abort(reason)

    def post(self, round_no: int, src: int, dst: int, value) -> None:
        with self._lock:
            self._slots[(round_no, src, dst)] = value

    def take(self, round_no: int, src: int, dst: int):
        with self._lock:
            return self._slots.pop((round_no, src, dst), None)

    def log(self, entry: tuple) -> None:
        if self.record_traffic:
            with self._lock:
                self.traffic_log.append(entry)


class InProcTransport(Transport):
    """Reference backend endpoint: shared-memory rendezvous with asserts."""

    def __init__(self, cluster: InProcCluster, rank: int):
        self.cluster = cluster
        self.rank = rank
        self.size = cluster.size
        self._round = 0
        self._last_announced: dict[int, int] = {}

    def _next_round(self) -> int:
        self._round += 1
        return self._round

    def alltoall_counts(self, outgoing, recv_from) -> dict[int, int]:
        rno = self._next_round()
        for peer, count in outgoing.items():
            self.cluster.post(rno, self.rank, peer, int(count))
            self.cluster.log(("counts", rno, self.rank, peer, int(count)))
        self._last_announced = {p: int(c) for p, c in outgoing.items()}
        self.cluster._barrier.wait(self.rank, f"counts round {rno} (post)")
        incoming = {}
        for src in recv_from:
            value = self.cluster.take(rno, src, self.rank)
            if value is None:
                raise ProtocolError(
                    f"process {self.rank} expected a counter from process "
                    f"{src} in round {rno}, but none was announced "
                    f"(roster disagreement)")
            incoming[src] = value
        self.cluster._barrier.wait(self.rank, f"counts round {rno} (read)")
        return incoming

    def exchange_payloads(self, outgoing, expected, record_size) -> dict[int, bytes]:
        rno = self._next_round()
        for peer, payload in outgoing.items():
            if self._last_announced.get(peer, 0) == 0:
                raise ProtocolError(
                    f"process {self.rank} tried to send a payload to process "
                    f"{peer} on a zero-counter pair in round {rno}")
            self.cluster.post(rno, self.rank, peer, bytes(payload))
            self.cluster.log(("payload", rno, self.rank, peer, len(payload)))
        self.cluster._barrier.wait(self.rank, f"payload round {rno} (post)")
        incoming = {}
        for src, count in expected.items():
            if count == 0:
                continue
            payload = self.cluster.take(rno, src, self.rank)
            if payload is None:
                raise ProtocolError(
                    f"process {self.rank} expected {count} records from "
                    f"process {src} in round {rno} but received nothing")
            if len(payload) != count * record_size:
                raise ProtocolError(
                    f"payload size mismatch between processes {src} -> "
                    f"{self.rank} in round {rno}: announced {count} records "
                    f"({count * record_size} bytes), received {len(payload)} bytes")
            incoming[src] = payload
        self.cluster._barrier.wait(self.rank, f"payload round {rno} (read)")
        return incoming

    def barrier(self) -> float:
        rno = self._next_round()
        start = time.perf_counter()
        self.cluster._barrier.wait(self.rank, f"barrier round {rno}")
        return time.perf_counter() - start
