"""Per-process simulation state machine.

Each engine owns a contiguous block of neurons and every synapse that
targets them.  A simulation step runs, in order: event-driven
potentiation for last step's local spikes, the spike exchange rounds,
delay-queue insertion and the axon-to-synapse fan-out for arrivals
maturing now, current injection plus external stimulus, one neuron
integration step, and event-driven depression for the arrivals whose
target did not spike at this boundary.

Determinism across partitions rests on fixed accumulation orders:
incoming synapses are stored sorted by (source gid, delay, arrival
order of construction), matured arrivals are replayed in exactly that
order, and per-synapse plasticity updates are applied potentiation
first, depression second within a step.  Those orders are computable
locally on any process split, so the spiking output is bit-identical
for any process count.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

from .model import (
    FS_PARAMS,
    NEVER,
    RS_PARAMS,
    NumericDivergenceError,
    StdpConfig,
    apply_plasticity_array,
    step_population,
)
from .observables import BlockTimer
from .topology import (
    GridConfig,
    InitialWeights,
    ProcessMap,
    generate_block,
    thalamic_targets,
)
from .transport import (
    SPIKE_RECORD_SIZE,
    SYNAPSE_RECORD_SIZE,
    ProtocolError,
    Transport,
    decode_spikes,
    decode_synapses,
    encode_spikes,
    encode_synapses,
)


class SpikeRing:
    """Delay-indexed queue: entries pushed at arrival step, drained when due."""

    def __init__(self, delay_max: int):
        self.size = delay_max + 1
        self._slots: list[list] = [[] for _ in range(self.size)]

    def push(self, arrival: int, start: int, end: int) -> None:
        self._slots[arrival % self.size].append((arrival, start, end))

    def pop_due(self, step: int) -> list[tuple[int, int]]:
        slot = self._slots[step % self.size]
        self._slots[step % self.size] = []
        for arrival, _, _ in slot:
            if arrival != step:
                raise RuntimeError(
                    f"delay ring corrupted: entry due at {arrival} found in "
                    f"slot drained at step {step}")
        return [(start, end) for _, start, end in slot]


class SynapseStore:
    """All synapses incoming to one process, grouped for the fan-out.

    Arrays are sorted by (source gid, delay, construction order); the
    axon index maps a source gid to its contiguous (delay, start, end)
    runs, so one arriving axonal spike expands to index ranges.
    """

    def __init__(self, records: dict[str, np.ndarray], gid_lo: int, gid_hi: int,
                 delay_min: int, delay_max: int):
        src = np.asarray(records["source_gid"], dtype=np.int64)
        tgt = np.asarray(records["target_gid"], dtype=np.int64)
        if src.size and (tgt.min() < gid_lo or tgt.max() >= gid_hi):
            bad = tgt[(tgt < gid_lo) | (tgt >= gid_hi)][0]
            raise ProtocolError(
                f"received synapse targeting gid {bad}, outside the local "
                f"range [{gid_lo}, {gid_hi})")
        delay = np.asarray(records["delay"], dtype=np.int64)
        if src.size and (delay.min() < delay_min or delay.max() > delay_max):
            raise ProtocolError(
                f"received synapse delay outside [{delay_min}, {delay_max}]")

        order = np.lexsort((delay, src))  # stable: keeps construction order
        self.src = src[order]
        self.tgt_local = (tgt[order] - gid_lo).astype(np.int32)
        self.weight = np.asarray(records["weight"], dtype=np.float64)[order]
        self.delay = delay[order].astype(np.int16)
        self.plastic = np.asarray(records["excitatory_source"], dtype=bool)[order]
        self.acc = np.zeros(len(self.src), dtype=np.float64)
        self.last_arrival = np.full(len(self.src), NEVER, dtype=np.int64)

        self.axon_groups = self._build_axon_index()
        self.incoming_by_target = self._build_target_index(gid_hi - gid_lo)

    def __len__(self) -> int:
        return len(self.src)

    def _build_axon_index(self) -> dict[int, list[tuple[int, int, int]]]:
        groups: dict[int, list[tuple[int, int, int]]] = {}
        n = len(self.src)
        if n == 0:
            return groups
        # boundaries where (src, delay) changes
        change = np.flatnonzero(
            (np.diff(self.src) != 0) | (np.diff(self.delay) != 0))
        starts = np.concatenate(([0], change + 1))
        ends = np.concatenate((change + 1, [n]))
        for st, en in zip(starts.tolist(), ends.tolist()):
            groups.setdefault(int(self.src[st]), []).append(
                (int(self.delay[st]), st, en))
        return groups

    def _build_target_index(self, loc_n: int) -> list[np.ndarray]:
        order = np.argsort(self.tgt_local, kind="stable")
        bounds = np.searchsorted(self.tgt_local[order], np.arange(loc_n + 1))
        return [order[bounds[k]:bounds[k + 1]] for k in range(loc_n)]


class ProcessEngine:
    def __init__(self, rank: int, grid: GridConfig, pmap: ProcessMap, *,
                 stdp: StdpConfig | None = None,
                 weights: InitialWeights | None = None,
                 dt: float = 1.0,
                 thalamic_rate: int = 1,
                 thalamic_amplitude: float = 20.0,
                 barrier_enabled: bool = True,
                 trace_gids: Sequence[int] = (),
                 probe_gids: Sequence[int] = (),
                 record_injected: bool = False):
        self.rank = rank
        self.grid = grid
        self.pmap = pmap
        self.stdp = stdp or StdpConfig()
        self.weights = weights or InitialWeights()
        self.dt = dt
        self.thalamic_rate = thalamic_rate
        self.thalamic_amplitude = thalamic_amplitude
        self.barrier_enabled = barrier_enabled

        self.gid_lo, self.gid_hi = pmap.owned_range(rank)
        self.loc_n = pmap.loc_n
        npc = grid.neurons_per_column
        self.local_columns = range(self.gid_lo // npc,
                                   (self.gid_hi - 1) // npc + 1)

        gids = np.arange(self.gid_lo, self.gid_hi, dtype=np.int64)
        exc = (gids % npc) < grid.exc_per_column
        rs, fs = RS_PARAMS, FS_PARAMS
        self.par_a = np.where(exc, rs.a, fs.a)
        self.par_b = np.where(exc, rs.b, fs.b)
        self.par_c = np.where(exc, rs.c, fs.c)
        self.par_d = np.where(exc, rs.d, fs.d)
        self.v_peak = rs.v_peak
        self.v = self.par_c.copy()
        self.u = self.par_b * self.v
        self.last_spike = np.full(self.loc_n, NEVER, dtype=np.int64)
        self.current = np.zeros(self.loc_n, dtype=np.float64)

        self.clock = 0
        self.prev_spikes = np.empty(0, dtype=np.int64)  # global gids
        self.store: SynapseStore | None = None
        self.ring = SpikeRing(grid.delay_max)
        self.send_roster: list[int] = []
        self.recv_roster: list[int] = []
        self.target_procs_per_neuron: list[np.ndarray] = []
        self.construction_counters: np.ndarray | None = None
        self.construction_incoming: dict[int, int] = {}

        self.timers = BlockTimer()
        self.spike_steps: list[np.ndarray] = []
        self.spike_gids: list[np.ndarray] = []
        self.trace_local = [g - self.gid_lo for g in trace_gids
                            if self.gid_lo <= g < self.gid_hi]
        self.traces: dict[int, list[tuple[int, float]]] = {
            self.gid_lo + loc: [] for loc in self.trace_local}
        self.probe_local = {g - self.gid_lo: g for g in probe_gids
                            if self.gid_lo <= g < self.gid_hi}
        self.probe_currents: dict[int, list[tuple[int, float]]] = {
            g: [] for g in self.probe_local.values()}
        self.record_injected = record_injected
        self.injected_log: list[tuple[int, float, float]] = []

    # -- construction -----------------------------------------------------

    def construct_connectivity(self, transport: Transport) -> None:
        """Two-step build: counter all-to-all, then sparse synapse transfer."""
        grid, pmap = self.grid, self.pmap
        gids = np.arange(self.gid_lo, self.gid_hi, dtype=np.int64)
        fwd = generate_block(gids, grid, self.weights)
        tproc = fwd["target_gid"] // pmap.loc_n

        m = grid.synapses_per_neuron
        self.target_procs_per_neuron = [
            np.unique(tproc[i * m:(i + 1) * m]) for i in range(self.loc_n)]

        counters = np.bincount(tproc, minlength=pmap.process_count)
        self.construction_counters = counters
        outgoing = {q: int(counters[q]) for q in range(pmap.process_count)}
        incoming = transport.alltoall_counts(outgoing, range(pmap.process_count))
        self.construction_incoming = incoming

        self.send_roster = sorted(int(q) for q in np.flatnonzero(counters))
        self.recv_roster = sorted(q for q, c in incoming.items() if c > 0)

        payloads = {}
        for q in self.send_roster:
            mask = tproc == q  # preserves (gid, slot) generation order
            payloads[q] = encode_synapses(
                fwd["source_gid"][mask], fwd["target_gid"][mask],
                fwd["weight"][mask], fwd["delay"][mask],
                fwd["excitatory_source"][mask])
        received = transport.exchange_payloads(payloads, incoming,
                                               SYNAPSE_RECORD_SIZE)

        parts = [decode_synapses(received[q]) for q in sorted(received)]
        if parts:
            records = {k: np.concatenate([p[k] for p in parts])
                       for k in parts[0]}
        else:
            records = {k: np.empty(0) for k in
                       ("source_gid", "target_gid", "weight", "delay",
                        "excitatory_source")}
        self.store = SynapseStore(records, self.gid_lo, self.gid_hi,
                                  grid.delay_min, grid.delay_max)

    # -- simulation -------------------------------------------------------

    def pack_spikes(self, spiking_gids: Iterable[int],
                    emission_step: int) -> dict[int, np.ndarray]:
        """Group spiking gids by target process; gid-sorted per packet."""
        packets: dict[int, list[int]] = {}
        for g in spiking_gids:
            for q in self.target_procs_per_neuron[g - self.gid_lo]:
                packets.setdefault(int(q), []).append(int(g))
        return {q: np.asarray(v, dtype=np.int64) for q, v in packets.items()}

    @contextmanager
    def _block(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timers.add(name, time.perf_counter() - start)

    def _ltp(self, lag_steps: np.ndarray) -> np.ndarray:
        """Potentiation branch of the pairing rule (lag >= 0, in steps)."""
        return self.stdp.a_plus * np.exp(-(lag_steps * self.dt) / self.stdp.tau_plus)

    def _ltd(self, lag_steps: np.ndarray) -> np.ndarray:
        """Depression branch of the pairing rule (lag > 0, in steps)."""
        return self.stdp.a_minus * np.exp(-(lag_steps * self.dt) / self.stdp.tau_minus)

    def simulate_step(self, transport: Transport) -> None:
        if self.store is None:
            raise RuntimeError("construct_connectivity must run before stepping")
        store = self.store
        now = self.clock + 1

        # 2.1 -- potentiate incoming synapses of last step's local spikes,
        # pairing each with its most recent presynaptic arrival.
        with self._block("ltp_and_post_spike"):
            if len(self.prev_spikes):
                parts = [store.incoming_by_target[g - self.gid_lo]
                         for g in self.prev_spikes]
                idx = np.concatenate(parts) if parts else None
                if idx is not None and idx.size:
                    la = store.last_arrival[idx]
                    sel = idx[(la != NEVER) & store.plastic[idx]]
                    if sel.size:
                        lag = self.clock - store.last_arrival[sel]
                        store.acc[sel] += self._ltp(lag)

        if self.barrier_enabled:
            with self._block("barrier"):
                transport.barrier()

        # 2.2 -- announce and deliver last step's spikes per target process.
        with self._block("spikes_dim"):
            packets = self.pack_spikes(self.prev_spikes, self.clock)
            outgoing_counts = {q: len(packets.get(q, ())) for q in self.send_roster}
            incoming_counts = transport.alltoall_counts(outgoing_counts,
                                                        self.recv_roster)
        with self._block("spikes_payload"):
            out_payloads = {q: encode_spikes(g, self.clock)
                            for q, g in packets.items() if len(g)}
            payloads = transport.exchange_payloads(out_payloads, incoming_counts,
                                                   SPIKE_RECORD_SIZE)

        # 2.3 + 2.4 -- queue arrivals per synaptic delay; drain the ones
        # maturing at this step into store index ranges.
        with self._block("intra_multicast"):
            for q in sorted(payloads):
                gids, emissions = decode_spikes(payloads[q])
                for s, e in zip(gids.tolist(), emissions.tolist()):
                    runs = store.axon_groups.get(s)
                    if runs is None:
                        raise ProtocolError(
                            f"process {self.rank} received a spike from gid "
                            f"{s} (process {q}) but holds no synapse of it")
                    for d, st, en in runs:
                        self.ring.push(e + d, st, en)
            ranges = self.ring.pop_due(now)
            if ranges:
                matured = np.concatenate(
                    [np.arange(st, en) for st, en in ranges])
                matured.sort()  # canonical (source, delay, build) order
            else:
                matured = np.empty(0, dtype=np.int64)

        # 2.5 -- inject arriving weights, then the external stimulus.
        with self._block("currents_and_ltd"):
            self.current[:] = 0.0
            if matured.size:
                np.add.at(self.current, store.tgt_local[matured],
                          store.weight[matured])
                store.last_arrival[matured] = now
        thal_injected = 0.0
        with self._block("thalamic"):
            if self.thalamic_rate > 0:
                npc = self.grid.neurons_per_column
                for col in self.local_columns:
                    tg = thalamic_targets(col, now, self.grid, self.thalamic_rate)
                    tg = tg[(tg >= self.gid_lo) & (tg < self.gid_hi)]
                    if tg.size:
                        np.add.at(self.current, tg - self.gid_lo,
                                  self.thalamic_amplitude)
                        thal_injected += self.thalamic_amplitude * tg.size

        if self.record_injected:
            syn_injected = float(store.weight[matured].sum()) if matured.size else 0.0
            self.injected_log.append((now, syn_injected, thal_injected))
        for loc, g in self.probe_local.items():
            self.probe_currents[g].append((now, float(self.current[loc])))

        # 2.7 -- one integration step for every local neuron.
        with self._block("neural_dynamic"):
            spiked = step_population(self.v, self.u, self.par_a, self.par_b,
                                     self.par_c, self.par_d, self.v_peak,
                                     self.current, self.dt)
            if not np.isfinite(self.v).all():
                bad = int(np.flatnonzero(~np.isfinite(self.v))[0])
                raise NumericDivergenceError(self.gid_lo + bad, now)
            spiked_loc = np.flatnonzero(spiked)
            self.last_spike[spiked_loc] = now

        # 2.6 -- depress the synapses that injected current into targets
        # that did not spike at this boundary (pairing with the target's
        # most recent past spike).  Committed after the neuron step so a
        # same-step target spike yields potentiation only.
        with self._block("currents_and_ltd"):
            if matured.size:
                cand = matured[store.plastic[matured]]
                if cand.size:
                    tl = store.tgt_local[cand]
                    m = (~spiked[tl]) & (self.last_spike[tl] != NEVER)
                    sel = cand[m]
                    if sel.size:
                        lag = now - self.last_spike[store.tgt_local[sel]]
                        store.acc[sel] += self._ltd(lag)

        with self._block("stats"):
            if spiked_loc.size:
                self.spike_steps.append(np.full(spiked_loc.size, now,
                                                dtype=np.int64))
                self.spike_gids.append(spiked_loc.astype(np.int64) + self.gid_lo)
            for loc in self.trace_local:
                self.traces[self.gid_lo + loc].append((now, float(self.v[loc])))

        self.prev_spikes = spiked_loc.astype(np.int64) + self.gid_lo
        self.clock = now

    def run_plasticity_epoch(self) -> None:
        """Fold accumulated deltas into the plastic weights and reset them."""
        store = self.store
        with self._block("plasticity"):
            apply_plasticity_array(store.weight, store.acc, store.plastic,
                                   self.stdp)

    def plasticity_due(self) -> bool:
        steps = max(1, round(self.stdp.apply_interval / self.dt))
        return self.clock > 0 and self.clock % steps == 0

    def collected_spikes(self) -> tuple[np.ndarray, np.ndarray]:
        if self.spike_steps:
            return np.concatenate(self.spike_steps), np.concatenate(self.spike_gids)
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
