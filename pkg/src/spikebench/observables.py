"""Everything measured: spike records, membrane traces, firing rates,
per-block wall-clock profiling, and scaling metrics.

Output formats are fixed so determinism checks reduce to byte
comparison: the rastergram is a sorted TSV of (time, gid) pairs, the
profile and scaling tables are plain CSV.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RASTER_HEADER = "# spikebench rastergram v1"
POTENTIALS_HEADER = "# spikebench potentials v1"

# Profiled phases of one simulation step, in loop order.
BLOCKS = (
    "ltp_and_post_spike",
    "barrier",
    "spikes_dim",
    "spikes_payload",
    "intra_multicast",
    "currents_and_ltd",
    "thalamic",
    "neural_dynamic",
    "stats",
    "plasticity",
)


class BlockTimer:
    """Per-process accumulated wall-clock per named loop block."""

    def __init__(self):
        self.seconds: dict[str, float] = {b: 0.0 for b in BLOCKS}

    def add(self, block: str, seconds: float) -> None:
        self.seconds[block] += seconds

    def reset(self) -> None:
        for b in self.seconds:
            self.seconds[b] = 0.0

    def total(self) -> float:
        return sum(self.seconds.values())

    def shares(self) -> dict[str, float]:
        """Per-block percentage of this process's accumulated loop time."""
        total = self.total()
        if total == 0.0:
            return {b: 0.0 for b in BLOCKS}
        return {b: 100.0 * s / total for b, s in self.seconds.items()}


def format_time_ms(step: int, dt: float) -> str:
    """Render a step index as milliseconds, exact for integral values."""
    t = step * dt
    if t == int(t):
        return str(int(t))
    return repr(t)


def mean_firing_rate(spike_count: int, neuron_count: int,
                     simulated_seconds: float) -> float:
    """Spikes per neuron per second (Hz)."""
    if simulated_seconds <= 0:
        raise ValueError("simulated_seconds must be positive")
    return spike_count / (neuron_count * simulated_seconds)


@dataclass
class RunMetrics:
    firing_rate_hz: float
    exec_seconds_per_sim_second: float
    normalized_exec_time: float  # s / (synapse * Hz * simulated s)
    total_synapses: int
    total_neurons: int
    simulated_seconds: float
    measure_wall_seconds: float
    per_process_spikes: list[int] = field(default_factory=list)

    @classmethod
    def compute(cls, *, window_spikes: int, per_process_spikes: list[int],
                total_neurons: int, total_synapses: int,
                simulated_seconds: float, wall_seconds: float) -> "RunMetrics":
        rate = mean_firing_rate(window_spikes, total_neurons, simulated_seconds)
        exec_per_sim = wall_seconds / simulated_seconds
        if rate > 0:
            normalized = wall_seconds / (rate * total_synapses * simulated_seconds)
        else:
            normalized = float("inf")
        return cls(
            firing_rate_hz=rate,
            exec_seconds_per_sim_second=exec_per_sim,
            normalized_exec_time=normalized,
            total_synapses=total_synapses,
            total_neurons=total_neurons,
            simulated_seconds=simulated_seconds,
            measure_wall_seconds=wall_seconds,
            per_process_spikes=per_process_spikes,
        )

    def summary_row(self, grid_label: str, processes: int) -> str:
        return (
            f"grid={grid_label} neurons={self.total_neurons} "
            f"synapses={self.total_synapses} processes={processes} "
            f"rate_hz={self.firing_rate_hz:.3f} "
            f"exec_s_per_sim_s={self.exec_seconds_per_sim_second:.4f} "
            f"normalized={self.normalized_exec_time:.3e}"
        )


def write_raster(path: str | Path, steps: np.ndarray, gids: np.ndarray,
                 dt: float) -> None:
    """Write the merged (time, gid)-sorted spike record."""
    order = np.lexsort((gids, steps))
    lines = [RASTER_HEADER]
    lines.extend(
        f"{format_time_ms(int(s), dt)}\t{int(g)}"
        for s, g in zip(steps[order], gids[order]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_raster(path: str | Path) -> list[tuple[str, int]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or not line:
            continue
        t, g = line.split("\t")
        rows.append((t, int(g)))
    return rows


def write_potentials(path: str | Path,
                     traces: dict[int, list[tuple[int, float]]],
                     dt: float) -> None:
    rows = []
    for gid in sorted(traces):
        for step, v in traces[gid]:
            rows.append((step, gid, v))
    rows.sort()
    lines = [POTENTIALS_HEADER]
    lines.extend(f"{format_time_ms(s, dt)}\t{g}\t{v!r}" for s, g, v in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def profile_report(timers: Sequence[BlockTimer]) -> list[tuple[str, float, float]]:
    """Per-block share of loop time: (block, mean %, stddev %) over processes."""
    rows = []
    shares = [t.shares() for t in timers]
    for b in BLOCKS:
        vals = [s[b] for s in shares]
        mean = statistics.fmean(vals)
        std = statistics.pstdev(vals) if len(vals) > 1 else 0.0
        rows.append((b, mean, std))
    return rows


def write_profile_csv(path: str | Path, timers: Sequence[BlockTimer]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block", "mean_pct", "std_pct"])
        for block, mean, std in profile_report(timers):
            writer.writerow([block, f"{mean:.4f}", f"{std:.4f}"])


@dataclass
class ScalingPoint:
    label: str
    grid_label: str
    contexts: int
    neurons: int
    synapses: int
    metrics: RunMetrics | None  # None if the point failed
    error: str = ""


def scaling_table(points: Sequence[ScalingPoint]) -> list[dict]:
    """Rows with both normalizations: per total synapse and per context.

    The speedup column is wall time of the first completed point over
    this point's wall time.
    """
    rows = []
    base_wall = None
    for p in points:
        if p.metrics is None:
            rows.append({
                "label": p.label, "grid": p.grid_label, "contexts": p.contexts,
                "neurons": p.neurons, "synapses": p.synapses,
                "rate_hz": "", "wall_s": "", "exec_s_per_sim_s": "",
                "normalized_total": "", "normalized_per_context": "",
                "speedup": "", "status": f"failed: {p.error}",
            })
            continue
        m = p.metrics
        if base_wall is None:
            base_wall = m.measure_wall_seconds
        per_ctx_syn = p.synapses / p.contexts
        if m.firing_rate_hz > 0:
            norm_ctx = m.measure_wall_seconds / (
                m.firing_rate_hz * per_ctx_syn * m.simulated_seconds)
        else:
            norm_ctx = float("inf")
        rows.append({
            "label": p.label, "grid": p.grid_label, "contexts": p.contexts,
            "neurons": p.neurons, "synapses": p.synapses,
            "rate_hz": f"{m.firing_rate_hz:.4f}",
            "wall_s": f"{m.measure_wall_seconds:.4f}",
            "exec_s_per_sim_s": f"{m.exec_seconds_per_sim_second:.4f}",
            "normalized_total": f"{m.normalized_exec_time:.6e}",
            "normalized_per_context": f"{norm_ctx:.6e}",
            "speedup": f"{base_wall / m.measure_wall_seconds:.3f}",
            "status": "ok",
        })
    return rows


def write_scaling_csv(path: str | Path, points: Sequence[ScalingPoint]) -> None:
    rows = scaling_table(points)
    fields = ["label", "grid", "contexts", "neurons", "synapses", "rate_hz",
              "wall_s", "exec_s_per_sim_s", "normalized_total",
              "normalized_per_context", "speedup", "status"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def write_weight_histogram(path: str | Path, weights: np.ndarray,
                           plastic: np.ndarray, w_min: float, w_max: float,
                           bins: int = 20) -> None:
    """End-of-run summary of the plastic weight distribution."""
    counts, edges = np.histogram(weights[plastic], bins=bins,
                                 range=(w_min, w_max))
    fixed = int((~plastic).sum())
    lines = ["# spikebench weight histogram v1", f"# fixed_synapses\t{fixed}"]
    lines.extend(f"{lo!r}\t{hi!r}\t{int(c)}"
                 for lo, hi, c in zip(edges[:-1], edges[1:], counts))
    Path(path).write_text("\n".join(lines) + "\n")
