"""Run orchestration: spawn the simulation processes over the chosen
backend, drive construction / warmup / measurement, merge per-process
outputs, and implement the verify and sweep modes.

The in-process backend runs H engines on H threads sharing a rendezvous
cluster; the TCP backend spawns one worker OS process per rank (see
worker.py) and merges their part files.  Both paths share the same
per-rank loop, so their outputs are byte-identical.
"""

from __future__ import annotations

import json
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config
from .engine import ProcessEngine
from .observables import (
    BlockTimer,
    RunMetrics,
    ScalingPoint,
    write_potentials,
    write_profile_csv,
    write_raster,
    write_scaling_csv,
    write_weight_histogram,
)
from .topology import ConfigError
from .transport import InProcCluster, Transport
from .tcp import TcpTransport, allocate_local_roster, parse_roster, write_roster

_HIST_BINS = 20


@dataclass
class RankResult:
    rank: int
    spike_steps: np.ndarray
    spike_gids: np.ndarray
    window_spikes: int
    measure_wall: float
    timers: BlockTimer
    traces: dict[int, list[tuple[int, float]]]
    hist_counts: np.ndarray
    fixed_synapses: int


@dataclass
class RunResult:
    config: RunConfig
    metrics: RunMetrics
    out_dir: Path
    raster_path: Path
    profile_path: Path

    @property
    def raster_bytes(self) -> bytes:
        return self.raster_path.read_bytes()


def process_main(rank: int, cfg: RunConfig, transport: Transport) -> RankResult:
    """The life of one simulation process: construct, warm up, measure."""
    grid = cfg.grid()
    pmap = cfg.process_map()
    engine = ProcessEngine(
        rank, grid, pmap,
        stdp=cfg.stdp(),
        weights=cfg.initial_weights(),
        dt=cfg.dt_ms,
        thalamic_rate=cfg.thalamic_rate,
        thalamic_amplitude=cfg.thalamic_amplitude,
        barrier_enabled=cfg.barrier_enabled,
        trace_gids=cfg.trace_gids,
    )
    engine.construct_connectivity(transport)

    warm = cfg.warmup_steps()
    meas = cfg.measure_steps()
    for _ in range(warm):
        engine.simulate_step(transport)
        if engine.plasticity_due():
            engine.run_plasticity_epoch()
    engine.timers.reset()

    t0 = time.perf_counter()
    for _ in range(meas):
        engine.simulate_step(transport)
        if engine.plasticity_due():
            engine.run_plasticity_epoch()
    wall = time.perf_counter() - t0

    steps, gids = engine.collected_spikes()
    in_window = (steps > warm) & (steps <= warm + meas)
    store = engine.store
    hist, _ = np.histogram(store.weight[store.plastic], bins=_HIST_BINS,
                           range=(cfg.weight_min, cfg.weight_max))
    return RankResult(
        rank=rank,
        spike_steps=steps,
        spike_gids=gids,
        window_spikes=int(in_window.sum()),
        measure_wall=wall,
        timers=engine.timers,
        traces=engine.traces,
        hist_counts=hist,
        fixed_synapses=int((~store.plastic).sum()),
    )


def _merge_and_write(cfg: RunConfig, results: list[RankResult]) -> RunResult:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.resolved")

    steps = np.concatenate([r.spike_steps for r in results])
    gids = np.concatenate([r.spike_gids for r in results])
    raster_path = out / "raster.tsv"
    write_raster(raster_path, steps, gids, cfg.dt_ms)

    if cfg.trace_gids:
        traces: dict[int, list[tuple[int, float]]] = {}
        for r in results:
            traces.update(r.traces)
        write_potentials(out / "potentials.tsv", traces, cfg.dt_ms)

    profile_path = out / "profile.csv"
    write_profile_csv(profile_path, [r.timers for r in results])

    grid = cfg.grid()
    edges = np.linspace(cfg.weight_min, cfg.weight_max, _HIST_BINS + 1)
    hist = np.sum([r.hist_counts for r in results], axis=0)
    _write_merged_histogram(out / "weights.tsv", edges, hist,
                            sum(r.fixed_synapses for r in results))

    metrics = RunMetrics.compute(
        window_spikes=sum(r.window_spikes for r in results),
        per_process_spikes=[r.window_spikes for r in results],
        total_neurons=grid.total_neurons,
        total_synapses=grid.total_neurons * grid.synapses_per_neuron,
        simulated_seconds=cfg.measure_seconds,
        wall_seconds=max(r.measure_wall for r in results),
    )
    (out / "metrics.txt").write_text(
        metrics.summary_row(cfg.grid_label(), cfg.processes) + "\n")
    return RunResult(config=cfg, metrics=metrics, out_dir=out,
                     raster_path=raster_path, profile_path=profile_path)


def _write_merged_histogram(path, edges, counts, fixed):
    lines = ["# spikebench weight histogram v1", f"# fixed_synapses\t{fixed}"]
    lines.extend(f"{lo!r}\t{hi!r}\t{int(c)}"
                 for lo, hi, c in zip(edges[:-1], edges[1:], counts))
    Path(path).write_text("\n".join(lines) + "\n")


# -- in-process backend -----------------------------------------------------


def _run_inproc(cfg: RunConfig, record_traffic: bool = False
                ) -> tuple[list[RankResult], InProcCluster]:
    h = cfg.processes
    cluster = InProcCluster(h, record_traffic=record_traffic)
    results: list[RankResult | None] = [None] * h
    errors: list[tuple[int, BaseException]] = []

    def body(rank: int):
        try:
            results[rank] = process_main(rank, cfg, cluster.endpoint(rank))
        except BaseException as exc:
            errors.append((rank, exc))
            cluster.abort(f"process {rank} failed: {exc}")

    threads = [threading.Thread(target=body, args=(r,), name=f"sim-{r}")
               for r in range(h)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        errors.sort(key=lambda e: e[0])
        # secondary failures are abort echoes; surface the original
        raise errors[0][1]
    return [r for r in results if r is not None], cluster


# -- tcp backend --------------------------------------------------------------


def _run_tcp(cfg: RunConfig) -> list[RankResult]:
    out = Path(cfg.out_dir)
    parts = out / "parts"
    parts.mkdir(parents=True, exist_ok=True)

    if cfg.roster:
        roster = parse_roster(cfg.roster)
        if len(roster) != cfg.processes:
            raise ConfigError(
                f"roster lists {len(roster)} processes, expected {cfg.processes}")
        roster_path = Path(cfg.roster)
    else:
        roster = allocate_local_roster(cfg.processes)
        roster_path = parts / "roster.txt"
        write_roster(roster_path, roster)

    cfg_path = parts / "worker_config.txt"
    dump_config(replace(cfg, roster=str(roster_path)), cfg_path)

    procs = []
    for rank in range(cfg.processes):
        procs.append(subprocess.Popen(
            [sys.executable, "-m", "spikebench.worker",
             "--rank", str(rank), "--config", str(cfg_path),
             "--out", str(parts)],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True))
    failures = []
    for rank, p in enumerate(procs):
        _, err = p.communicate()
        if p.returncode != 0:
            failures.append((rank, err.strip().splitlines()[-8:]))
    if failures:
        rank, tail = failures[0]
        raise RuntimeError(
            f"tcp worker {rank} failed:\n" + "\n".join(tail))

    results = []
    for rank in range(cfg.processes):
        results.append(load_rank_result(parts, rank))
    return results


def dump_rank_result(parts: Path, result: RankResult) -> None:
    np.savez(parts / f"part_{result.rank}.npz",
             spike_steps=result.spike_steps,
             spike_gids=result.spike_gids,
             hist_counts=result.hist_counts)
    meta = {
        "rank": result.rank,
        "window_spikes": result.window_spikes,
        "measure_wall": result.measure_wall,
        "timers": result.timers.seconds,
        "fixed_synapses": result.fixed_synapses,
        "traces": {str(g): rows for g, rows in result.traces.items()},
    }
    (parts / f"part_{result.rank}.json").write_text(json.dumps(meta))


def load_rank_result(parts: Path, rank: int) -> RankResult:
    arrays = np.load(parts / f"part_{rank}.npz")
    meta = json.loads((parts / f"part_{rank}.json").read_text())
    timers = BlockTimer()
    for block, seconds in meta["timers"].items():
        timers.add(block, seconds)
    traces = {int(g): [(int(s), float(v)) for s, v in rows]
              for g, rows in meta["traces"].items()}
    return RankResult(
        rank=rank,
        spike_steps=arrays["spike_steps"],
        spike_gids=arrays["spike_gids"],
        window_spikes=meta["window_spikes"],
        measure_wall=meta["measure_wall"],
        timers=timers,
        traces=traces,
        hist_counts=arrays["hist_counts"],
        fixed_synapses=meta["fixed_synapses"],
    )


# -- public operations --------------------------------------------------------


def run(cfg: RunConfig) -> RunResult:
    """Construction, warmup, measured window; writes all output files."""
    cfg.validate()
    if cfg.backend == "tcp":
        results = _run_tcp(cfg)
    else:
        results, _ = _run_inproc(cfg)
    return _merge_and_write(cfg, results)


@dataclass
class VerifyReport:
    passed: bool
    process_counts: list[int]
    divergence: str = ""

    def __str__(self) -> str:
        if self.passed:
            return (f"PASS: rastergrams byte-identical across "
                    f"H={self.process_counts}")
        return f"FAIL: {self.divergence}"


def verify(cfg: RunConfig, process_counts: list[int]) -> VerifyReport:
    """Run the same network split different ways; byte-compare rasters."""
    if len(process_counts) < 2:
        raise ConfigError("verify needs at least two process counts")
    base_out = Path(cfg.out_dir)
    reference: tuple[int, bytes] | None = None
    for h in process_counts:
        sub = replace(cfg, processes=h, out_dir=str(base_out / f"verify_H{h}"))
        result = run(sub)
        blob = result.raster_bytes
        if reference is None:
            reference = (h, blob)
        elif blob != reference[1]:
            where = _first_divergence(reference[1], blob)
            return VerifyReport(
                passed=False, process_counts=process_counts,
                divergence=(f"H={reference[0]} vs H={h}: first divergence at "
                            f"{where}"))
    return VerifyReport(passed=True, process_counts=process_counts)


def _first_divergence(a: bytes, b: bytes) -> str:
    la = a.decode().splitlines()
    lb = b.decode().splitlines()
    for i, (ra, rb) in enumerate(zip(la, lb)):
        if ra != rb:
            return f"line {i + 1}: {ra!r} vs {rb!r} (time_ms\\tgid)"
    return (f"line {min(len(la), len(lb)) + 1}: "
            f"record counts differ ({len(la)} vs {len(lb)})")


def sweep(cfg: RunConfig, axis: str, points: list[int]) -> list[ScalingPoint]:
    """Strong: fixed grid, varying contexts.  Weak: fixed columns per
    context, growing grid.  Failed points are recorded and the sweep
    continues."""
    if axis not in ("strong", "weak"):
        raise ConfigError(f"sweep axis must be strong or weak, got {axis!r}")
    base_out = Path(cfg.out_dir)
    rows: list[ScalingPoint] = []
    for h in points:
        if axis == "strong":
            sub = replace(cfg, processes=h,
                          out_dir=str(base_out / f"strong_H{h}"))
        else:
            sub = replace(cfg, processes=h, cfx=cfg.cfx * h,
                          out_dir=str(base_out / f"weak_H{h}"))
        grid = sub.grid()
        label = f"{axis}_H{h}"
        try:
            sub.validate()
            result = run(sub)
            rows.append(ScalingPoint(
                label=label, grid_label=sub.grid_label(), contexts=h,
                neurons=grid.total_neurons,
                synapses=grid.total_neurons * grid.synapses_per_neuron,
                metrics=result.metrics))
        except Exception as exc:
            rows.append(ScalingPoint(
                label=label, grid_label=sub.grid_label(), contexts=h,
                neurons=grid.total_neurons,
                synapses=grid.total_neurons * grid.synapses_per_neuron,
                metrics=None, error=str(exc)))
    base_out.mkdir(parents=True, exist_ok=True)
    write_scaling_csv(base_out / "scaling.csv", rows)
    return rows
