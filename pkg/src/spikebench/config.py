"""Run configuration: a flat key = value file plus CLI overrides.

Every default lives here; the resolved configuration is echoed into the
output directory so any benchmark run can be reproduced from its own
artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .model import StdpConfig
from .topology import ConfigError, GridConfig, InitialWeights, ProcessMap

BACKENDS = ("inproc", "tcp")


@dataclass
class RunConfig:
    cfx: int = 1
    cfy: int = 1
    neurons_per_column: int = 1000
    excitatory_fraction: float = 0.8
    synapses_per_neuron: int = 200
    fraction_same: float = 0.76
    fraction_first: float = 0.03
    fraction_second: float = 0.02
    fraction_third: float = 0.01
    delay_min: int = 1
    delay_max: int = 20
    master_seed: int = 12345
    processes: int = 1
    backend: str = "inproc"
    roster: str = ""
    warmup_seconds: float = 1.0
    measure_seconds: float = 2.0
    dt_ms: float = 1.0
    thalamic_rate: int = 1
    thalamic_amplitude: float = 20.0
    stdp_a_plus: float = 0.1
    stdp_a_minus: float = -0.12
    stdp_tau_plus: float = 20.0
    stdp_tau_minus: float = 20.0
    weight_min: float = 0.0
    weight_max: float = 10.0
    plasticity_interval_ms: float = 1000.0
    initial_weight_excitatory: float = 6.0
    initial_weight_inhibitory: float = -5.0
    barrier_enabled: bool = True
    trace_gids: tuple[int, ...] = ()
    out_dir: str = "out"

    # -- derived views ------------------------------------------------------

    def grid(self) -> GridConfig:
        return GridConfig(
            cfx=self.cfx, cfy=self.cfy,
            neurons_per_column=self.neurons_per_column,
            excitatory_fraction=self.excitatory_fraction,
            synapses_per_neuron=self.synapses_per_neuron,
            fraction_same=self.fraction_same,
            fraction_first=self.fraction_first,
            fraction_second=self.fraction_second,
            fraction_third=self.fraction_third,
            delay_min=self.delay_min, delay_max=self.delay_max,
            master_seed=self.master_seed,
        )

    def process_map(self) -> ProcessMap:
        return ProcessMap.for_grid(self.grid(), self.processes)

    def stdp(self) -> StdpConfig:
        return StdpConfig(
            a_plus=self.stdp_a_plus, a_minus=self.stdp_a_minus,
            tau_plus=self.stdp_tau_plus, tau_minus=self.stdp_tau_minus,
            w_min=self.weight_min, w_max=self.weight_max,
            apply_interval=self.plasticity_interval_ms,
        )

    def initial_weights(self) -> InitialWeights:
        return InitialWeights(excitatory=self.initial_weight_excitatory,
                              inhibitory=self.initial_weight_inhibitory)

    def warmup_steps(self) -> int:
        return round(self.warmup_seconds * 1000.0 / self.dt_ms)

    def measure_steps(self) -> int:
        return round(self.measure_seconds * 1000.0 / self.dt_ms)

    def grid_label(self) -> str:
        return f"{self.cfx}x{self.cfy}"

    def validate(self) -> None:
        """Reject invalid configurations before any allocation."""
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}; "
                              f"choose one of {BACKENDS}")
        if self.dt_ms <= 0:
            raise ConfigError(f"dt_ms must be positive, got {self.dt_ms}")
        if self.measure_seconds <= 0:
            raise ConfigError("measure_seconds must be positive")
        if self.warmup_seconds < 0:
            raise ConfigError("warmup_seconds must not be negative")
        if self.thalamic_rate < 0:
            raise ConfigError("thalamic_rate must not be negative")
        self.grid()          # raises on bad grid parameters
        self.process_map()   # raises on bad divisibility
        self.stdp()          # raises on bad plasticity constants
        n = self.grid().total_neurons
        for g in self.trace_gids:
            if not 0 <= g < n:
                raise ConfigError(f"trace gid {g} outside [0, {n})")


def _parse_value(name: str, raw: str, kind: type):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is tuple or name == "trace_gids":
        if not raw:
            return ()
        return tuple(int(x) for x in raw.split(","))
    return raw


_FIELD_TYPES = {
    "cfx": int, "cfy": int, "neurons_per_column": int,
    "excitatory_fraction": float, "synapses_per_neuron": int,
    "fraction_same": float, "fraction_first": float,
    "fraction_second": float, "fraction_third": float,
    "delay_min": int, "delay_max": int, "master_seed": int,
    "processes": int, "backend": str, "roster": str,
    "warmup_seconds": float, "measure_seconds": float, "dt_ms": float,
    "thalamic_rate": int, "thalamic_amplitude": float,
    "stdp_a_plus": float, "stdp_a_minus": float,
    "stdp_tau_plus": float, "stdp_tau_minus": float,
    "weight_min": float, "weight_max": float,
    "plasticity_interval_ms": float,
    "initial_weight_excitatory": float, "initial_weight_inhibitory": float,
    "barrier_enabled": bool, "trace_gids": tuple, "out_dir": str,
}


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    overrides = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "grid":  # convenience alias, e.g. grid = 2x2
            cx, cy = raw.lower().split("x")
            overrides["cfx"] = int(cx)
            overrides["cfy"] = int(cy)
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        overrides[key] = _parse_value(key, raw, _FIELD_TYPES[key])
    return replace(cfg, **overrides)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    """Echo the fully resolved configuration (re-runnable)."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "trace_gids":
            value = ",".join(str(g) for g in value)
        lines.append(f"{f.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")
