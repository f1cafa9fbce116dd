"""Deterministic network construction: column grid, process mapping,
forward synapse projection, and the external stimulus stream.

Neurons are grouped in columns of (by default) 1000 cells, 80%
excitatory, laid out on a cfx-by-cfy grid with periodic boundaries.
Each neuron projects a fixed number of forward synapses; an excitatory
neuron splits them 76% into its own column and 12%/8%/4% across the
first/second/third neighbor rings, while an inhibitory neuron projects
only onto excitatory cells of its own column at the minimum delay.

All draws go through the keyed generator, so the produced multiset of
synapses and stimulus events depends only on (grid, master_seed), never
on how many processes the simulation is split into.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .model import EXCITATORY, INHIBITORY
from .rng import STREAM_DELAY, STREAM_TARGET, STREAM_THALAMIC, KeyedRng


class ConfigError(ValueError):
    """Invalid grid/process configuration, rejected before allocation."""


# Neighbor ring offsets, in the fixed slot order used for projection.
FIRST_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))
SECOND_OFFSETS = ((-1, -1), (-1, 1), (1, -1), (1, 1))
THIRD_OFFSETS = ((-2, 0), (2, 0), (0, -2), (0, 2))

# Column fractions allowed per process when a column is split.
_COLUMN_SPLITS = (2, 4, 8)


@dataclass(frozen=True)
class GridConfig:
    cfx: int
    cfy: int
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

    def __post_init__(self):
        if self.cfx < 1 or self.cfy < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.cfx}x{self.cfy}")
        if self.delay_min < 1 or self.delay_max < self.delay_min:
            raise ConfigError(
                f"need 1 <= delay_min <= delay_max, got [{self.delay_min}, {self.delay_max}]")
        if self.delay_max > 255:
            raise ConfigError("delay_max above 255 does not fit the wire format")
        total = (self.fraction_same + 4 * self.fraction_first
                 + 4 * self.fraction_second + 4 * self.fraction_third)
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"projection fractions must sum to 1, got {total}")
        if any(c < 0 for c in self.group_counts):
            raise ConfigError("projection fractions incompatible with synapses_per_neuron")

    @property
    def cft(self) -> int:
        return self.cfx * self.cfy

    @property
    def total_neurons(self) -> int:
        return self.cft * self.neurons_per_column

    @property
    def exc_per_column(self) -> int:
        return round(self.excitatory_fraction * self.neurons_per_column)

    @property
    def group_counts(self) -> tuple[int, int, int, int]:
        """Synapses per (own column, each first, each second, each third)."""
        m = self.synapses_per_neuron
        first = round(self.fraction_first * m)
        second = round(self.fraction_second * m)
        third = round(self.fraction_third * m)
        same = m - 4 * (first + second + third)
        return same, first, second, third


@dataclass(frozen=True)
class ProcessMap:
    """Even neuron-to-process assignment: process(gid) = gid // loc_n."""

    process_count: int
    total_neurons: int
    loc_n: int

    @classmethod
    def for_grid(cls, grid: GridConfig, process_count: int) -> "ProcessMap":
        n = grid.total_neurons
        if process_count < 1:
            raise ConfigError(f"process count must be >= 1, got {process_count}")
        if n % process_count != 0:
            raise ConfigError(
                f"{process_count} processes do not evenly divide {n} neurons")
        loc_n = n // process_count
        npc = grid.neurons_per_column
        whole_columns = loc_n % npc == 0
        column_fraction = npc % loc_n == 0 and npc // loc_n in _COLUMN_SPLITS
        if not (whole_columns or column_fraction):
            raise ConfigError(
                f"{loc_n} neurons per process is neither a whole number of "
                f"{npc}-neuron columns nor a 1/2, 1/4, or 1/8 column")
        return cls(process_count=process_count, total_neurons=n, loc_n=loc_n)

    def process_of(self, gid: int) -> int:
        return gid // self.loc_n

    def local_of(self, gid: int) -> int:
        return gid % self.loc_n

    def owned_range(self, rank: int) -> tuple[int, int]:
        return rank * self.loc_n, (rank + 1) * self.loc_n


@dataclass(frozen=True)
class NeuronLocus:
    process: int
    local: int
    column: int
    kind: str


def neuron_kind(gid: int, grid: GridConfig) -> str:
    within = gid % grid.neurons_per_column
    return EXCITATORY if within < grid.exc_per_column else INHIBITORY


def neuron_locus(gid: int, grid: GridConfig, pmap: ProcessMap) -> NeuronLocus:
    """Resolve a global id to (process, local id, column, kind)."""
    if not 0 <= gid < grid.total_neurons:
        raise ValueError(f"gid {gid} outside [0, {grid.total_neurons})")
    return NeuronLocus(
        process=pmap.process_of(gid),
        local=pmap.local_of(gid),
        column=gid // grid.neurons_per_column,
        kind=neuron_kind(gid, grid),
    )


def column_xy(col: int, grid: GridConfig) -> tuple[int, int]:
    return col % grid.cfx, col // grid.cfx


def column_id(x: int, y: int, grid: GridConfig) -> int:
    return (y % grid.cfy) * grid.cfx + (x % grid.cfx)


def neighbor_columns(grid: GridConfig, col: int) -> dict[str, list[int]]:
    """First/second/third neighbor columns with periodic wrapping.

    Rings are the four axial offsets, the four diagonals, and the four
    axial distance-2 offsets.  Duplicates arising from wrapping on small
    grids are kept; a 1x1 grid maps every slot back onto the column.
    """
    x, y = column_xy(col, grid)
    out: dict[str, list[int]] = {}
    for name, offsets in (("first", FIRST_OFFSETS),
                          ("second", SECOND_OFFSETS),
                          ("third", THIRD_OFFSETS)):
        out[name] = [column_id(x + dx, y + dy, grid) for dx, dy in offsets]
    return out


@lru_cache(maxsize=None)
def _slot_columns(grid: GridConfig, col: int) -> np.ndarray:
    """Target column per forward-synapse slot of an excitatory neuron."""
    same, first, second, third = grid.group_counts
    rings = neighbor_columns(grid, col)
    cols = [col] * same
    for c in rings["first"]:
        cols.extend([c] * first)
    for c in rings["second"]:
        cols.extend([c] * second)
    for c in rings["third"]:
        cols.extend([c] * third)
    arr = np.asarray(cols, dtype=np.int64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class InitialWeights:
    excitatory: float = 6.0
    inhibitory: float = -5.0


DEFAULT_WEIGHTS = InitialWeights()


def initial_weights(kind: str, weights: InitialWeights = DEFAULT_WEIGHTS) -> float:
    return weights.excitatory if kind == EXCITATORY else weights.inhibitory


@dataclass(frozen=True)
class SynapseRecord:
    source_gid: int
    target_gid: int
    weight: float
    delay: int  # integer ms
    kind: str = EXCITATORY


@dataclass
class SynapseBatch:
    """The forward synapses of one neuron, as parallel arrays."""

    source_gid: int
    target_gid: np.ndarray
    weight: np.ndarray
    delay: np.ndarray
    kind: str

    def __len__(self) -> int:
        return len(self.target_gid)

    def __getitem__(self, j: int) -> SynapseRecord:
        return SynapseRecord(
            source_gid=self.source_gid,
            target_gid=int(self.target_gid[j]),
            weight=float(self.weight[j]),
            delay=int(self.delay[j]),
            kind=self.kind,
        )


def generate_forward_synapses(gid: int, grid: GridConfig,
                              weights: InitialWeights = DEFAULT_WEIGHTS) -> SynapseBatch:
    """Generate the full forward projection of one neuron.

    Excitatory neurons fill the fixed slot layout over their column and
    neighbor rings, drawing each target uniformly within the slot's
    column and each delay uniformly on [delay_min, delay_max].
    Inhibitory neurons target excitatory cells of their own column at
    the minimum delay.  Purely keyed: independent of process count.
    """
    rng = KeyedRng(grid.master_seed)
    m = grid.synapses_per_neuron
    npc = grid.neurons_per_column
    col = gid // npc
    kind = neuron_kind(gid, grid)
    slots = np.arange(m, dtype=np.uint64)

    target_words = rng.words(STREAM_TARGET, gid, counters=slots)
    if kind == EXCITATORY:
        target_cols = _slot_columns(grid, col)
        offsets = (target_words % np.uint64(npc)).astype(np.int64)
        targets = target_cols * npc + offsets
        delays = rng.uniform_ints(grid.delay_min, grid.delay_max,
                                  STREAM_DELAY, gid, counters=slots)
        weight = weights.excitatory
    else:
        offsets = (target_words % np.uint64(grid.exc_per_column)).astype(np.int64)
        targets = col * npc + offsets
        delays = np.full(m, grid.delay_min, dtype=np.int64)
        weight = weights.inhibitory

    return SynapseBatch(
        source_gid=gid,
        target_gid=targets,
        weight=np.full(m, weight, dtype=np.float64),
        delay=delays,
        kind=kind,
    )


def generate_block(gids: np.ndarray, grid: GridConfig,
                   weights: InitialWeights = DEFAULT_WEIGHTS) -> dict[str, np.ndarray]:
    """Forward synapses for a contiguous block of neurons, flattened.

    Returns parallel arrays of length len(gids) * M ordered by
    (source gid ascending, slot ascending) -- the canonical generation
    order.  Same draws as generate_forward_synapses, batched.
    """
    gids = np.asarray(gids, dtype=np.int64)
    rng = KeyedRng(grid.master_seed)
    m = grid.synapses_per_neuron
    npc = grid.neurons_per_column
    n = len(gids)
    slots = np.tile(np.arange(m, dtype=np.uint64), n)

    src = np.repeat(gids, m)
    # words(STREAM, gid, slot) for every (gid, slot) pair
    h_tag = np.uint64(rng.word(STREAM_TARGET))
    from .rng import _mix64_array  # shared vector finalizer
    gid_hash_t = _mix64_array(h_tag ^ np.repeat(gids.astype(np.uint64), m))
    target_words = _mix64_array(gid_hash_t ^ slots)
    h_tag_d = np.uint64(rng.word(STREAM_DELAY))
    gid_hash_d = _mix64_array(h_tag_d ^ np.repeat(gids.astype(np.uint64), m))
    delay_words = _mix64_array(gid_hash_d ^ slots)

    exc = (gids % npc) < grid.exc_per_column
    exc_flat = np.repeat(exc, m)

    cols = gids // npc
    target_cols = np.empty(n * m, dtype=np.int64)
    for i, (g, c) in enumerate(zip(gids, cols)):
        sl = slice(i * m, (i + 1) * m)
        if exc[i]:
            target_cols[sl] = _slot_columns(grid, int(c))
        else:
            target_cols[sl] = c

    pool = np.where(exc_flat, npc, grid.exc_per_column).astype(np.uint64)
    offsets = (target_words % pool).astype(np.int64)
    targets = target_cols * npc + offsets

    span = np.uint64(grid.delay_max - grid.delay_min + 1)
    delays = np.where(
        exc_flat,
        (delay_words % span).astype(np.int64) + grid.delay_min,
        grid.delay_min,
    )
    w = np.where(exc_flat, weights.excitatory, weights.inhibitory)

    return {
        "source_gid": src,
        "target_gid": targets,
        "weight": w.astype(np.float64),
        "delay": delays,
        "excitatory_source": exc_flat,
    }


@dataclass(frozen=True)
class ThalamicEvent:
    target_gid: int
    time_step: int
    amplitude: float


def thalamic_events(column: int, timestep: int, grid: GridConfig,
                    rate: int = 1, amplitude: float = 20.0) -> list[ThalamicEvent]:
    """External stimulus events for one column at one time step.

    Exactly `rate` events, each hitting a uniformly drawn neuron of the
    column, all with the same fixed amplitude.  Keyed by
    (master_seed, column, timestep, event index) only.
    """
    if timestep < 0:
        raise ValueError(f"timestep must be >= 0, got {timestep}")
    targets = thalamic_targets(column, timestep, grid, rate)
    return [ThalamicEvent(target_gid=int(t), time_step=timestep, amplitude=amplitude)
            for t in targets]


def thalamic_targets(column: int, timestep: int, grid: GridConfig,
                     rate: int) -> np.ndarray:
    """Target gids of the stimulus events, in event-index order."""
    if rate <= 0:
        return np.empty(0, dtype=np.int64)
    rng = KeyedRng(grid.master_seed)
    events = np.arange(rate, dtype=np.uint64)
    offsets = rng.uniform_ints(0, grid.neurons_per_column - 1,
                               STREAM_THALAMIC, column, timestep,
                               counters=events)
    return column * grid.neurons_per_column + offsets
