"""spikebench: a natively distributed benchmark simulator of plastic
spiking neural networks whose spiking output is bit-identical for any
partitioning of the network across simulation processes."""

from .config import RunConfig, load_config
from .engine import ProcessEngine, SpikeRing, SynapseStore
from .model import (
    EXCITATORY,
    FS_PARAMS,
    INHIBITORY,
    RS_PARAMS,
    IzhikevichParams,
    NeuronState,
    NumericDivergenceError,
    StdpConfig,
    StepConfig,
    apply_plasticity,
    neuron_step,
    stdp_delta,
)
from .observables import BlockTimer, RunMetrics, mean_firing_rate
from .rng import KeyedRng
from .runner import run, sweep, verify
from .topology import (
    ConfigError,
    GridConfig,
    InitialWeights,
    ProcessMap,
    SynapseRecord,
    ThalamicEvent,
    generate_forward_synapses,
    initial_weights,
    neighbor_columns,
    neuron_locus,
    thalamic_events,
)
from .transport import InProcCluster, ProtocolError, Transport, TransportError

__version__ = "0.1.0"
