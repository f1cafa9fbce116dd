"""Neuron and synapse kernels: hybrid two-variable dynamics plus the
timing-dependent weight-change rule.

The neuron model integrates, with explicit Euler steps,

    dv/dt = 0.04 v^2 + 5 v + 140 - u + I
    du/dt = a (b v - u)

and applies a discrete spike rule: once v has been driven to the peak
potential the next step emits the spike and resets v <- c, u <- u + d
without integrating.  The peak state therefore lasts exactly one step,
which makes recorded spike potentials uniform.

Following the reference implementation of this model family, v is
advanced in two half-steps per time step (u once, from the updated v):
a single 1 ms Euler step of the quadratic is numerically unstable once
synaptic input pushes v far from rest, manufacturing rebound spikes
from deeply hyperpolarized states.

Everything here is a pure function of its inputs; there is no process,
transport, or clock knowledge at this layer.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import math

import numpy as np


class NumericDivergenceError(RuntimeError):
    """Membrane state left the finite range; identifies the neuron."""

    def __init__(self, gid: int, step: int):
        super().__init__(f"non-finite neuron state for gid {gid} at step {step}")
        self.gid = gid
        self.step = step


@dataclass(frozen=True)
class IzhikevichParams:
    """Per-kind neuron constants.

    a: recovery time scale (1/ms); b: recovery coupling; c: post-spike
    reset potential (mV); d: post-spike recovery increment; v_peak:
    spike threshold/clamp potential (mV).
    """

    a: float
    b: float
    c: float
    d: float
    v_peak: float = 30.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if not self.v_peak > self.c:
            raise ValueError(f"v_peak ({self.v_peak}) must exceed c ({self.c})")


# Regular-spiking excitatory and fast-spiking inhibitory parameter sets.
RS_PARAMS = IzhikevichParams(a=0.02, b=0.2, c=-65.0, d=8.0)
FS_PARAMS = IzhikevichParams(a=0.1, b=0.2, c=-65.0, d=2.0)

EXCITATORY = "excitatory"
INHIBITORY = "inhibitory"

NEVER = -1  # sentinel for "no spike yet" in integer step times


@dataclass
class NeuronState:
    v: float
    u: float
    last_spike_time: Optional[float] = None  # ms, multiple of dt
    kind: str = EXCITATORY


@dataclass(frozen=True)
class StepConfig:
    dt: float = 1.0  # ms

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


@dataclass(frozen=True)
class StdpConfig:
    """Timing-dependent plasticity constants and the application policy.

    a_plus/a_minus scale potentiation/depression, tau_plus/tau_minus set
    the decay of the exponential windows.  Accumulated deltas are folded
    into weights every apply_interval ms, clipped to [w_min, w_max];
    inhibitory synapses are exempt.
    """

    a_plus: float = 0.1
    a_minus: float = -0.12
    tau_plus: float = 20.0
    tau_minus: float = 20.0
    w_min: float = 0.0
    w_max: float = 10.0
    apply_interval: float = 1000.0  # ms

    def __post_init__(self):
        if not (self.tau_plus > 0 and self.tau_minus > 0):
            raise ValueError("tau_plus and tau_minus must be positive")
        if not self.a_plus > 0:
            raise ValueError("a_plus must be positive")
        if not self.a_minus < 0:
            raise ValueError("a_minus must be negative")
        if self.w_min > self.w_max:
            raise ValueError("w_min must not exceed w_max")


def neuron_step(state: NeuronState, params: IzhikevichParams,
                input_current: float, step: StepConfig,
                now: Optional[float] = None) -> tuple[NeuronState, bool]:
    """Advance one neuron by one time step.

    Returns the new state and whether the neuron spiked at this step.
    A state sitting at v_peak (clamped by the previous step) resets and
    spikes; otherwise one Euler step is taken and the result is clamped
    to v_peak so the following step emits the spike.
    """
    if not (math.isfinite(state.v) and math.isfinite(state.u)
            and math.isfinite(input_current)):
        raise NumericDivergenceError(gid=-1, step=-1)

    if state.v >= params.v_peak:
        new = NeuronState(v=params.c, u=state.u + params.d,
                          last_spike_time=now, kind=state.kind)
        return new, True

    half = 0.5 * step.dt
    v = state.v
    v = v + half * (0.04 * v * v + 5.0 * v + 140.0 - state.u + input_current)
    v = v + half * (0.04 * v * v + 5.0 * v + 140.0 - state.u + input_current)
    u = state.u + step.dt * (params.a * (params.b * v - state.u))
    if not (math.isfinite(v) and math.isfinite(u)):
        raise NumericDivergenceError(gid=-1, step=-1)
    if v > params.v_peak:
        v = params.v_peak
    return replace(state, v=v, u=u), False


def step_population(v: np.ndarray, u: np.ndarray,
                    a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray,
                    v_peak: float, current: np.ndarray, dt: float) -> np.ndarray:
    """Vectorized neuron_step over parallel state arrays, in place.

    Arithmetic mirrors neuron_step term by term so a population update
    is bit-identical to stepping each neuron alone.  Returns the boolean
    spike mask.
    """
    spiked = v >= v_peak
    half = 0.5 * dt
    # Peak-state lanes are integrated as garbage and overwritten by the
    # reset below; suppress their overflow noise.  Real divergence still
    # surfaces as non-finite v in the surviving lanes.
    with np.errstate(over="ignore", invalid="ignore"):
        v_new = v + half * (0.04 * v * v + 5.0 * v + 140.0 - u + current)
        v_new = v_new + half * (0.04 * v_new * v_new + 5.0 * v_new + 140.0 - u + current)
        u_new = u + dt * (a * (b * v_new - u))
    np.minimum(v_new, v_peak, out=v_new)
    v[:] = np.where(spiked, c, v_new)
    u[:] = np.where(spiked, u + d, u_new)
    return spiked


def stdp_delta(t_post: float, t_pre: float, d_axon: float,
               cfg: StdpConfig) -> float:
    """Weight change for one (post spike, presynaptic arrival) pairing.

    t = t_post - t_pre - d_axon compares the post-synaptic spike with
    the arrival of the presynaptic spike after its axonal delay.
    Causal pairings (t >= 0) potentiate, anticausal ones depress, both
    with exponentially decaying magnitude.
    """
    t = t_post - t_pre - d_axon
    if t >= 0:
        return cfg.a_plus * math.exp(-t / cfg.tau_plus)
    return cfg.a_minus * math.exp(-abs(t) / cfg.tau_minus)


def stdp_delta_array(t: np.ndarray, cfg: StdpConfig) -> np.ndarray:
    """Vectorized stdp_delta over precomputed lag values t."""
    t = np.asarray(t, dtype=np.float64)
    out = np.where(
        t >= 0,
        cfg.a_plus * np.exp(-t / cfg.tau_plus),
        cfg.a_minus * np.exp(-np.abs(t) / cfg.tau_minus),
    )
    return out


def apply_plasticity(weight: float, accumulated_delta: float,
                     cfg: StdpConfig, kind: str = EXCITATORY) -> float:
    """Fold an accumulated delta into a weight, clipped to the bounds.

    Inhibitory synapses are exempt and come back unchanged.
    """
    if kind == INHIBITORY:
        return weight
    return min(max(weight + accumulated_delta, cfg.w_min), cfg.w_max)


def apply_plasticity_array(weights: np.ndarray, acc: np.ndarray,
                           plastic: np.ndarray, cfg: StdpConfig) -> None:
    """In-place epoch application over synapse arrays (plastic mask only)."""
    w = weights[plastic] + acc[plastic]
    np.clip(w, cfg.w_min, cfg.w_max, out=w)
    weights[plastic] = w
    acc[plastic] = 0.0
