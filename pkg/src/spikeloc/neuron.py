"""Discrete-time LIF dynamics, surrogate derivative, and eligibility traces.

Forward Euler with step dt: V[t] = alpha * V[t-1] + (dt/tau) * I[t] with
alpha = 1 - dt/tau; a neuron spikes when V reaches theta and is hard-reset
to 0 in the same step. The eligibility trace low-pass filters presynaptic
activity with the same (alpha, dt/tau) constants, which makes it exactly
dV/dw when reset paths are excluded from the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import DTYPE, conv2d


@dataclass(frozen=True)
class LifConfig:
    tau_leak: float = 10.0  # membrane time constant, ms
    theta: float = 1.0  # firing threshold
    dt: float = 1.0  # simulation step, ms
    surrogate_width: float = 0.5  # half-support of the triangle derivative

    def __post_init__(self):
        if not (self.tau_leak > self.dt > 0):
            raise ValueError(
                f"need tau_leak > dt > 0, got tau_leak={self.tau_leak}, dt={self.dt}"
            )
        if self.theta <= 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.surrogate_width <= 0:
            raise ValueError(f"surrogate_width must be positive, got {self.surrogate_width}")

    @property
    def alpha(self) -> np.float32:
        """Per-step decay 1 - dt/tau, in (0, 1)."""
        return np.float32(1.0 - self.dt / self.tau_leak)

    @property
    def dt_over_tau(self) -> np.float32:
        return np.float32(self.dt / self.tau_leak)


@dataclass
class LifLayerState:
    """Mutable per-layer state; single-owner, one simulation at a time.

    v is the post-reset membrane potential (always < theta after a step);
    v_pre keeps the pre-reset potential of the last step, which is where
    the surrogate derivative of the spike function is evaluated. trace is
    shaped like the layer's presynaptic input map.
    """

    v: np.ndarray
    trace: np.ndarray
    last_spikes: np.ndarray
    v_pre: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.v_pre is None:
            self.v_pre = np.zeros_like(self.v)

    @classmethod
    def zeros(cls, out_shape, in_shape, dtype=DTYPE) -> "LifLayerState":
        return cls(
            v=np.zeros(out_shape, dtype=dtype),
            trace=np.zeros(in_shape, dtype=dtype),
            last_spikes=np.zeros(out_shape, dtype=dtype),
        )


def lif_step(state: LifLayerState, current: np.ndarray, cfg: LifConfig) -> np.ndarray:
    """One membrane update; returns the {0,1} spike map and mutates state."""
    if current.shape != state.v.shape:
        raise ValueError(
            f"current shape {current.shape} does not match state {state.v.shape}"
        )
    v = cfg.alpha * state.v + cfg.dt_over_tau * current
    spikes = (v >= cfg.theta).astype(current.dtype)
    state.v_pre = v
    state.v = v * (current.dtype.type(1) - spikes)
    state.last_spikes = spikes
    return spikes


def accumulate_current(
    presyn_spikes: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Weighted presynaptic input current, realized as a convolution."""
    return conv2d(presyn_spikes, weight, bias, stride=stride, padding=padding)


def surrogate_derivative(v: np.ndarray, cfg: LifConfig) -> np.ndarray:
    """Triangle surrogate: peak 1/gamma at v = theta, zero outside +-gamma."""
    gamma = v.dtype.type(cfg.surrogate_width)
    theta = v.dtype.type(cfg.theta)
    one = v.dtype.type(1)
    return np.maximum(v.dtype.type(0), one - np.abs(v - theta) / gamma) / gamma


def trace_step(
    state: LifLayerState, presyn_contribution: np.ndarray, cfg: LifConfig
) -> np.ndarray:
    """Low-pass the presynaptic drive: trace <- alpha*trace + (dt/tau)*input."""
    if presyn_contribution.shape != state.trace.shape:
        raise ValueError(
            f"presyn shape {presyn_contribution.shape} does not match trace "
            f"{state.trace.shape}"
        )
    state.trace *= cfg.alpha
    state.trace += cfg.dt_over_tau * presyn_contribution
    return state.trace
