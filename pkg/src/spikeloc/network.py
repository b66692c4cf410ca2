"""Encoder-decoder spiking network with fixed random readouts.

Six conv-LIF layers: three encoder layers each followed by 2x maxpool,
three decoder layers each followed by 2x nearest upsampling, with spike-map
additions from encoder outputs into the first two decoder outputs. Every
layer owns a frozen random linear readout producing 4 box coordinates per
timestep. Inside a layer the order is conv -> LIF -> resample -> residual
add; the readout sees the layer's final (post-resample, post-residual)
spike map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neuron import LifConfig, LifLayerState, accumulate_current, lif_step, trace_step
from .numerics import DTYPE, Rng, matvec, maxpool2d, upsample_nearest

READOUT_DIM = 4


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    resample: str = "none"  # pool2 | up2 | none
    residual_from: int | None = None  # encoder layer index (0-based)

    def __post_init__(self):
        if self.resample not in ("pool2", "up2", "none"):
            raise ValueError(f"unknown resample mode {self.resample!r}")

    @property
    def padding(self) -> int:
        return self.kernel // 2


def default_channel_plan() -> list[LayerSpec]:
    """Smallest plan satisfying the residual shape constraints."""
    return [
        LayerSpec(1, 16, resample="pool2"),
        LayerSpec(16, 32, resample="pool2"),
        LayerSpec(32, 64, resample="pool2"),
        LayerSpec(64, 32, resample="up2", residual_from=1),
        LayerSpec(32, 16, resample="up2", residual_from=0),
        LayerSpec(16, 16, resample="up2"),
    ]


# Resting drive: biases start positive so membranes sit inside the surrogate
# support from step one; symmetric init leaves every neuron silent and
# gradient-free at theta = 1.
BIAS_INIT = (0.4, 0.8)


@dataclass
class Network:
    specs: list[LayerSpec]
    weights: list[np.ndarray]  # [Cout, Cin, k, k] per layer
    biases: list[np.ndarray]  # [Cout] per layer
    readouts: list[np.ndarray]  # [4, flatten(out_l)] per layer, frozen
    lif: LifConfig
    input_shape: tuple[int, int]
    seed: int
    conv_shapes: list[tuple[int, int, int]]  # LIF map [C,H,W] per layer
    out_shapes: list[tuple[int, int, int]]  # post-resample map per layer

    @property
    def num_layers(self) -> int:
        return len(self.specs)

    def init_states(self, batch: int | None = None) -> list[LifLayerState]:
        """Fresh zero states; pass batch for [N,C,H,W] simulation."""
        states = []
        prefix = () if batch is None else (batch,)
        for l, spec in enumerate(self.specs):
            in_hw = self._conv_input_hw(l)
            states.append(
                LifLayerState.zeros(
                    prefix + self.conv_shapes[l],
                    prefix + (spec.in_channels,) + in_hw,
                )
            )
        return states

    def _conv_input_hw(self, l: int) -> tuple[int, int]:
        if l == 0:
            return self.input_shape
        return self.out_shapes[l - 1][1:]

    def parameters(self) -> list[np.ndarray]:
        """Trainable tensors, in checkpoint order (weight, bias per layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def _propagate_shapes(
    input_shape: tuple[int, int], plan: list[LayerSpec]
) -> tuple[list[tuple[int, int, int]], list[tuple[int, int, int]]]:
    conv_shapes, out_shapes = [], []
    h, w = input_shape
    channels = plan[0].in_channels
    for l, spec in enumerate(plan):
        if spec.in_channels != channels:
            raise ValueError(
                f"layer {l} expects {spec.in_channels} input channels but gets {channels}"
            )
        conv_shapes.append((spec.out_channels, h, w))
        if spec.resample == "pool2":
            if h % 2 or w % 2:
                raise ValueError(f"layer {l} pool2 needs even extents, got {h}x{w}")
            h, w = h // 2, w // 2
        elif spec.resample == "up2":
            h, w = h * 2, w * 2
        if spec.residual_from is not None:
            src = spec.residual_from
            if src >= l:
                raise ValueError(f"layer {l} residual source {src} is not an earlier layer")
            sc, sh, sw = out_shapes[src]
            if (sc, sh, sw) != (spec.out_channels, h, w):
                raise ValueError(
                    f"layer {l} residual shape mismatch: source {src} gives "
                    f"{(sc, sh, sw)}, layer output is {(spec.out_channels, h, w)}"
                )
        out_shapes.append((spec.out_channels, h, w))
        channels = spec.out_channels
    return conv_shapes, out_shapes


def build_network(
    input_shape: tuple[int, int],
    channel_plan: list[LayerSpec] | None = None,
    lif_cfg: LifConfig | None = None,
    seed: int = 0,
) -> Network:
    """Construct the network with seeded uniform init; readouts are frozen."""
    plan = channel_plan if channel_plan is not None else default_channel_plan()
    lif = lif_cfg if lif_cfg is not None else LifConfig()
    conv_shapes, out_shapes = _propagate_shapes(input_shape, plan)

    weights, biases, readouts = [], [], []
    for l, spec in enumerate(plan):
        fan_in = spec.in_channels * spec.kernel * spec.kernel
        bound = 1.0 / np.sqrt(fan_in)
        wrng = Rng(seed).split("conv", l)
        weights.append(
            wrng.uniform(-bound, bound, (spec.out_channels, spec.in_channels,
                                         spec.kernel, spec.kernel))
        )
        biases.append(wrng.uniform(BIAS_INIT[0], BIAS_INIT[1], (spec.out_channels,)))
        flat = int(np.prod(out_shapes[l]))
        gbound = 1.0 / np.sqrt(flat)
        readouts.append(Rng(seed).split("readout", l).uniform(-gbound, gbound,
                                                              (READOUT_DIM, flat)))
    return Network(
        specs=plan,
        weights=weights,
        biases=biases,
        readouts=readouts,
        lif=lif,
        input_shape=tuple(input_shape),
        seed=seed,
        conv_shapes=conv_shapes,
        out_shapes=out_shapes,
    )


def forward_timestep(
    net: Network, states: list[LifLayerState], input_spikes: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """One simulation step through all layers.

    input_spikes: [1,H,W] or batched [N,1,H,W]. Returns (per-layer spike
    maps after resample/residual, per-layer readout vectors). Traces are
    updated with each layer's presynaptic input as part of the step.
    """
    squeeze = input_spikes.ndim == 3
    x = input_spikes[None] if squeeze else input_spikes
    if x.shape[1:] != (net.specs[0].in_channels,) + net.input_shape:
        raise ValueError(
            f"input shape {input_spikes.shape} does not match network input "
            f"{(net.specs[0].in_channels,) + net.input_shape}"
        )
    if states[0].v.shape[0] != x.shape[0] or states[0].v.ndim != 4:
        raise ValueError(
            f"states batch {states[0].v.shape} does not match input batch {x.shape[0]}; "
            f"use net.init_states(batch)"
        )
    layer_out: list[np.ndarray] = []
    readout_out: list[np.ndarray] = []
    for l, spec in enumerate(net.specs):
        current = accumulate_current(x, net.weights[l], net.biases[l],
                                     padding=spec.padding)
        spikes = lif_step(states[l], current, net.lif)
        trace_step(states[l], x, net.lif)
        if spec.resample == "pool2":
            spikes = maxpool2d(spikes)
        elif spec.resample == "up2":
            spikes = upsample_nearest(spikes)
        if spec.residual_from is not None:
            spikes = spikes + layer_out[spec.residual_from]
        layer_out.append(spikes)
        readout_out.append(matvec(net.readouts[l], spikes.reshape(spikes.shape[0], -1)))
        x = spikes
    if squeeze:
        layer_out = [s[0] for s in layer_out]
        readout_out = [r[0] for r in readout_out]
    return layer_out, readout_out


@dataclass
class SpikeStats:
    """Per-layer spike totals over a simulation, for sparsity monitoring."""

    spike_counts: np.ndarray  # [L] total spikes (post-resample maps)
    neuron_steps: np.ndarray  # [L] neurons * timesteps simulated

    @property
    def rates(self) -> np.ndarray:
        return self.spike_counts / np.maximum(self.neuron_steps, 1)


def forward_sequence(
    net: Network, spike_input: np.ndarray
) -> tuple[np.ndarray, SpikeStats]:
    """Run T timesteps from fresh zero states.

    spike_input: [T,1,H,W]. Returns readout history [T,L,4] and spike stats.
    """
    if spike_input.ndim != 4 or spike_input.shape[0] < 1:
        raise ValueError(f"spike input must be [T,1,H,W] with T >= 1, got {spike_input.shape}")
    t_steps = spike_input.shape[0]
    states = net.init_states(batch=1)
    history = np.zeros((t_steps, net.num_layers, READOUT_DIM), dtype=DTYPE)
    counts = np.zeros(net.num_layers, dtype=np.float64)
    for t in range(t_steps):
        layer_spikes, readouts = forward_timestep(net, states, spike_input[t][None])
        for l in range(net.num_layers):
            history[t, l] = readouts[l][0]
            counts[l] += float(layer_spikes[l].sum())
    neuron_steps = np.array(
        [int(np.prod(s)) * t_steps for s in net.out_shapes], dtype=np.float64
    )
    return history, SpikeStats(spike_counts=counts, neuron_steps=neuron_steps)
