"""Per-layer local training: smooth-L1 readout losses, three-factor
gradients (readout error x surrogate derivative x eligibility trace), and
AdaMax updates applied online at every timestep past burn-in.

Gradients never cross layer boundaries: each layer's update is computed
from its own readout error, its own membrane potentials, and its own
presynaptic trace. Readout weights are never touched.

Batch aggregation: with batch_size > 1 the batch is simulated in lockstep
and gradients are averaged over the batch at each timestep, giving one
optimizer step per timestep index. batch_size=1 recovers pure online
updates.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coding import normalize_bbox, rate_encode
from .data import AugmentConfig, Sample, augment
from .network import Network, forward_timestep
from .neuron import surrogate_derivative
from .numerics import DTYPE, Rng, _im2col, maxpool2d_scatter, upsample_nearest_adjoint


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.95
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 30
    burn_in: int = 8  # timesteps excluded from the loss
    loss_delta: float = 1.0
    T: int = 32

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError(f"beta1 must be in [0,1), got {self.beta1}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"beta2 must be in [0,1), got {self.beta2}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.burn_in < self.T:
            raise ValueError(f"need 0 <= burn_in < T, got burn_in={self.burn_in}, T={self.T}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class OptimState:
    """AdaMax moments for one parameter group."""

    m: list[np.ndarray]
    u: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "OptimState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            u=[np.zeros_like(p) for p in params],
        )


def smooth_l1(pred: np.ndarray, target: np.ndarray, delta: float = 1.0):
    """Smooth-L1 loss averaged over the 4 coordinates.

    pred/target: [4] or batched [N,4]. Returns (loss, dloss_dpred) where
    loss is a scalar for [4] input and per-sample [N] for batched input;
    the gradient is that of each sample's own coordinate-mean loss.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    d = pred - target
    ad = np.abs(d)
    per_coord = np.where(ad < delta, 0.5 * d * d / delta, ad - 0.5 * delta)
    loss = per_coord.mean(axis=-1)
    grad = np.clip(d / delta, -1.0, 1.0) / pred.shape[-1]
    return loss, grad


def adamax_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    opt: OptimState,
    cfg: TrainConfig,
) -> list[np.ndarray]:
    """In-place AdaMax: m <- b1*m + (1-b1)*g; u <- max(b2*u, |g|)."""
    opt.t += 1
    correction = 1.0 - cfg.beta1**opt.t
    for p, g, m, u in zip(params, grads, opt.m, opt.u):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        np.maximum(cfg.beta2 * u, np.abs(g), out=u)
        p -= (cfg.lr / correction) * m / (u + cfg.eps)
    return params


def local_gradients(net: Network, layer: int, state, dloss_dpred: np.ndarray):
    """Three-factor gradient for one layer's conv weight and bias.

    The readout error is backprojected through the frozen readout onto the
    layer's output map, routed through the layer's resample step (argmax
    scatter for pooling, block sum for upsampling; residual additions pass
    the local branch through unchanged), gated by the surrogate derivative
    at the pre-reset potential, and correlated with the presynaptic trace.
    Batched errors ([N,4]) yield batch-averaged gradients.
    """
    spec = net.specs[layer]
    batched = dloss_dpred.ndim == 2
    err = dloss_dpred if batched else dloss_dpred[None]
    n = err.shape[0]
    v_pre = state.v_pre if state.v_pre.ndim == 4 else state.v_pre[None]
    trace = state.trace if state.trace.ndim == 4 else state.trace[None]
    spikes = state.last_spikes if state.last_spikes.ndim == 4 else state.last_spikes[None]
    if v_pre.shape[0] != n:
        raise ValueError(f"error batch {n} does not match state batch {v_pre.shape[0]}")

    e_map = (err @ net.readouts[layer]).reshape((n,) + net.out_shapes[layer])
    if spec.resample == "pool2":
        e_map = maxpool2d_scatter(spikes, e_map)
    elif spec.resample == "up2":
        e_map = upsample_nearest_adjoint(e_map)
    delta = e_map * surrogate_derivative(v_pre, net.lif)

    k = spec.kernel
    cout, cin = spec.out_channels, spec.in_channels
    tr_cols = _im2col(trace, k, 1, spec.padding)  # [N*H*W, Cin*k*k]
    d2 = np.ascontiguousarray(delta.transpose(1, 0, 2, 3)).reshape(cout, -1)
    d_weight = (d2 @ tr_cols).reshape(cout, cin, k, k) / n
    d_bias = net.lif.dt_over_tau * delta.sum(axis=(0, 2, 3)) / n
    return d_weight, d_bias


def init_optim(net: Network) -> list[OptimState]:
    """One AdaMax state per layer, covering (weight, bias)."""
    return [OptimState.zeros_like([w, b]) for w, b in zip(net.weights, net.biases)]


def train_timestep(
    net: Network,
    states,
    input_slice: np.ndarray,
    target: np.ndarray,
    opt_states: list[OptimState],
    cfg: TrainConfig,
    t: int,
):
    """Forward one step; update every layer's conv params once t >= burn_in.

    target: [4] or [N,4] normalized coordinates. Returns (per-layer mean
    losses [L], per-layer spike maps) for monitoring.
    """
    layer_spikes, readouts = forward_timestep(net, states, input_slice)
    losses = np.zeros(net.num_layers, dtype=np.float64)
    for l in range(net.num_layers):
        loss, grad = smooth_l1(readouts[l], target, cfg.loss_delta)
        losses[l] = float(np.mean(loss))
        if t >= cfg.burn_in:
            d_w, d_b = local_gradients(net, l, states[l], grad)
            adamax_step([net.weights[l], net.biases[l]], [d_w, d_b], opt_states[l], cfg)
    return losses, layer_spikes


@dataclass
class EpochSummary:
    epoch: int
    losses: np.ndarray  # [L] mean per-layer loss over active timesteps
    spike_rates: np.ndarray  # [L] mean spikes per neuron per timestep
    lr: float

    @property
    def last_layer_loss(self) -> float:
        return float(self.losses[-1])

    def line(self) -> str:
        rates = ",".join(f"{r:.4f}" for r in self.spike_rates)
        return f"epoch={self.epoch} loss={self.last_layer_loss:.6f} spike_rate=[{rates}] lr={self.lr:g}"

    def csv_row(self) -> str:
        cells = [str(self.epoch)]
        cells += [f"{v:.8f}" for v in self.losses]
        cells += [f"{v:.6f}" for v in self.spike_rates]
        return ",".join(cells)


def csv_header(num_layers: int) -> str:
    cols = ["epoch"]
    cols += [f"loss_l{i + 1}" for i in range(num_layers)]
    cols += [f"spike_rate_l{i + 1}" for i in range(num_layers)]
    return ",".join(cols)


def train_epoch(
    net: Network,
    samples: list[Sample],
    cfg: TrainConfig,
    rng: Rng,
    opt_states: list[OptimState] | None = None,
    epoch: int = 1,
    p_max: float = 0.5,
    augment_cfg: AugmentConfig | None = None,
    log_path: str | Path | None = None,
    quiet: bool = False,
) -> EpochSummary:
    """One pass over the training set in seeded shuffled batch order.

    Samples must already be at the network's input resolution. Every image
    is (optionally) augmented and freshly rate-encoded each epoch with a
    stream derived from (rng seed, epoch, sample id).
    """
    if not samples:
        raise ValueError("training set is empty")
    if opt_states is None:
        opt_states = init_optim(net)
    order = rng.permutation(len(samples))
    h, w = net.input_shape
    num_l = net.num_layers

    loss_total = np.zeros(num_l, dtype=np.float64)
    loss_denom = 0.0
    spike_total = np.zeros(num_l, dtype=np.float64)
    neuron_steps = np.zeros(num_l, dtype=np.float64)
    map_sizes = np.array([int(np.prod(s)) for s in net.out_shapes], dtype=np.float64)

    for start in range(0, len(order), cfg.batch_size):
        batch_idx = order[start : start + cfg.batch_size]
        batch_n = len(batch_idx)
        spikes = np.empty((cfg.T, batch_n, 1, h, w), dtype=DTYPE)
        targets = np.empty((batch_n, 4), dtype=DTYPE)
        for j, idx in enumerate(batch_idx):
            sample = samples[int(idx)]
            if sample.image.shape != (h, w):
                raise ValueError(
                    f"sample {sample.id} has shape {sample.image.shape}, expected {(h, w)}"
                )
            if augment_cfg is not None:
                sample = augment(sample, rng.split("aug", epoch, sample.id), augment_cfg)
            enc = rate_encode(sample.image, cfg.T, p_max, rng.split("enc", epoch, sample.id))
            spikes[:, j] = enc.spikes
            targets[j] = normalize_bbox(sample.bbox, w, h).as_array()

        states = net.init_states(batch=batch_n)
        for t in range(cfg.T):
            losses, layer_spikes = train_timestep(
                net, states, spikes[t], targets, opt_states, cfg, t
            )
            if t >= cfg.burn_in:
                loss_total += losses * batch_n
                loss_denom += batch_n
            for l in range(num_l):
                spike_total[l] += float(layer_spikes[l].sum())
            neuron_steps += map_sizes * batch_n

    summary = EpochSummary(
        epoch=epoch,
        losses=loss_total / max(loss_denom, 1.0),
        spike_rates=spike_total / np.maximum(neuron_steps, 1.0),
        lr=cfg.lr,
    )
    if not quiet:
        print(summary.line(), file=sys.stdout)
    if log_path is not None:
        log_path = Path(log_path)
        if not log_path.exists():
            log_path.write_text(csv_header(num_l) + "\n")
        with log_path.open("a") as f:
            f.write(summary.csv_row() + "\n")
    return summary
