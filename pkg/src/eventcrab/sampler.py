"""Spike-driven temporal sampling of event streams.

A grid of leaky integrate-and-fire neurons with recurrent convolutional
input and decay (the spiking residual recurrent cell) watches the stream in
short micro-bins. Micro-bins in which a large enough share of the grid fires
become the cut points that split the stream into T' contextual slices,
which are then aggregated into a dense (H, W, T', C) voxel grid.

Two baselines share the same output contract: fixed sliding windows, and a
single scalar LIF neuron driven by the mean activity of each micro-bin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Module, Parameter, Tensor, no_grad, ops
from .events import ConfigError, EventStream, partition, polarity_counts, window_edges, window_index


@dataclass(frozen=True)
class LIFParams:
    tau_m: float = 2.0
    u_th: float = 1.0
    u_reset: float = 0.0

    def __post_init__(self):
        if not self.tau_m > 1:
            raise ConfigError(f"tau_m must exceed 1, got {self.tau_m}")
        if not self.u_th > self.u_reset:
            raise ConfigError("u_th must exceed u_reset")


@dataclass
class LIFState:
    """Pre-reset potential ``u``, post-reset potential ``v`` and last spikes ``s``."""

    u: Tensor
    v: Tensor
    s: Tensor

    @classmethod
    def zeros(cls, shape):
        z = np.zeros(shape)
        return cls(Tensor(z), Tensor(z), Tensor(z))


def fire_and_reset(u, u_th: float, u_reset: float, width: float = 1.0):
    s = ops.spike(u, u_th, width)
    v = ops.add(ops.mul(u, ops.sub(1.0, s)), ops.mul(s, u_reset))
    return s, v


def lif_step(params: LIFParams, state: LIFState, current, width: float = 1.0):
    """One leaky integrate-and-fire update; returns (spikes, new state)."""
    leak = 1.0 - 1.0 / params.tau_m
    u = ops.add(ops.mul(state.v, leak), ops.mul(current, 1.0 / params.tau_m))
    s, v = fire_and_reset(u, params.u_th, params.u_reset, width)
    return s, LIFState(u, v, s)


def rasterize_bins(stream: EventStream, n_bins: int, height: int, width: int) -> np.ndarray:
    """(n_bins, 2, height, width) polarity maps, each bin divided by its own max."""
    counts = polarity_counts(stream, n_bins, height, width)
    peak = counts.max(axis=(1, 2, 3), keepdims=True)
    return np.divide(counts, peak, out=np.zeros_like(counts), where=peak > 0)


# ------------------------------------------------------------------ SRRNN


@dataclass
class SRRNNState:
    v: Tensor
    s: Tensor
    current: Tensor

    @classmethod
    def zeros(cls, batch: int, height: int, width: int):
        z = np.zeros((batch, 1, height, width))
        return cls(Tensor(z), Tensor(z), Tensor(z))


class SRRNNCell(Module):
    """Spiking residual recurrent cell on an (H_s, W_s) grid.

    Per step, with ``*`` a same-padded 2-D convolution::

        I[t]     = W_ie * E[t] + W_is * s[t-1]
        gamma[t] = sigmoid(W_ge * E[t] + W_gs * s[t-1])
        u[t]     = gamma[t] v[t-1] + alpha I[t] + (1 - alpha) W_ui * I[t-1]

    followed by threshold / reset as in :func:`lif_step`.
    """

    def __init__(self, rng: np.random.Generator | None = None, kernel: int = 3, alpha: float = 0.5,
                 lif: LIFParams = LIFParams(), rho: float = 0.1, grid: tuple[int, int] = (32, 32),
                 init: str = "event", surrogate_width: float = 1.0):
        if not 0 <= alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if not 0 < rho < 1:
            raise ConfigError("rho must lie in (0, 1)")
        rng = np.random.default_rng(0) if rng is None else rng
        self.alpha, self.lif, self.rho, self.grid = alpha, lif, rho, tuple(grid)
        self.kernel, self.surrogate_width = kernel, surrogate_width
        k, c = kernel, kernel // 2
        shapes = {"w_ie": (1, 2, k, k), "w_is": (1, 1, k, k), "w_ui": (1, 1, k, k),
                  "w_ge": (1, 2, k, k), "w_gs": (1, 1, k, k)}
        if init == "zeros":
            w = {n: np.zeros(s) for n, s in shapes.items()}
        elif init == "random":
            w = {n: rng.normal(0.0, 0.3, size=s) for n, s in shapes.items()}
        elif init == "event":
            # a cell needs support from its neighbourhood to fire, so isolated
            # noise stays silent while coherent moving edges drive spikes
            w = {n: rng.normal(0.0, 0.02, size=s) for n, s in shapes.items()}
            w["w_ie"] += 0.5
            w["w_ui"][:, :, c, c] += 1.0
            w["w_ge"][:, :, c, c] += 2.0
            w["w_is"][:, :, c, c] -= 0.5
        else:
            raise ConfigError(f"unknown SRRNN init {init!r}")
        for name, value in w.items():
            setattr(self, name, Parameter(value))

    def set_weights(self, **kernels):
        for name, value in kernels.items():
            getattr(self, name).data = np.array(value, dtype=getattr(self, name).data.dtype).reshape(
                getattr(self, name).shape)

    def _stacked_kernel(self):
        top = ops.concat([self.w_ie, self.w_is], axis=1)
        bottom = ops.concat([self.w_ge, self.w_gs], axis=1)
        return ops.concat([top, bottom], axis=0)  # (2, 3, k, k)

    def step(self, state: SRRNNState, e_bin, kernel=None):
        """Advance one micro-bin. ``e_bin``: (B, 2, H, W). Returns (spikes, state)."""
        kernel = self._stacked_kernel() if kernel is None else kernel
        pad = self.kernel // 2
        z = ops.conv(ops.concat([e_bin, state.s], axis=1), kernel, padding=pad)
        current = z[:, 0:1]
        gamma = ops.sigmoid(z[:, 1:2])
        recur = ops.conv(state.current, self.w_ui, padding=pad)
        u = ops.add(ops.add(ops.mul(gamma, state.v), ops.mul(current, self.alpha)),
                    ops.mul(recur, 1.0 - self.alpha))
        s, v = fire_and_reset(u, self.lif.u_th, self.lif.u_reset, self.surrogate_width)
        return s, SRRNNState(v, s, current)

    def rollout(self, e_bins: np.ndarray) -> list[Tensor]:
        """Run over (B, T, 2, H, W) micro-bin maps; returns T spike maps (B, 1, H, W)."""
        B, T, _, H, W = e_bins.shape
        state = SRRNNState.zeros(B, H, W)
        kernel = self._stacked_kernel()
        spikes = []
        for t in range(T):
            s, state = self.step(state, e_bins[:, t], kernel)
            spikes.append(s)
        return spikes


def srrnn_step(cell: SRRNNCell, state: SRRNNState, e_bin):
    return cell.step(state, e_bin)


# ------------------------------------------------------------------ boundaries


@dataclass
class SampleTrace:
    """Cut points t^0..t^T' in microseconds, per-slice counts and retention."""

    boundaries: np.ndarray
    counts: np.ndarray
    retained_fraction: float
    spike_bins: list[int] = field(default_factory=list)
    fallback: bool = False

    def to_json(self) -> dict:
        return {"boundaries_us": [float(b) for b in self.boundaries], "counts": [int(c) for c in self.counts],
                "retained_fraction": float(self.retained_fraction), "spike_bins": [int(b) for b in self.spike_bins],
                "fallback": bool(self.fallback)}


def fill_boundaries(interior: list[float], n_slices: int, duration: float) -> np.ndarray:
    """Complete interior cuts to exactly n_slices - 1 by splitting the largest gap.

    The largest gap is cut uniformly into as many pieces as needed; with no
    interior cuts this is the uniform partition.
    """
    cuts = np.concatenate([[0.0], np.asarray(interior, dtype=np.float64), [float(duration)]])
    need = n_slices - len(cuts) + 1
    if need > 0:
        gaps = np.diff(cuts)
        g = int(np.argmax(gaps))
        lo, hi = cuts[g], cuts[g + 1]
        extra = lo + np.arange(1, need + 1, dtype=np.float64) * ((hi - lo) / (need + 1))
        cuts = np.sort(np.concatenate([cuts, extra]))
    return cuts


def boundaries_from_spike_bins(spike_bins, n_bins: int, n_slices: int, duration: float):
    """Turn global-spike micro-bins into cut points.

    A spike in micro-bin j cuts at that bin's right edge. Spikes in the last
    micro-bin are ignored (its edge is the end of the stream); only the first
    n_slices - 1 usable spikes count. Returns (boundaries, used_bins, fallback).
    """
    edges = window_edges(duration, n_bins)
    used = [int(j) for j in spike_bins if j < n_bins - 1][: n_slices - 1]
    bounds = fill_boundaries([edges[j + 1] for j in used], n_slices, duration)
    return bounds, used, len(used) < n_slices - 1


def global_spike_bins(spike_maps: np.ndarray, rho: float) -> list[int]:
    """Micro-bins whose spatial spike rate reaches rho. ``spike_maps``: (T, ...)."""
    rate = spike_maps.reshape(len(spike_maps), -1).mean(axis=1)
    return [int(j) for j in np.nonzero(rate >= rho)[0]]


def _check_config(n_slices, n_bins):
    if n_slices < 1:
        raise ConfigError("T' must be >= 1")
    if n_slices > n_bins:
        raise ConfigError(f"T'={n_slices} exceeds the number of micro-bins {n_bins}")


def retention_mask(stream: EventStream, boundaries, spike_maps: np.ndarray, used_bins) -> np.ndarray:
    """Which events the sampler keeps.

    An event is kept if its grid cell spiked in some micro-bin of its slice.
    A slice in which no event sits under a spiking cell keeps all its events,
    and so does the whole stream when no global spike fired.
    """
    n = len(stream)
    if n == 0 or not used_bins:
        return np.ones(n, dtype=bool)
    T, H, W = spike_maps.shape[0], spike_maps.shape[-2], spike_maps.shape[-1]
    maps = spike_maps.reshape(T, H, W) > 0
    bin_right = window_edges(stream.duration, T)[1:]
    slice_of_bin = window_index(bin_right, boundaries)
    n_slices = len(boundaries) - 1
    fired = np.zeros((n_slices, H, W), dtype=bool)
    np.logical_or.at(fired, slice_of_bin, maps)
    k = window_index(stream.t, boundaries)
    cx, cy = stream.x * W // stream.width, stream.y * H // stream.height
    hit = fired[k, cy, cx]
    silent = np.bincount(k, weights=hit, minlength=n_slices) == 0
    return hit | silent[k]


def scl_sample(stream: EventStream, cell: SRRNNCell, n_slices: int = 8, n_bins: int = 128):
    """Cut one stream with the spiking cell; returns (trace, slices)."""
    _check_config(n_slices, n_bins)
    H, W = cell.grid
    bins = rasterize_bins(stream, n_bins, H, W)
    with no_grad():
        spikes = np.stack([s.data[0] for s in cell.rollout(bins[None])])  # (T, 1, H, W)
    bounds, used, fallback = boundaries_from_spike_bins(global_spike_bins(spikes, cell.rho), n_bins, n_slices,
                                                        stream.duration)
    slices = partition(stream, bounds)
    keep = retention_mask(stream, bounds, spikes, used)
    frac = float(keep.mean()) if len(stream) else 1.0
    trace = SampleTrace(bounds, np.array([len(s) for s in slices]), frac, used, fallback)
    return trace, slices


def scl_retained(stream: EventStream, cell: SRRNNCell, n_slices: int = 8, n_bins: int = 128):
    """Like :func:`scl_sample` but also returns the per-event retention mask."""
    _check_config(n_slices, n_bins)
    H, W = cell.grid
    bins = rasterize_bins(stream, n_bins, H, W)
    with no_grad():
        spikes = np.stack([s.data[0] for s in cell.rollout(bins[None])])
    bounds, used, fallback = boundaries_from_spike_bins(global_spike_bins(spikes, cell.rho), n_bins, n_slices,
                                                        stream.duration)
    keep = retention_mask(stream, bounds, spikes, used)
    slices = partition(stream, bounds)
    frac = float(keep.mean()) if len(stream) else 1.0
    return SampleTrace(bounds, np.array([len(s) for s in slices]), frac, used, fallback), keep


def sliding_window_sample(stream: EventStream, n_slices: int = 8):
    bounds = window_edges(stream.duration, n_slices)
    slices = partition(stream, bounds)
    trace = SampleTrace(bounds, np.array([len(s) for s in slices]), 1.0, [], True)
    return trace, slices


def snn_drive(bins: np.ndarray) -> np.ndarray:
    """Scalar drive per micro-bin: spatial mean of the polarity-summed map."""
    return bins.sum(axis=1).reshape(len(bins), -1).mean(axis=1)


def snn_spike_bins(drive: np.ndarray, lif: LIFParams) -> list[int]:
    state = LIFState.zeros(())
    out = []
    with no_grad():
        for j, d in enumerate(drive):
            s, state = lif_step(lif, state, float(d))
            if s.data >= 1:
                out.append(j)
    return out


def vanilla_snn_sample(stream: EventStream, lif: LIFParams = LIFParams(), n_slices: int = 8, n_bins: int = 128,
                       grid: tuple[int, int] = (32, 32)):
    _check_config(n_slices, n_bins)
    drive = snn_drive(rasterize_bins(stream, n_bins, *grid))
    bounds, used, fallback = boundaries_from_spike_bins(snn_spike_bins(drive, lif), n_bins, n_slices,
                                                        stream.duration)
    slices = partition(stream, bounds)
    trace = SampleTrace(bounds, np.array([len(s) for s in slices]), 1.0, used, fallback)
    return trace, slices


# ------------------------------------------------------------------ aggregation


@dataclass(frozen=True, eq=False)
class ContextVoxelGrid:
    """(H, W, T', C) normalized polarity counts of the sampled slices."""

    data: np.ndarray

    @property
    def n_slices(self) -> int:
        return self.data.shape[2]


def _normalize_slices(counts: np.ndarray, mode: str) -> np.ndarray:
    if mode == "slice":
        peak = counts.max(axis=(1, 2, 3), keepdims=True)
    elif mode == "stream":
        peak = np.broadcast_to(counts.max(), (len(counts), 1, 1, 1))
    else:
        raise ConfigError(f"unknown normalization {mode!r}")
    return np.divide(counts, peak, out=np.zeros_like(counts), where=peak > 0)


def aggregate_context(slices: list[EventStream], height: int, width: int, channels: int = 2,
                      normalize: str = "slice") -> ContextVoxelGrid:
    """Stack slice k's polarity counts into E_c[:, :, k, :], normalized per slice."""
    if channels != 2:
        raise ConfigError("only the 2-channel polarity split is implemented")
    counts = np.concatenate([polarity_counts(s, 1, height, width, boundaries=[0.0, np.inf]) for s in slices])
    return ContextVoxelGrid(_normalize_slices(counts, normalize).transpose(2, 3, 0, 1).astype(np.float32))


def context_counts(stream: EventStream, boundaries, height: int, width: int, normalize: str = "slice") -> np.ndarray:
    """(T', 2, H, W) normalized slice counts straight from cut points (no slice objects)."""
    counts = polarity_counts(stream, len(boundaries) - 1, height, width, boundaries=boundaries)
    return _normalize_slices(counts, normalize)


# ------------------------------------------------------------------ batched, trainable path


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "scl"  # scl | sliding | snn
    n_slices: int = 8
    n_bins: int = 128
    grid: tuple[int, int] = (32, 32)
    context_hw: tuple[int, int] = (32, 32)
    kernel: int = 3
    alpha: float = 0.5
    rho: float = 0.1
    tau_m: float = 2.0
    u_th: float = 1.0
    u_reset: float = 0.0
    normalize: str = "slice"
    trainable: bool = True
    init: str = "event"

    def validate(self):
        if self.mode not in ("scl", "sliding", "snn"):
            raise ConfigError(f"unknown sampler mode {self.mode!r}")
        _check_config(self.n_slices, self.n_bins)
        ch, cw = self.context_hw
        if ch % self.grid[0] or cw % self.grid[1]:
            raise ConfigError("context grid must be an integer multiple of the sampler grid")
        LIFParams(self.tau_m, self.u_th, self.u_reset)
        return self

    @property
    def lif(self) -> LIFParams:
        return LIFParams(self.tau_m, self.u_th, self.u_reset)

    def make_cell(self, rng=None) -> SRRNNCell:
        return SRRNNCell(rng, self.kernel, self.alpha, self.lif, self.rho, self.grid, self.init)


@dataclass
class BatchSample:
    """Context grids for a batch as a (B, 2, T', H, W) tensor plus per-stream traces."""

    context: Tensor
    traces: list[SampleTrace]


def _slice_rates(spikes: list[Tensor], bounds_per_stream, duration_per_stream, n_slices):
    """Per-slice firing rate of every sampler cell, (B, T', Hs, Ws), differentiable."""
    B = len(bounds_per_stream)
    T = len(spikes)
    member = np.zeros((B, n_slices, T))
    for i, (bounds, dur) in enumerate(zip(bounds_per_stream, duration_per_stream)):
        k = window_index(window_edges(dur, T)[1:], bounds)
        member[i, k, np.arange(T)] = 1.0
    member /= np.maximum(member.sum(axis=2, keepdims=True), 1.0)
    S = ops.stack(spikes, axis=1)  # (B, T, 1, Hs, Ws)
    _, _, _, Hs, Ws = S.shape
    flat = ops.reshape(S, (B, T, Hs * Ws))
    return ops.reshape(ops.matmul(member, flat), (B, n_slices, Hs, Ws))


def sample_batch(streams: list[EventStream], cfg: SamplerConfig, cell: SRRNNCell | None = None,
                 bins: np.ndarray | None = None) -> BatchSample:
    """Sample every stream and aggregate the slices into context grids.

    In ``scl`` mode with a trainable cell, the context grid is multiplied by
    ``1 + r - stop_grad(r)`` where ``r`` is each cell's firing rate inside
    the slice. The forward value is unchanged while the loss gradient reaches
    the recurrent kernels through the surrogate spike derivative.
    ``bins`` may hold the streams' precomputed :func:`rasterize_bins` maps.
    """
    n, T = cfg.n_slices, cfg.n_bins
    H, W = cfg.context_hw
    traces, spikes = [], None
    if cfg.mode == "sliding":
        traces = [sliding_window_sample(s, n)[0] for s in streams]
    elif cfg.mode == "snn":
        traces = [vanilla_snn_sample(s, cfg.lif, n, T, cfg.grid)[0] for s in streams]
    else:
        if cell is None:
            raise ConfigError("scl mode needs an SRRNN cell")
        if bins is None:
            bins = np.stack([rasterize_bins(s, T, *cfg.grid) for s in streams])
        if cfg.trainable:
            spikes = cell.rollout(bins)
        else:
            with no_grad():
                spikes = cell.rollout(bins)
        maps = np.stack([sp.data for sp in spikes], axis=1)  # (B, T, 1, Hs, Ws)
        for s, m in zip(streams, maps):
            bounds, used, fallback = boundaries_from_spike_bins(global_spike_bins(m, cell.rho), T, n, s.duration)
            keep = retention_mask(s, bounds, m, used)
            counts = np.bincount(window_index(s.t, bounds), minlength=n)
            traces.append(SampleTrace(bounds, counts, float(keep.mean()) if len(s) else 1.0, used, fallback))
    ctx = np.stack([context_counts(s, tr.boundaries, H, W, cfg.normalize) for s, tr in zip(streams, traces)])
    ctx = ctx.transpose(0, 2, 1, 3, 4)  # (B, 2, T', H, W)
    context = Tensor(ctx)
    if spikes is not None and cfg.trainable:
        rate = _slice_rates(spikes, [t.boundaries for t in traces], [s.duration for s in streams], n)
        fy, fx = H // cfg.grid[0], W // cfg.grid[1]
        if fy > 1 or fx > 1:
            rate = ops.take(ops.take(rate, np.repeat(np.arange(cfg.grid[0]), fy), 2),
                            np.repeat(np.arange(cfg.grid[1]), fx), 3)
        gate = ops.add(ops.sub(rate, rate.detach()), 1.0)  # (B, T', H, W), exactly 1 in value
        context = ops.mul(context, ops.reshape(gate, (len(streams), 1, n, H, W)))
    return BatchSample(context, traces)
