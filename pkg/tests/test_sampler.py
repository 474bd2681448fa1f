import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventcrab.autodiff import Tensor, backward, finite_diff_check, ops, surrogate_forward
from eventcrab.events import ConfigError, Event, EventStream, partition, window_edges
from eventcrab.sampler import (
    LIFParams,
    LIFState,
    SamplerConfig,
    SRRNNCell,
    SRRNNState,
    aggregate_context,
    boundaries_from_spike_bins,
    context_counts,
    fill_boundaries,
    lif_step,
    rasterize_bins,
    retention_mask,
    sample_batch,
    scl_retained,
    scl_sample,
    sliding_window_sample,
    snn_drive,
    snn_spike_bins,
    srrnn_step,
    vanilla_snn_sample,
)

LIF = LIFParams(2.0, 1.0, 0.0)


def delta(channels=2, k=3, gain=1.0, on=(0, 1)):
    w = np.zeros((1, channels, k, k))
    for c in on:
        w[0, c, k // 2, k // 2] = gain
    return w


def zero_cell(grid=(4, 4), alpha=0.5, rho=0.1):
    return SRRNNCell(alpha=alpha, rho=rho, grid=grid, init="zeros")


# ---------------------------------------------------------------- LIF

def _lif(v, i):
    s, st_ = lif_step(LIF, LIFState(Tensor(v), Tensor(v), Tensor(0.0)), Tensor(i))
    return float(st_.u.data), float(s.data), float(st_.v.data)


def test_lif_zero_input_stays_at_rest(f64):
    assert _lif(0.0, 0.0) == (0.0, 0.0, 0.0)


def test_lif_fires_exactly_at_threshold(f64):
    assert _lif(0.0, 2.0) == (1.0, 1.0, 0.0)


def test_lif_constant_unit_input_approaches_threshold_from_below(f64):
    state = LIFState.zeros(())
    us = []
    for _ in range(3):
        s, state = lif_step(LIF, state, Tensor(1.0))
        us.append(float(state.u.data))
        assert s.data == 0
    assert us == [0.5, 0.75, 0.875]


def test_lif_params_validated():
    with pytest.raises(ConfigError):
        LIFParams(tau_m=1.0)
    with pytest.raises(ConfigError):
        LIFParams(u_th=0.0, u_reset=0.5)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_lif_reset_rule(v, i):
    s, state = lif_step(LIF, LIFState(Tensor(v), Tensor(v), Tensor(np.zeros(4))), Tensor(i))
    assert set(np.unique(s.data)) <= {0.0, 1.0}
    np.testing.assert_array_equal(state.v.data, np.where(s.data == 1, 0.0, state.u.data))


# ---------------------------------------------------------------- SRRNN

def test_zero_kernels_never_spike_and_halve_potential(f64, rng):
    cell = zero_cell()
    state = SRRNNState(Tensor(rng.uniform(0, 0.9, (1, 1, 4, 4))), Tensor(np.zeros((1, 1, 4, 4))),
                       Tensor(np.zeros((1, 1, 4, 4))))
    v0 = state.v.data.copy()
    for _ in range(4):
        s, new = srrnn_step(cell, state, Tensor(rng.uniform(0, 1, (1, 2, 4, 4))))
        assert not s.data.any()
        np.testing.assert_array_equal(new.v.data, 0.5 * state.v.data)
        state = new
    np.testing.assert_array_equal(state.v.data, v0 / 16)


def test_identity_input_kernel_spikes_every_step(f64):
    # hand recurrence: u[t] = 0.5 * v[t-1] + 2 with v reset to 0 after each spike, so u = 2 at every step
    cell = zero_cell(alpha=1.0)
    cell.set_weights(w_ie=delta(on=(0,)))
    e = np.zeros((1, 2, 4, 4))
    e[:, 0] = 2.0
    state = SRRNNState.zeros(1, 4, 4)
    for _ in range(6):
        s, state = cell.step(state, Tensor(e))
        np.testing.assert_array_equal(state.v.data, 0.0)
        assert s.data.all()


def _oracle_srrnn(w, alpha, E):
    """Scalar per-pixel loop evaluating the recurrence with explicit 3x3 neighbourhoods."""
    T, _, H, W = E.shape
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))  # noqa: E731

    def conv(img, k):
        out = np.zeros((H, W))
        for y in range(H):
            for x in range(W):
                for c in range(img.shape[0]):
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            yy, xx = y + dy, x + dx
                            if 0 <= yy < H and 0 <= xx < W:
                                out[y, x] += k[0, c, dy + 1, dx + 1] * img[c, yy, xx]
        return out

    v = np.zeros((H, W))
    s = np.zeros((H, W))
    i_prev = np.zeros((H, W))
    spikes = []
    for t in range(T):
        cur = conv(E[t], w["w_ie"]) + conv(s[None], w["w_is"])
        gam = sig(conv(E[t], w["w_ge"]) + conv(s[None], w["w_gs"]))
        u = gam * v + alpha * cur + (1 - alpha) * conv(i_prev[None], w["w_ui"])
        s = (u >= 1.0).astype(float)
        v = u * (1 - s)
        i_prev = cur
        spikes.append(s)
    return np.array(spikes)


def test_rollout_matches_scalar_oracle(f64, rng):
    cell = SRRNNCell(rng, grid=(5, 6), init="random")
    w = {n: getattr(cell, n).data for n in ("w_ie", "w_is", "w_ui", "w_ge", "w_gs")}
    E = rng.uniform(0, 1.5, (7, 2, 5, 6))
    got = np.stack([s.data[0, 0] for s in cell.rollout(E[None])])
    want = _oracle_srrnn(w, cell.alpha, E)
    np.testing.assert_array_equal(got, want)
    assert want.any() and not want.all()


def test_reduces_to_per_pixel_lif(f64, rng):
    cell = zero_cell(alpha=1.0, grid=(3, 3))
    cell.set_weights(w_ie=delta(on=(0,)))
    state, lif_state = SRRNNState.zeros(1, 3, 3), LIFState.zeros((1, 1, 3, 3))
    for _ in range(10):
        e = np.zeros((1, 2, 3, 3))
        e[:, 0] = rng.uniform(0, 1.2, (1, 3, 3))
        s, state = cell.step(state, Tensor(e))
        # effective leak sigmoid(0) = 1 - 1 / tau_m with tau_m = 2; LIF scales its input by 1 / tau_m
        s2, lif_state = lif_step(LIF, lif_state, Tensor(2 * e[:, :1]))
        np.testing.assert_array_equal(s.data, s2.data)
        np.testing.assert_array_equal(state.v.data, lif_state.v.data)


def test_five_step_rollout_gradient_matches_finite_differences(f64, rng):
    cell = SRRNNCell(rng, grid=(4, 4), init="random")
    E = rng.uniform(0, 1, (1, 5, 2, 4, 4))
    readout = rng.normal(size=(5, 1, 1, 4, 4))

    def loss():
        spikes = cell.rollout(E)
        return ops.sum(ops.mul(ops.stack(spikes, axis=0), readout))

    with surrogate_forward():
        report = finite_diff_check(loss, cell.parameters(), h=1e-5)
    assert report.max_rel_error < 1e-5


def test_cell_config_validation():
    with pytest.raises(ConfigError):
        SRRNNCell(alpha=1.5)
    with pytest.raises(ConfigError):
        SRRNNCell(rho=1.0)
    with pytest.raises(ConfigError):
        SRRNNCell(init="nope")


# ---------------------------------------------------------------- binning and boundaries

def test_rasterize_empty_and_single_event():
    empty = EventStream.from_columns([], [], [], [], 16, 16, 100)
    assert not rasterize_bins(empty, 5, 8, 8).any()
    s = EventStream.from_events([Event(9, 5, -1, 42)], 16, 16, 100)
    bins = rasterize_bins(s, 5, 8, 8)
    assert bins.shape == (5, 2, 8, 8)
    assert bins[2, 1, 2, 4] == 1 and bins.sum() == 1


def test_fill_rule_and_over_firing():
    np.testing.assert_array_equal(fill_boundaries([], 4, 1000), [0, 250, 500, 750, 1000])
    np.testing.assert_array_equal(fill_boundaries([100], 3, 1000), [0, 100, 550, 1000])
    b, used, fb = boundaries_from_spike_bins([0, 1, 2, 3, 4, 5], 10, 3, 100)
    np.testing.assert_array_equal(b, [0, 10, 20, 100])
    assert used == [0, 1] and not fb
    b, used, fb = boundaries_from_spike_bins([9], 10, 2, 100)  # last bin has no interior right edge
    assert used == [] and fb
    np.testing.assert_array_equal(b, [0, 50, 100])


def test_silent_cell_falls_back_to_sliding_window(rng):
    s = _random_stream(rng, 300, 16, 16, 1000)
    cell = zero_cell(grid=(8, 8))
    trace, slices = scl_sample(s, cell, 4, 16)
    ref, ref_slices = sliding_window_sample(s, 4)
    np.testing.assert_array_equal(trace.boundaries, [0, 250, 500, 750, 1000])
    np.testing.assert_array_equal(trace.boundaries, ref.boundaries)
    assert trace.fallback and trace.retained_fraction == 1.0
    assert all(a.same_events(b) for a, b in zip(slices, ref_slices))


def test_single_slice_is_whole_stream(rng):
    s = _random_stream(rng, 100, 16, 16, 500)
    trace, slices = scl_sample(s, SRRNNCell(grid=(8, 8)), 1, 8)
    assert len(slices) == 1 and slices[0].same_events(s)
    np.testing.assert_array_equal(trace.boundaries, [0, 500])


def test_more_slices_than_micro_bins_is_rejected(rng):
    s = _random_stream(rng, 10, 8, 8, 100)
    with pytest.raises(ConfigError):
        scl_sample(s, SRRNNCell(grid=(4, 4)), 9, 8)
    with pytest.raises(ConfigError):
        vanilla_snn_sample(s, LIF, 9, 8)


def _burst_stream(rng, duration=16_000, grid=8, sensor=16, n_bins=32):
    """Dense events over the whole sensor inside micro-bins 8..9, nothing elsewhere."""
    width = duration / n_bins
    t0, t1 = 8 * width + 1, 10 * width - 1
    n = 2000
    return EventStream.from_columns(rng.integers(t0, t1, n), rng.integers(0, sensor, n),
                                    rng.integers(0, sensor, n), rng.choice([-1, 1], n), sensor, sensor, duration)


def test_burst_sets_first_boundary_inside_burst(rng):
    s = _burst_stream(rng)
    cell = zero_cell(grid=(8, 8), alpha=1.0, rho=0.5)
    cell.set_weights(w_ie=delta())
    # independent oracle: bin by hand, run u = 0.5 v + I per pixel with I = E_pos + E_neg
    edges = window_edges(s.duration, 32)
    k = np.clip(np.searchsorted(edges[1:-1], s.t, side="left"), 0, 31)
    counts = np.zeros((32, 2, 8, 8))
    np.add.at(counts, (k, (s.p < 0).astype(int), s.y // 2, s.x // 2), 1)
    peak = counts.reshape(32, -1).max(axis=1)[:, None, None, None]
    E = np.divide(counts, peak, out=np.zeros_like(counts), where=peak > 0)
    v = np.zeros((8, 8))
    first = None
    for t in range(32):
        u = 0.5 * v + E[t].sum(axis=0)
        fired = u >= 1
        v = np.where(fired, 0.0, u)
        if fired.mean() >= 0.5 and first is None:
            first = t
    assert first in (8, 9)
    trace, _ = scl_sample(s, cell, 4, 32)
    assert trace.spike_bins[0] == first
    assert edges[8] < trace.boundaries[1] <= edges[10]


def test_sliding_window_arithmetic():
    s = EventStream.from_columns([0, 250, 251, 1000], [0] * 4, [0] * 4, [1] * 4, 4, 4, 1000)
    trace, slices = sliding_window_sample(s, 4)
    np.testing.assert_array_equal(trace.boundaries, [0, 250, 500, 750, 1000])
    assert [len(x) for x in slices] == [2, 1, 0, 1]


def test_vanilla_snn_constant_drive_spikes_every_bin():
    assert snn_spike_bins(np.full(10, 2.0), LIF) == list(range(10))
    bounds, _, fb = boundaries_from_spike_bins(list(range(10)), 10, 4, 1000)
    np.testing.assert_array_equal(bounds, [0, 100, 200, 300, 1000])
    assert not fb


def test_vanilla_snn_zero_stream_is_uniform():
    s = EventStream.from_columns([], [], [], [], 8, 8, 800)
    trace, _ = vanilla_snn_sample(s, LIF, 4, 16, (4, 4))
    np.testing.assert_array_equal(trace.boundaries, [0, 200, 400, 600, 800])


def _uniform_activity_stream(rng, active_bins, n_bins=16, grid=4, duration=1600):
    """Every sampler cell receives the same number of events in each active micro-bin."""
    width = duration // n_bins
    t, x, y, p = [], [], [], []
    for b in active_bins:
        reps = rng.integers(1, 3)
        for cy in range(grid):
            for cx in range(grid):
                for _ in range(reps):
                    t.append(b * width + 1 + rng.integers(0, width - 2))
                    x.append(cx)
                    y.append(cy)
                    p.append(1)
    return EventStream.from_columns(t, x, y, p, grid, grid, duration)


@pytest.mark.parametrize("seed", range(5))
def test_degenerate_cell_reproduces_vanilla_snn_boundaries(seed):
    rng = np.random.default_rng(seed)
    active = sorted(rng.choice(16, size=rng.integers(2, 12), replace=False).tolist())
    s = _uniform_activity_stream(rng, active)
    cell = zero_cell(grid=(4, 4), alpha=1.0, rho=0.5)
    cell.set_weights(w_ie=delta(gain=1.0 / LIF.tau_m))
    scl, _ = scl_sample(s, cell, 5, 16)
    snn, _ = vanilla_snn_sample(s, LIF, 5, 16, (4, 4))
    np.testing.assert_array_equal(scl.boundaries, snn.boundaries)
    assert scl.spike_bins == snn.spike_bins


def test_snn_drive_is_spatial_mean_of_polarity_sum():
    bins = np.zeros((2, 2, 2, 2))
    bins[0, 0, 0, 0] = 1.0
    bins[0, 1, 1, 1] = 0.5
    np.testing.assert_allclose(snn_drive(bins), [0.375, 0.0])


# ---------------------------------------------------------------- aggregation and retention

def test_aggregate_empty_and_single_event():
    empty = EventStream.from_columns([], [], [], [], 8, 8, 10)
    assert not aggregate_context([empty] * 3, 8, 8).data.any()
    one = EventStream.from_events([Event(3, 4, -1, 5)], 8, 8, 10)
    grid = aggregate_context([empty, empty, one, empty], 8, 8).data
    assert grid.shape == (8, 8, 4, 2)
    assert grid[4, 3, 2, 1] == 1 and grid.sum() == 1


def test_retention_keeps_events_under_spiking_cells():
    s = EventStream.from_columns([10, 20, 60, 70], [0, 3, 0, 3], [0, 0, 0, 0], [1, 1, 1, 1], 4, 4, 100)
    spikes = np.zeros((4, 1, 4, 4))
    spikes[0, 0, 0, 0] = 1  # slice 0, cell (0, 0)
    bounds = np.array([0.0, 25.0, 100.0])
    keep = retention_mask(s, bounds, spikes, [0])
    # slice 1 has no event under a spiking cell and keeps everything
    np.testing.assert_array_equal(keep, [True, False, True, True])


def test_sample_batch_context_value_is_unchanged_and_gradient_reaches_cell(f64, rng):
    cfg = SamplerConfig(n_slices=4, n_bins=16, grid=(8, 8), context_hw=(16, 16), rho=0.02).validate()
    cell = cfg.make_cell(rng)
    streams = [_burst_stream(rng, sensor=16, n_bins=16, grid=8) for _ in range(2)]
    out = sample_batch(streams, cfg, cell)
    ref = np.stack([context_counts(s, tr.boundaries, 16, 16) for s, tr in zip(streams, out.traces)])
    np.testing.assert_array_equal(out.context.data, ref.transpose(0, 2, 1, 3, 4))
    backward(ops.sum(ops.mul(out.context, rng.normal(size=out.context.shape))))
    assert any(np.abs(p.grad).sum() > 0 for p in cell.parameters())
    frozen = SamplerConfig(n_slices=4, n_bins=16, grid=(8, 8), context_hw=(16, 16), trainable=False)
    assert not sample_batch(streams, frozen, cell).context.requires_grad


@pytest.mark.parametrize("mode", ["sliding", "snn"])
def test_baseline_modes_in_batch(mode, rng):
    cfg = SamplerConfig(mode=mode, n_slices=4, n_bins=16, grid=(8, 8), context_hw=(8, 8))
    streams = [_random_stream(rng, 50, 16, 16, 400)]
    out = sample_batch(streams, cfg)
    assert out.context.shape == (1, 2, 4, 8, 8) and out.traces[0].retained_fraction == 1.0


def test_config_validation():
    with pytest.raises(ConfigError):
        SamplerConfig(mode="x").validate()
    with pytest.raises(ConfigError):
        SamplerConfig(grid=(32, 32), context_hw=(48, 48)).validate()


# ---------------------------------------------------------------- properties

def _random_stream(rng, n, h, w, duration):
    return EventStream.from_columns(rng.integers(0, duration + 1, n), rng.integers(0, w, n), rng.integers(0, h, n),
                                    rng.choice([-1, 1], n), h, w, duration)


_PROP_CELL = SRRNNCell(np.random.default_rng(3), grid=(4, 4), rho=0.1, init="event")


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 150), st.integers(1, 8), st.integers(1, 5_000))
def test_sampler_invariants(seed, n, n_slices, duration):
    rng = np.random.default_rng(seed)
    s = _random_stream(rng, n, 8, 8, duration)
    trace, keep = scl_retained(s, _PROP_CELL, n_slices, 8)
    b = trace.boundaries
    assert b[0] == 0 and b[-1] == duration and (np.diff(b) > 0).all()
    slices = partition(s, b)
    assert sum(len(x) for x in slices) == len(s) == trace.counts.sum()
    assert 0 < trace.retained_fraction <= 1
    if trace.fallback and not trace.spike_bins:
        assert trace.retained_fraction == 1.0
    grid = aggregate_context(slices, 8, 8).data
    assert grid.shape == (8, 8, n_slices, 2) and grid.min() >= 0 and grid.max() <= 1
    spikes = _PROP_CELL.rollout(rasterize_bins(s, 8, 4, 4)[None])
    assert all(set(np.unique(x.data)) <= {0.0, 1.0} for x in spikes)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sampling_is_deterministic(seed):
    rng = np.random.default_rng(seed)
    s = _random_stream(rng, 200, 16, 16, 2000)
    a, _ = scl_sample(s, _PROP_CELL, 4, 8)
    b, _ = scl_sample(s, _PROP_CELL, 4, 8)
    assert a.to_json() == b.to_json()
