"""Synthesize a few event streams and compare three ways of cutting them into slices.

Run: python tutorials/01_events_and_sampling.py
"""
import numpy as np

from eventcrab.events import MOTIFS, SynthConfig, synth_generate
from eventcrab.sampler import SRRNNCell, scl_sample, sliding_window_sample, vanilla_snn_sample

# A small dataset: 4 motifs, 2 recordings each, 64x64 sensor, 100 ms each.
cfg = SynthConfig(num_classes=4, samples_per_class=2, seed=0)
streams = synth_generate(cfg)
print(f"{len(streams)} streams, motifs {MOTIFS[:4]}")
first = streams[0]
print(f"stream 0: {len(first)} events over {first.duration} us, label {first.label}")

# Fixed windows split time uniformly and keep every event.
trace, slices = sliding_window_sample(first, n_slices=8)
print("sliding window counts:", trace.counts.tolist())

# A single leaky integrate-and-fire neuron on the global event rate places cuts where activity bursts.
# If it fires too rarely to fill the slices, it falls back to uniform windows.
trace, slices = vanilla_snn_sample(first, n_slices=8, n_bins=64)
print("scalar LIF counts:    ", trace.counts.tolist(), "fallback" if trace.fallback else "")

# The convolutional spiking recurrent cell cuts at bins where enough of the map spikes,
# and drops events that fall on pixels that never fired.
cell = SRRNNCell(np.random.default_rng(0), grid=(32, 32), rho=0.04)
trace, slices = scl_sample(first, cell, n_slices=8, n_bins=64)
print("spiking cell counts:  ", trace.counts.tolist())
print(f"boundaries (us): {np.round(trace.boundaries).astype(int).tolist()}")
print(f"retained fraction: {trace.retained_fraction:.3f}")
