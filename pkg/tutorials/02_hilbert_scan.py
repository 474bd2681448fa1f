"""Serialize a 3-D token grid with a Hilbert curve and compare its locality with raster order.

Run: python tutorials/02_hilbert_scan.py
"""
import numpy as np

from eventcrab.hilbert import GridDims, build_scan_order, hilbert_decode, hilbert_encode, mean_step_distance, raster_order

# Encoding and decoding are inverse maps between 3-D cells and curve positions.
cells = np.array([[0, 0, 0], [3, 1, 2], [7, 7, 7]])
idx = hilbert_encode(cells, bits=3)
print("indices:", idx.tolist(), "decoded back:", hilbert_decode(idx, bits=3, dims=3).tolist())

# On a power-of-two cube every step of the curve moves to a face neighbour.
grid = GridDims(8, 8, 8)
hil, ras = build_scan_order(grid), raster_order(grid)
print(f"mean step distance on 8^3: hilbert {mean_step_distance(hil):.2f}, raster {mean_step_distance(ras):.2f}")

# Token grids of other shapes keep the curve order restricted to the box.
grid = GridDims(8, 8, 4)
order = build_scan_order(grid)
print(f"8x8x4 grid: {len(order)} tokens, first cells {order.cells[:4].tolist()}")
print("token positions in t-major layout:", order.token_index()[:8].tolist())
