"""Hilbert curves over 3-D (x, y, t) patch grids.

The transform is Skilling's "transpose" formulation (Programming the
Hilbert curve, AIP Conf. Proc. 707, 2004), vectorized over numpy arrays of
points. Grids whose sides are not equal powers of two are handled by
enumerating the enclosing 2^b cube and dropping cells outside the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


def _axes_to_transpose(X: list[np.ndarray], bits: int) -> list[np.ndarray]:
    n = len(X)
    X = [x.copy() for x in X]
    Q = 1 << (bits - 1)
    while Q > 1:
        P = Q - 1
        for i in range(n):
            hit = (X[i] & Q) != 0
            t = np.where(hit, 0, (X[0] ^ X[i]) & P)
            X[0] = np.where(hit, X[0] ^ P, X[0] ^ t)
            if i:
                X[i] = X[i] ^ t
        Q >>= 1
    for i in range(1, n):
        X[i] = X[i] ^ X[i - 1]
    t = np.zeros_like(X[0])
    Q = 1 << (bits - 1)
    while Q > 1:
        t = np.where((X[n - 1] & Q) != 0, t ^ (Q - 1), t)
        Q >>= 1
    return [x ^ t for x in X]


def _transpose_to_axes(X: list[np.ndarray], bits: int) -> list[np.ndarray]:
    n = len(X)
    X = [x.copy() for x in X]
    N = 2 << (bits - 1)
    t = X[n - 1] >> 1
    for i in range(n - 1, 0, -1):
        X[i] = X[i] ^ X[i - 1]
    X[0] = X[0] ^ t
    Q = 2
    while Q != N:
        P = Q - 1
        for i in range(n - 1, -1, -1):
            hit = (X[i] & Q) != 0
            t = np.where(hit, 0, (X[0] ^ X[i]) & P)
            X[0] = np.where(hit, X[0] ^ P, X[0] ^ t)
            if i:
                X[i] = X[i] ^ t
        Q <<= 1
    return X


def hilbert_encode(coords, bits: int) -> np.ndarray:
    """Hilbert index of integer points.

    Parameters
    ----------
    coords : (..., d) int array
        Each coordinate must lie in [0, 2**bits).
    bits : int
        Curve order.

    Returns
    -------
    (...,) int64 array of indices in [0, 2**(d * bits)).
    """
    c = np.asarray(coords, dtype=np.int64)
    d = c.shape[-1]
    if bits < 0 or d * bits > 62:
        raise ValueError(f"unsupported order: {d} dims x {bits} bits")
    if (c < 0).any() or (c >= (1 << bits)).any():
        raise ValueError(f"coordinate outside [0, {1 << bits})")
    if bits == 0:
        return np.zeros(c.shape[:-1], dtype=np.int64)
    X = _axes_to_transpose([c[..., i] for i in range(d)], bits)
    h = np.zeros(c.shape[:-1], dtype=np.int64)
    for j in range(bits - 1, -1, -1):
        for i in range(d):
            h = (h << 1) | ((X[i] >> j) & 1)
    return h


def hilbert_decode(index, bits: int, dims: int = 3) -> np.ndarray:
    """Inverse of :func:`hilbert_encode`; returns (..., dims) coordinates."""
    h = np.asarray(index, dtype=np.int64)
    if bits == 0:
        if (h != 0).any():
            raise ValueError("order-0 curve has a single cell")
        return np.zeros(h.shape + (dims,), dtype=np.int64)
    if (h < 0).any() or (h >= (1 << (dims * bits))).any():
        raise ValueError(f"index outside [0, {1 << (dims * bits)})")
    X = [np.zeros_like(h) for _ in range(dims)]
    pos = dims * bits - 1
    for j in range(bits - 1, -1, -1):
        for i in range(dims):
            X[i] = X[i] | (((h >> pos) & 1) << j)
            pos -= 1
    return np.stack(_transpose_to_axes(X, bits), axis=-1)


@dataclass(frozen=True)
class GridDims:
    nx: int
    ny: int
    nt: int

    def __post_init__(self):
        if min(self.nx, self.ny, self.nt) < 1:
            raise ValueError(f"grid extents must be >= 1, got {self}")

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nt


@dataclass(frozen=True, eq=False)
class ScanOrder:
    """Cells of a grid in visiting order, as an (n, 3) array of (x, y, t)."""

    cells: np.ndarray
    dims: GridDims
    direction: str = "forward"

    def __len__(self):
        return len(self.cells)

    def token_index(self) -> np.ndarray:
        """Positions in a t-major token layout, ``t * nx * ny + y * nx + x``."""
        x, y, t = self.cells.T
        return t * (self.dims.nx * self.dims.ny) + y * self.dims.nx + x


@lru_cache(maxsize=64)
def _forward_cells(nx: int, ny: int, nt: int) -> np.ndarray:
    bits = math.ceil(math.log2(max(nx, ny, nt))) if max(nx, ny, nt) > 1 else 0
    cells = hilbert_decode(np.arange(1 << (3 * bits), dtype=np.int64), bits, 3)
    keep = (cells[:, 0] < nx) & (cells[:, 1] < ny) & (cells[:, 2] < nt)
    out = cells[keep]
    out.setflags(write=False)
    return out


def build_scan_order(dims: GridDims) -> ScanOrder:
    return ScanOrder(_forward_cells(dims.nx, dims.ny, dims.nt), dims, "forward")


def reverse_order(order: ScanOrder) -> ScanOrder:
    flipped = "backward" if order.direction == "forward" else "forward"
    cells = order.cells[::-1].copy()
    cells.setflags(write=False)
    return ScanOrder(cells, order.dims, flipped)


def raster_order(dims: GridDims) -> ScanOrder:
    t, y, x = np.meshgrid(np.arange(dims.nt), np.arange(dims.ny), np.arange(dims.nx), indexing="ij")
    return ScanOrder(np.stack([x.ravel(), y.ravel(), t.ravel()], axis=1), dims, "raster")


def mean_step_distance(order: ScanOrder) -> float:
    """Mean Manhattan distance between consecutive cells (lower = more local)."""
    if len(order) < 2:
        return 0.0
    return float(np.abs(np.diff(order.cells, axis=0)).sum(axis=1).mean())


def scan_order_csv(order: ScanOrder) -> str:
    lines = ["index,x,y,t"]
    lines += [f"{i},{x},{y},{t}" for i, (x, y, t) in enumerate(order.cells)]
    return "\n".join(lines) + "\n"
