"""Point-branch encoder: context grid -> Hilbert-ordered tokens -> spiking Mamba blocks.

Tokens are non-overlapping spatial patches of every slice of the context
grid. They are read in a 3-D Hilbert order over (x, y, slice) and again in
the reversed order; both passes share one stack of blocks. Each block is a
spiking selective-SSM mixer with a residual connection followed by a
spiking point-wise / group-wise convolution stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Module, Parameter, ShapeError, Tensor, no_grad, ops
from .autodiff.nn import Linear
from .events import ConfigError
from .hilbert import GridDims, build_scan_order, raster_order, reverse_order


@dataclass(frozen=True)
class SurrogateSpike:
    threshold: float = 1.0
    width: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ConfigError("surrogate width must be positive")

    def __call__(self, x):
        return ops.spike(x, self.threshold, self.width)


def spike_sn(x, sg: SurrogateSpike = SurrogateSpike()):
    return sg(x)


@dataclass(frozen=True)
class PointEncoderConfig:
    in_channels: int = 2
    height: int = 32
    width: int = 32
    n_slices: int = 8
    patch: int = 8
    dim: int = 64
    depth: int = 2
    state: int = 8
    expand: int = 2
    conv_width: int = 4
    spgc_ratio: int = 2
    spgc_groups: int = 8
    spgc_kernel: int = 3
    threshold: float = 1.0
    surrogate_width: float = 1.0
    scan_mode: str = "sequential"
    order: str = "hilbert"  # hilbert | raster
    bidirectional: bool = True
    embed_gain: float = 1.0

    @property
    def grid(self) -> GridDims:
        return GridDims(math.ceil(self.width / self.patch), math.ceil(self.height / self.patch), self.n_slices)

    @property
    def inner(self) -> int:
        return self.expand * self.dim

    @property
    def dt_rank(self) -> int:
        return math.ceil(self.dim / 16)

    def validate(self):
        if (self.spgc_ratio * self.dim) % self.spgc_groups:
            raise ConfigError(f"r*D = {self.spgc_ratio * self.dim} not divisible by {self.spgc_groups} groups")
        if self.scan_mode not in ("sequential", "parallel"):
            raise ConfigError(f"unknown scan mode {self.scan_mode!r}")
        if self.order not in ("hilbert", "raster"):
            raise ConfigError(f"unknown token order {self.order!r}")
        if min(self.dim, self.depth + 1, self.state, self.patch, self.n_slices) < 1:
            raise ConfigError("encoder sizes must be positive")
        return self


class PatchEmbed(Module):
    """(B, C, T', H, W) -> (B, T' * L, D); equivalent to a 3-D conv with kernel = stride = (1, P, P)."""

    def __init__(self, cfg: PointEncoderConfig, rng):
        fan_in = cfg.in_channels * cfg.patch * cfg.patch
        self.weight = Parameter(rng.normal(0.0, cfg.embed_gain / math.sqrt(fan_in),
                                           size=(cfg.dim, cfg.in_channels, 1, cfg.patch, cfg.patch)))
        self.bias = Parameter(np.zeros(cfg.dim))
        self.cfg = cfg

    def forward(self, grid):
        cfg = self.cfg
        grid = ops.tensor(grid)
        if grid.ndim != 5 or grid.shape[1] != cfg.in_channels or grid.shape[2] != cfg.n_slices:
            raise ShapeError(f"patch_embed: expected (B, {cfg.in_channels}, {cfg.n_slices}, H, W), got {grid.shape}")
        B, C, T, H, W = grid.shape
        P = cfg.patch
        ph, pw = (-H) % P, (-W) % P
        if ph or pw:
            grid = ops.pad(grid, ((0, 0), (0, 0), (0, 0), (0, ph), (0, pw)))
        lh, lw = (H + ph) // P, (W + pw) // P
        x = ops.reshape(grid, (B, C, T, lh, P, lw, P))
        x = ops.transpose(x, (0, 2, 3, 5, 1, 4, 6))  # (B, T, lh, lw, C, P, P)
        x = ops.reshape(x, (B, T * lh * lw, C * P * P))
        w = ops.transpose(ops.reshape(self.weight, (cfg.dim, C * P * P)), (1, 0))
        return ops.add(ops.matmul(x, w), self.bias)


def patch_embed(grid, pe: PatchEmbed):
    return pe(grid)


class PositionalEmbeddings(Module):
    def __init__(self, n_spatial: int, n_slices: int, dim: int, rng):
        self.spatial = Parameter(rng.normal(0.0, 0.02, size=(n_spatial, dim)))
        self.temporal = Parameter(rng.normal(0.0, 0.02, size=(n_slices, dim)))

    def table(self):
        """(T' * L, D) rows ordered slice-major like the patch tokens."""
        L, D = self.spatial.shape
        T = self.temporal.shape[0]
        return ops.reshape(ops.add(ops.reshape(self.temporal, (T, 1, D)), self.spatial), (T * L, D))

    def forward(self, tokens):
        return ops.add(tokens, self.table())


def add_positional(tokens, pos: PositionalEmbeddings, order=None):
    """Add spatial + temporal embeddings, then gather tokens into scan order."""
    out = pos(tokens)
    return out if order is None else ops.take(out, order.token_index(), axis=1)


def _inv_softplus(y: float) -> float:
    return math.log(math.expm1(y))


class MambaMix(Module):
    """Selective-SSM mixer: in-proj, causal conv + SiLU + scan on the value path, SiLU gate, out-proj."""

    def __init__(self, cfg: PointEncoderConfig, rng):
        D, E, N, R = cfg.dim, cfg.inner, cfg.state, cfg.dt_rank
        self.cfg = cfg
        self.in_proj = Linear(D, 2 * E, rng)
        self.conv_w = Parameter(rng.normal(0.0, 1.0 / math.sqrt(cfg.conv_width), size=(E, cfg.conv_width)))
        self.conv_b = Parameter(np.zeros(E))
        self.x_proj = Linear(E, R + 2 * N, rng, bias=False)
        self.dt_proj = Linear(R, E, rng, bias=False, scale=R ** -0.5)
        self.dt_bias = Parameter(np.full(E, _inv_softplus(0.1)))
        self.A_log = Parameter(np.log(np.tile(np.arange(1, N + 1, dtype=np.float64), (E, 1))))
        self.D_skip = Parameter(np.ones(E))
        self.out_proj = Linear(E, D, rng)

    def ssm_inputs(self, v):
        """Project the value path to (delta, A, B, C) for the scan."""
        R, N = self.cfg.dt_rank, self.cfg.state
        proj = self.x_proj(v)
        delta = ops.softplus(ops.add(self.dt_proj(proj[..., :R]), self.dt_bias))
        A = ops.neg(ops.exp(self.A_log))
        return delta, A, proj[..., R:R + N], proj[..., R + N:]

    def forward(self, x):
        E = self.cfg.inner
        xz = self.in_proj(x)
        v, gate = xz[..., :E], xz[..., E:]
        v = ops.silu(ops.causal_depthwise_conv1d(v, self.conv_w, self.conv_b))
        delta, A, Bm, Cm = self.ssm_inputs(v)
        y = ops.selective_scan(v, delta, A, Bm, Cm, self.D_skip, self.cfg.scan_mode)
        return self.out_proj(ops.mul(y, ops.silu(gate)))


def mamba_mix(x, mix: MambaMix):
    return mix(x)


def selective_ssm_scan(x, mix: MambaMix, mode: str = "sequential"):
    """The bare scan of a mixer's value path on a (B, L, E) sequence."""
    delta, A, Bm, Cm = mix.ssm_inputs(x)
    return ops.selective_scan(x, delta, A, Bm, Cm, mix.D_skip, mode)


class SPGC(Module):
    """Spiking point-wise conv -> spiking group-wise conv with residual -> spiking point-wise conv."""

    def __init__(self, cfg: PointEncoderConfig, rng):
        D, rD, g, k = cfg.dim, cfg.spgc_ratio * cfg.dim, cfg.spgc_groups, cfg.spgc_kernel
        if rD % g:
            raise ConfigError(f"r*D = {rD} not divisible by {g} groups")
        self.sg = SurrogateSpike(cfg.threshold, cfg.surrogate_width)
        self.pw1 = Linear(D, rD, rng)
        self.gw_weight = Parameter(rng.normal(0.0, 1.0 / math.sqrt(k * rD // g), size=(rD, rD // g, k)))
        self.gw_bias = Parameter(np.zeros(rD))
        self.pw2 = Linear(rD, D, rng)
        self.groups, self.kernel = g, k

    def spc(self, x, lin: Linear):
        return lin(self.sg(x))

    def sgc(self, x):
        s = ops.transpose(self.sg(x), (0, 2, 1))  # (B, C, L)
        y = ops.conv(s, self.gw_weight, self.gw_bias, padding=self.kernel // 2, groups=self.groups)
        return ops.add(ops.transpose(y, (0, 2, 1)), x)

    def forward(self, x):
        return self.spc(self.sgc(self.spc(x, self.pw1)), self.pw2)


def spgc(x, params: SPGC):
    return params(x)


class SpikingMambaBlock(Module):
    def __init__(self, cfg: PointEncoderConfig, rng):
        self.sg = SurrogateSpike(cfg.threshold, cfg.surrogate_width)
        self.mix = MambaMix(cfg, rng)
        self.ffn = SPGC(cfg, rng)

    def smamba(self, x):
        return self.sg(self.mix(self.sg(x)))

    def forward(self, x):
        return self.ffn(ops.add(self.smamba(x), x))


def smamba(x, block: SpikingMambaBlock):
    return block.smamba(x)


def spiking_mamba_block(x, block: SpikingMambaBlock):
    return block(x)


class PointEncoder(Module):
    def __init__(self, cfg: PointEncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        g = cfg.grid
        self.embed = PatchEmbed(cfg, rng)
        self.pos = PositionalEmbeddings(g.nx * g.ny, g.nt, cfg.dim, rng)
        self.blocks = [SpikingMambaBlock(cfg, rng) for _ in range(cfg.depth)]
        self.head = Linear(cfg.dim, cfg.dim, rng)
        # nonzero bias keeps the feature normalizable when no token spikes
        self.head.bias.data = rng.normal(0.0, 0.02, size=cfg.dim).astype(self.head.bias.data.dtype)
        fwd = build_scan_order(g) if cfg.order == "hilbert" else raster_order(g)
        self.orders = (fwd, reverse_order(fwd)) if cfg.bidirectional else (fwd,)

    def tokens(self, grid):
        """Patch tokens plus positional embeddings in slice-major layout, (B, T'*L, D)."""
        return self.pos(self.embed(grid))

    def run_blocks(self, seq):
        for blk in self.blocks:
            seq = blk(seq)
        return seq

    def pooled_tokens(self, tok, scans):
        """Run the shared blocks once per scan (an index array into the token axis), mean-pool, average."""
        B = tok.shape[0]
        seq = ops.concat([ops.take(tok, idx, axis=1) for idx in scans], axis=0)
        pooled = ops.mean(self.run_blocks(seq), axis=1)  # (n_scans * B, D)
        return ops.mean(ops.reshape(pooled, (len(scans), B, self.cfg.dim)), axis=0)

    def pooled(self, grid):
        """Mean-pooled block output averaged over scan directions, before the head."""
        return self.pooled_tokens(self.tokens(grid), [o.token_index() for o in self.orders])

    def forward(self, grid):
        return ops.l2_normalize(self.head(self.pooled(grid)), axis=-1)


def _fit_affine(weight: Parameter, bias: Parameter, pre: np.ndarray, mean: float, std: float, out_axis: int = -1):
    """Rescale an affine map so each output channel of ``pre`` gets the given mean and std."""
    flat = np.moveaxis(pre, -1, 0).reshape(pre.shape[-1], -1)
    mu, sd = flat.mean(axis=1), flat.std(axis=1)
    gain = np.where(sd > 1e-8, std / np.maximum(sd, 1e-8), 1.0)
    shape = [1] * weight.ndim
    shape[out_axis] = -1
    weight.data = (weight.data * gain.reshape(shape)).astype(weight.data.dtype)
    bias.data = (mean - gain * (mu - bias.data)).astype(bias.data.dtype)


def calibrate_spiking(model: PointEncoder, grid, mean: float | None = None, std: float = 1.0):
    """Data-dependent init: put every pre-spike activation near the firing threshold.

    Walks the encoder once on ``grid`` and, site by site, rescales the affine
    layer feeding each spike so its per-channel pre-activation has the given
    mean (default: threshold - 0.5) and std. Keeps spike rates and surrogate
    gradients alive at the start of training.
    """
    cfg = model.cfg
    mean = cfg.threshold - 0.5 if mean is None else mean
    sg = SurrogateSpike(cfg.threshold, cfg.surrogate_width)
    with no_grad():
        # gain from the embedding alone; the bias also absorbs the positional mean
        pos_mean = model.pos.table().data.mean(axis=0)
        _fit_affine(model.embed.weight, model.embed.bias, model.embed(grid).data, mean, std, out_axis=0)
        model.embed.bias.data = (model.embed.bias.data - pos_mean).astype(model.embed.bias.data.dtype)
        tok = model.tokens(grid)
        seq = ops.concat([ops.take(tok, o.token_index(), axis=1) for o in model.orders], axis=0)
        for blk in model.blocks:
            mix = blk.mix(sg(seq))
            _fit_affine(blk.mix.out_proj.weight, blk.mix.out_proj.bias, mix.data, mean, std)
            fhat = ops.add(blk.smamba(seq), seq)
            z = blk.ffn.pw1(sg(fhat))
            _fit_affine(blk.ffn.pw1.weight, blk.ffn.pw1.bias, z.data, mean, std)
            z = blk.ffn.pw1(sg(fhat))
            # the group conv rides on the residual z, so it only gets a centred, smaller share
            branch = ops.sub(blk.ffn.sgc(z), z).data
            _fit_affine(blk.ffn.gw_weight, blk.ffn.gw_bias, branch, 0.0, 0.5 * std, out_axis=0)
            _fit_affine(blk.ffn.pw2.weight, blk.ffn.pw2.bias, blk(seq).data, mean, std)
            seq = blk(seq)
    return model


def encode_points(grid, model: PointEncoder):
    """Unit-norm point feature f_o for a (B, C, T', H, W) context batch."""
    return model(grid)
