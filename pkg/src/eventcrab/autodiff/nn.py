"""Parameters and a tiny module system (named parameter trees, state dicts)."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, get_dtype


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=get_dtype()), requires_grad=True, name=name)


class Module:
    """Base class; parameters and sub-modules are discovered from attributes.

    Lists/tuples of modules or parameters are traversed too, with the index
    as the path component (``blocks.0.mix.in_proj``).
    """

    def named_parameters(self, prefix: str = ""):
        seen = set()
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}", seen)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def param_dict(self) -> dict[str, Parameter]:
        out = {}
        for name, p in self.named_parameters():
            if name in out:
                raise ValueError(f"duplicate parameter name {name!r}")
            out[name] = p
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.param_dict().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        params = self.param_dict()
        if strict:
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            if missing or extra:
                raise KeyError(f"state dict mismatch: missing={missing} unexpected={extra}")
        for k, v in state.items():
            if k not in params:
                continue
            p = params[k]
            v = np.asarray(v)
            if v.shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {v.shape} != parameter shape {p.shape}")
            p.data = v.astype(p.data.dtype, copy=True)

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, path, seen):
    if isinstance(value, Parameter):
        if id(value) not in seen:
            seen.add(id(value))
            value.name = path
            yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=path + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{path}.{i}", seen)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, scale: float | None = None):
        scale = 1.0 / np.sqrt(d_in) if scale is None else scale
        self.weight = Parameter(rng.normal(0.0, scale, size=(d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)
