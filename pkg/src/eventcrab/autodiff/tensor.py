"""Dense tensors with reverse-mode gradient recording."""

from __future__ import annotations

import contextlib
import os

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}
_state = {
    "dtype": _DTYPES[os.environ.get("EVCRAB_PRECISION", "f32")],
    "grad_enabled": True,
}


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


def get_dtype():
    return _state["dtype"]


def set_precision(name: str) -> None:
    """Set the default float precision ("f32" or "f64") for new tensors."""
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _state["dtype"] = _DTYPES[name]


@contextlib.contextmanager
def precision(name: str):
    old = _state["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = old


def grad_enabled() -> bool:
    return _state["grad_enabled"]


def as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    arr = np.asarray(x)
    if arr.dtype.kind in "biuf" and arr.dtype != get_dtype():
        arr = arr.astype(get_dtype())
    return arr


class Tensor:
    """A numpy array plus the bookkeeping needed for backward().

    ``_backward`` maps the upstream gradient to a tuple with one entry per
    parent (``None`` for parents that need nothing).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @classmethod
    def _make(cls, data, parents, backward, op):
        out = cls.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        needs = grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward if needs else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operators are bound in ops.py to avoid a circular import


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None) -> dict:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    If ``params`` (a name -> Tensor mapping) is given, also returns the
    gradients of this call alone over it (not the accumulated ``.grad``);
    parameters the loss does not reach get zeros.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    fresh = {}
    if loss.requires_grad:
        for node in reversed(_toposort(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                fresh[id(node)] = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise ShapeError(f"gradient shape {pg.shape} != tensor shape {parent.shape} in {node.op}")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    if params is None:
        return {}
    out = {}
    for name, p in params.items():
        out[name] = fresh[id(p)] if id(p) in fresh else np.zeros_like(p.data)
    return out
