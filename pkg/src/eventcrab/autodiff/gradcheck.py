"""Central finite-difference verification of backward()."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward


class NumericError(FloatingPointError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[int, tuple] | None  # (param index, coordinate)
    analytic: list[np.ndarray] = field(repr=False)
    numeric: list[np.ndarray] = field(repr=False)

    def __float__(self):
        return self.max_rel_error


def finite_diff_check(f, params, h: float = 1e-5, atol: float = 0.0) -> GradCheckReport:
    """Compare backward() against central differences, coordinate by coordinate.

    ``f`` takes no arguments and returns a scalar Tensor built from
    ``params`` (a list of leaf Tensors, perturbed in place). The relative error
    per coordinate is ``max(0, |a - n| - atol) / max(|a|, |n|, 1e-12)``.
    ``atol`` discounts round-off in the difference quotient, roughly
    ``eps * |f| / h``; it matters only for coordinates whose true gradient is
    near zero.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    if atol < 0:
        raise ValueError("atol must be >= 0")
    params = list(params)
    saved_flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = True
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError(f"loss is not finite: {loss.data}")
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    numeric = []
    worst, max_err = None, 0.0
    for i, p in enumerate(params):
        num = np.zeros_like(p.data)
        for idx in np.ndindex(*p.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            fp = float(f().data)
            p.data[idx] = orig - h
            fm = float(f().data)
            p.data[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite loss perturbing parameter {i} at {idx}")
            num[idx] = (fp - fm) / (2 * h)
            a = analytic[i][idx]
            if not np.isfinite(a):
                raise NumericError(f"non-finite analytic gradient for parameter {i} at {idx}")
            err = max(0.0, abs(a - num[idx]) - atol) / max(abs(a), abs(num[idx]), 1e-12)
            if err > max_err or worst is None:
                max_err, worst = max(err, max_err), (i, idx)
        numeric.append(num)
    for p, flag in zip(params, saved_flags):
        p.requires_grad = flag
        p.grad = None
    return GradCheckReport(float(max_err), worst, analytic, numeric)


def leaf(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)
