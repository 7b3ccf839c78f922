"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from .tensor import Tensor, backward, no_grad


def grad_check(f, params, h: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f(params) -> scalar Tensor` must be deterministic (run it with dropout
    off). Per element the error is |a - n| / max(1e-8, |a| + |n|). Use
    double-precision parameters; 1e-4-level agreement is not reachable in
    single precision.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    params = list(params)
    loss = f(params)
    backward(loss, params=params)
    analytic = [list(p.grad) for p in params]

    worst = 0.0
    for pi, p in enumerate(params):
        for i in range(p.size):
            orig = p.data[i]
            p.data[i] = orig + h
            with no_grad():
                up = f(params).item()
            p.data[i] = orig - h
            with no_grad():
                down = f(params).item()
            p.data[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[pi][i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if err > worst:
                worst = err
    return worst
