"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

from array import array
from dataclasses import dataclass, field

from . import kernels as K
from .tensor import Tensor

_SIZE = {"f": 4, "d": 8}


@dataclass
class AdamState:
    """First/second moment buffers plus the 1-based step count."""

    m: array
    v: array
    t: int = 0

    @staticmethod
    def for_param(p: Tensor) -> "AdamState":
        return AdamState(m=array(p.dtype, bytes(p.size * _SIZE[p.dtype])),
                         v=array(p.dtype, bytes(p.size * _SIZE[p.dtype])))


def adam_step(param: Tensor, grad, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; mutates `param` and `state`."""
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    gbuf = grad.data if isinstance(grad, Tensor) else grad
    if len(gbuf) != param.size:
        raise ValueError("gradient shape does not match parameter")
    state.t += 1
    status = K.adam_step(param.data, gbuf, state.m, state.v, state.t,
                         lr, beta1, beta2, eps, param.size)
    if status != 0:
        raise FloatingPointError("diverged")
    return param, state


@dataclass
class Adam:
    """Keeps one AdamState per named parameter; learning rate can be
    overridden per name through `lr_for`."""

    params: dict
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_for: dict = field(default_factory=dict)
    states: dict = field(init=False)

    def __post_init__(self):
        self.states = {name: AdamState.for_param(p) for name, p in self.params.items()}

    def _lr(self, name: str) -> float:
        best = self.lr
        best_len = -1
        for prefix, lr in self.lr_for.items():
            if name.startswith(prefix) and len(prefix) > best_len:
                best = lr
                best_len = len(prefix)
        return best

    def step(self):
        for name, p in self.params.items():
            adam_step(p, p.ensure_grad(), self.states[name], self._lr(name),
                      self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
