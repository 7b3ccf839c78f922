"""Gated recurrent unit, composed from the primitive differentiable ops."""

from __future__ import annotations

from array import array
from dataclasses import dataclass

from . import ops
from .rng import RngState
from .tensor import Tensor


@dataclass
class GruParams:
    """Gate weights for one GRU cell: update z, reset r, candidate h."""

    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wh: Tensor
    uh: Tensor
    bh: Tensor

    @property
    def input_dim(self) -> int:
        return self.wz.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.wz.shape[1]

    def named(self, prefix: str):
        for field in ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"):
            yield f"{prefix}.{field}", getattr(self, field)


def init_gru_params(d_in: int, d_h: int, rng: RngState, dtype="f",
                    requires_grad=True) -> GruParams:
    bound_w = 1.0 / d_in ** 0.5
    bound_u = 1.0 / d_h ** 0.5

    def w(shape, bound):
        return Tensor.rand_uniform(shape, -bound, bound, rng, dtype,
                                   requires_grad=requires_grad)

    def b():
        return Tensor.zeros((d_h,), dtype, requires_grad=requires_grad)

    return GruParams(
        wz=w((d_in, d_h), bound_w), uz=w((d_h, d_h), bound_u), bz=b(),
        wr=w((d_in, d_h), bound_w), ur=w((d_h, d_h), bound_u), br=b(),
        wh=w((d_in, d_h), bound_w), uh=w((d_h, d_h), bound_u), bh=b(),
    )


def gru_cell(x: Tensor, h: Tensor, params: GruParams) -> Tensor:
    """One recurrence step: z/r gates, tanh candidate, convex blend.

    h' = (1 - z) * h + z * h_cand
    """
    z = ops.sigmoid(ops.add(ops.dense(x, params.wz, params.bz),
                            ops.matmul(h, params.uz)))
    r = ops.sigmoid(ops.add(ops.dense(x, params.wr, params.br),
                            ops.matmul(h, params.ur)))
    cand = ops.tanh(ops.add(ops.dense(x, params.wh, params.bh),
                            ops.matmul(ops.mul(r, h), params.uh)))
    return ops.add(ops.mul(ops.one_minus(z), h), ops.mul(z, cand))


def gru_sequence_batched(inputs: Tensor, h0: Tensor, params: GruParams,
                         valid_mask=None):
    """Run the GRU over the middle axis of (B, S, d_in).

    `valid_mask`, when given, is a flat (B, S) signed-char buffer; steps with
    mask 0 leave that row's hidden state untouched (used to skip pad slots).
    Returns (list of per-step hidden (B, d_h), final hidden (B, d_h)).
    """
    B, S, d_in = inputs.shape
    if d_in != params.input_dim:
        raise ValueError(f"input dim {d_in} does not match GRU weights "
                         f"{params.input_dim}")
    if h0.shape != (B, params.hidden_dim):
        raise ValueError(f"h0 shape {h0.shape} does not match (batch, hidden)")
    h = h0
    states = []
    for t in range(S):
        x_t = ops.slice_lastdim(ops.reshape(inputs, (B, S * d_in)), t * d_in, d_in)
        h_next = gru_cell(x_t, h, params)
        if valid_mask is not None:
            keep = array(inputs.dtype, [1.0 if valid_mask[b * S + t] else 0.0
                                        for b in range(B)])
            drop = array(inputs.dtype, [0.0 if valid_mask[b * S + t] else 1.0
                                        for b in range(B)])
            h_next = ops.add(ops.scale_rows(h_next, keep), ops.scale_rows(h, drop))
        h = h_next
        states.append(h)
    return states, h


def gru_sequence(inputs: Tensor, h0: Tensor, params: GruParams):
    """Single-sequence surface: inputs (S, d_in), h0 (d_h,).

    An empty sequence returns h0 unchanged. Returns (hidden states (S, d_h),
    final hidden (d_h,)).
    """
    if len(inputs.shape) != 2:
        raise ValueError(f"expected (seq_len, d_in), got {inputs.shape}")
    S, d_in = inputs.shape
    d_h = params.hidden_dim
    if h0.shape != (d_h,):
        raise ValueError(f"h0 shape {h0.shape} does not match hidden dim {d_h}")
    if S == 0:
        return Tensor.zeros((0, d_h), inputs.dtype), h0
    states, final = gru_sequence_batched(ops.reshape(inputs, (1, S, d_in)),
                                         ops.reshape(h0, (1, d_h)), params)
    all_h = ops.stack_rows(states)
    return ops.reshape(all_h, (S, d_h)), ops.reshape(final, (d_h,))
