"""Numerical core: tensors, reverse-mode gradients, FFT, GRU, Adam.

Heavy inner loops run through `kernels` (compiled extension when available,
pure Python otherwise); everything above is backend-agnostic.
"""

from . import kernels, ops
from .adam import Adam, AdamState, adam_step
from .gradcheck import grad_check
from .ops import (
    ComplexSpectrum,
    complex_elementwise_mul,
    dense,
    dropout,
    fft_real_forward,
    fft_real_inverse,
    layer_norm,
    masked_softmax,
)
from .recurrent import GruParams, gru_cell, gru_sequence, gru_sequence_batched, init_gru_params
from .rng import RngState
from .tensor import Tensor, backward, check_finite_scalar, grad_enabled, no_grad

backend_name = kernels.backend_name

__all__ = [
    "Adam", "AdamState", "ComplexSpectrum", "GruParams", "RngState", "Tensor",
    "adam_step", "backend_name", "backward", "check_finite_scalar",
    "complex_elementwise_mul", "dense", "dropout", "fft_real_forward",
    "fft_real_inverse", "grad_check", "grad_enabled", "gru_cell",
    "gru_sequence", "gru_sequence_batched", "init_gru_params", "kernels",
    "layer_norm", "masked_softmax", "no_grad", "ops",
]
