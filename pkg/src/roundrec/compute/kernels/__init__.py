"""Kernel backend selection.

The compiled extension is preferred when present; the pure-Python module is a
drop-in replacement with identical numerics. Override with
``ROUNDREC_KERNELS=python`` or ``ROUNDREC_KERNELS=cython`` (the latter raises
if the extension is missing).
"""

import os

from . import pykernels

_choice = os.environ.get("ROUNDREC_KERNELS", "auto").lower()

if _choice == "python":
    _impl = pykernels
elif _choice == "cython":
    from . import _ckern as _impl
else:
    try:
        from . import _ckern as _impl
    except ImportError:
        _impl = pykernels

BACKEND = _impl.BACKEND


def backend_name() -> str:
    return BACKEND


_names = [
    "bmm", "ew_add", "ew_sub", "ew_mul", "ew_axpy", "ew_scale", "ew_add_scalar",
    "ew_mul_accum", "add_bias", "col_sum_accum", "scale_rows", "reduce_sum",
    "isfinite_all", "relu_fwd", "relu_bwd", "tanh_fwd", "tanh_bwd",
    "sigmoid_fwd", "sigmoid_bwd", "log_clamped_fwd", "log_clamped_bwd",
    "layernorm_fwd", "layernorm_bwd", "masked_softmax_fwd", "masked_softmax_bwd",
    "dropout_fwd", "dropout_bwd", "fill_uniform", "rfft_fwd", "rfft_bwd",
    "irfft_fwd", "irfft_bwd", "cmul_fwd", "cmul_conj_accum", "gather_rows",
    "scatter_add_rows", "gather_positions", "scatter_positions_add",
    "masked_mean_mid_fwd", "masked_mean_mid_bwd", "concat2_lastdim",
    "slice_lastdim", "slice_lastdim_add", "adam_step",
]

globals().update({name: getattr(_impl, name) for name in _names})

__all__ = _names + ["BACKEND", "backend_name", "pykernels"]
