"""Differentiable operations.

Each op computes its result through the kernel backend and, when gradient
tracking is on, attaches a backward closure that accumulates adjoints into its
inputs' grad buffers. Shapes are row-major; the last axis is the feature axis
unless stated otherwise.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass

from . import kernels as K
from .rng import RngState
from .tensor import Tensor, record

LOG_FLOOR = 1e-12


def _same_dtype(*ts):
    dt = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != dt:
            raise ValueError(f"mixed dtypes {dt!r} vs {t.dtype!r}")
    return dt


def _zero_buf(n, dtype):
    return array(dtype, bytes(n * (4 if dtype == "f" else 8)))


def as_mask(mask):
    """Coerce any byte sequence to the signed-char buffer the kernels expect."""
    if isinstance(mask, array) and mask.typecode == "b":
        return mask
    return array("b", bytes(mask))


# ---------------------------------------------------------------------------
# elementwise / shape
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    out = Tensor.zeros(a.shape, _same_dtype(a, b))
    K.ew_add(a.data, b.data, out.data, out.size)

    def bwd():
        if a.requires_grad:
            K.ew_axpy(1.0, out.grad, a.ensure_grad(), out.size)
        if b.requires_grad:
            K.ew_axpy(1.0, out.grad, b.ensure_grad(), out.size)

    return record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch {a.shape} vs {b.shape}")
    out = Tensor.zeros(a.shape, _same_dtype(a, b))
    K.ew_sub(a.data, b.data, out.data, out.size)

    def bwd():
        if a.requires_grad:
            K.ew_axpy(1.0, out.grad, a.ensure_grad(), out.size)
        if b.requires_grad:
            K.ew_axpy(-1.0, out.grad, b.ensure_grad(), out.size)

    return record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")
    out = Tensor.zeros(a.shape, _same_dtype(a, b))
    K.ew_mul(a.data, b.data, out.data, out.size)

    def bwd():
        if a.requires_grad:
            K.ew_mul_accum(out.grad, b.data, a.ensure_grad(), out.size)
        if b.requires_grad:
            K.ew_mul_accum(out.grad, a.data, b.ensure_grad(), out.size)

    return record(out, (a, b), bwd)


def scale(x: Tensor, alpha: float) -> Tensor:
    out = Tensor.zeros(x.shape, x.dtype)
    K.ew_scale(x.data, alpha, out.data, out.size)

    def bwd():
        if x.requires_grad:
            K.ew_axpy(alpha, out.grad, x.ensure_grad(), out.size)

    return record(out, (x,), bwd)


def add_scalar(x: Tensor, c: float) -> Tensor:
    out = Tensor.zeros(x.shape, x.dtype)
    K.ew_add_scalar(x.data, c, out.data, out.size)

    def bwd():
        if x.requires_grad:
            K.ew_axpy(1.0, out.grad, x.ensure_grad(), out.size)

    return record(out, (x,), bwd)


def one_minus(x: Tensor) -> Tensor:
    return add_scalar(scale(x, -1.0), 1.0)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    n = 1
    for s in shape:
        n *= s
    if n != x.size:
        raise ValueError(f"cannot reshape {x.shape} to {shape}")
    out = Tensor(shape, x.data)

    def bwd():
        if x.requires_grad:
            K.ew_axpy(1.0, out.grad, x.ensure_grad(), out.size)

    return record(out, (x,), bwd)


def concat_lastdim(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"concat shape mismatch {a.shape} vs {b.shape}")
    da, db = a.shape[-1], b.shape[-1]
    rows = a.size // da
    out = Tensor.zeros(a.shape[:-1] + (da + db,), _same_dtype(a, b))
    K.concat2_lastdim(a.data, b.data, out.data, rows, da, db)

    def bwd():
        dtot = da + db
        if a.requires_grad:
            tmp = _zero_buf(rows * da, out.dtype)
            K.slice_lastdim(out.grad, tmp, rows, dtot, 0, da)
            K.ew_axpy(1.0, tmp, a.ensure_grad(), rows * da)
        if b.requires_grad:
            tmp = _zero_buf(rows * db, out.dtype)
            K.slice_lastdim(out.grad, tmp, rows, dtot, da, db)
            K.ew_axpy(1.0, tmp, b.ensure_grad(), rows * db)

    return record(out, (a, b), bwd)


def slice_lastdim(x: Tensor, start: int, width: int) -> Tensor:
    dtot = x.shape[-1]
    if start < 0 or start + width > dtot:
        raise ValueError(f"slice [{start}:{start + width}] out of last dim {dtot}")
    rows = x.size // dtot
    out = Tensor.zeros(x.shape[:-1] + (width,), x.dtype)
    K.slice_lastdim(x.data, out.data, rows, dtot, start, width)

    def bwd():
        if x.requires_grad:
            K.slice_lastdim_add(out.grad, x.ensure_grad(), rows, dtot, start, width)

    return record(out, (x,), bwd)


def stack_rows(tensors) -> Tensor:
    """Stack S tensors of shape (B, d) into (B, S, d)."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("stack_rows needs at least one tensor")
    B, d = tensors[0].shape
    dtype = _same_dtype(*tensors)
    S = len(tensors)
    out = Tensor.zeros((B, S, d), dtype)
    for s, t in enumerate(tensors):
        if t.shape != (B, d):
            raise ValueError(f"stack_rows shape mismatch {t.shape}")
        for b in range(B):
            out.data[(b * S + s) * d:(b * S + s + 1) * d] = t.data[b * d:(b + 1) * d]

    def bwd():
        for s, t in enumerate(tensors):
            if t.requires_grad:
                tmp = _zero_buf(B * d, dtype)
                K.slice_lastdim(out.grad, tmp, B, S * d, s * d, d)
                K.ew_axpy(1.0, tmp, t.ensure_grad(), B * d)

    return record(out, tuple(tensors), bwd)


def broadcast_batch(x: Tensor, B: int) -> Tensor:
    """Tile a tensor across a new leading batch axis; gradients sum back."""
    out = Tensor.zeros((B,) + x.shape, x.dtype)
    n = x.size
    for b in range(B):
        out.data[b * n:(b + 1) * n] = x.data

    def bwd():
        if x.requires_grad:
            K.col_sum_accum(out.grad, x.ensure_grad(), B, n)

    return record(out, (x,), bwd)


def scale_rows(x: Tensor, weights) -> Tensor:
    """Multiply each row of a (rows, cols) tensor by a constant per-row weight."""
    cols = x.shape[-1]
    rows = x.size // cols
    if len(weights) != rows:
        raise ValueError("scale_rows weight count mismatch")
    w = weights if isinstance(weights, array) else array(x.dtype, weights)
    out = Tensor.zeros(x.shape, x.dtype)
    K.scale_rows(x.data, w, out.data, rows, cols, False)

    def bwd():
        if x.requires_grad:
            K.scale_rows(out.grad, w, x.ensure_grad(), rows, cols, True)

    return record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor, trans_a: bool = False, trans_b: bool = False) -> Tensor:
    """2-D or batched 3-D matrix product with optional transposes."""
    if len(a.shape) == 2 and len(b.shape) == 2:
        B = 1
        a2, b2 = a.shape, b.shape
        batch_shape = ()
    elif len(a.shape) == 3 and len(b.shape) == 3 and a.shape[0] == b.shape[0]:
        B = a.shape[0]
        a2, b2 = a.shape[1:], b.shape[1:]
        batch_shape = (B,)
    else:
        raise ValueError(f"matmul rank/batch mismatch {a.shape} x {b.shape}")
    n, k = (a2[1], a2[0]) if trans_a else a2
    kb, m = (b2[1], b2[0]) if trans_b else b2
    if k != kb:
        raise ValueError(f"matmul inner dims {a.shape} x {b.shape} "
                         f"(trans_a={trans_a}, trans_b={trans_b})")
    out = Tensor.zeros(batch_shape + (n, m), _same_dtype(a, b))
    K.bmm(a.data, b.data, out.data, B, n, k, m, trans_a, trans_b, False)

    def bwd():
        g = out.grad
        if a.requires_grad:
            ga = a.ensure_grad()
            if not trans_a and not trans_b:
                K.bmm(g, b.data, ga, B, n, m, k, False, True, True)
            elif not trans_a and trans_b:
                K.bmm(g, b.data, ga, B, n, m, k, False, False, True)
            elif trans_a and not trans_b:
                K.bmm(b.data, g, ga, B, k, m, n, False, True, True)
            else:
                K.bmm(b.data, g, ga, B, k, m, n, True, True, True)
        if b.requires_grad:
            gb = b.ensure_grad()
            if not trans_a and not trans_b:
                K.bmm(a.data, g, gb, B, k, n, m, True, False, True)
            elif not trans_a and trans_b:
                K.bmm(g, a.data, gb, B, m, n, k, True, False, True)
            elif trans_a and not trans_b:
                K.bmm(a.data, g, gb, B, k, n, m, False, False, True)
            else:
                K.bmm(g, a.data, gb, B, m, n, k, True, True, True)

    return record(out, (a, b), bwd)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    cols = x.shape[-1]
    if bias.shape != (cols,):
        raise ValueError(f"bias shape {bias.shape} does not match last dim {cols}")
    rows = x.size // cols
    out = Tensor.zeros(x.shape, _same_dtype(x, bias))
    K.add_bias(x.data, bias.data, out.data, rows, cols)

    def bwd():
        if x.requires_grad:
            K.ew_axpy(1.0, out.grad, x.ensure_grad(), out.size)
        if bias.requires_grad:
            K.col_sum_accum(out.grad, bias.ensure_grad(), rows, cols)

    return record(out, (x, bias), bwd)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b."""
    y = matmul(x, w)
    return add_bias(y, b) if b is not None else y


def sum_all(x: Tensor) -> Tensor:
    out = Tensor.zeros((1,), x.dtype)
    out.data[0] = K.reduce_sum(x.data, x.size)

    def bwd():
        if x.requires_grad:
            g0 = out.grad[0]
            gx = x.ensure_grad()
            K.ew_add_scalar(gx, g0, gx, x.size)

    return record(out, (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def sum_lastdim(x: Tensor) -> Tensor:
    m = x.shape[-1]
    if m == 0:
        # Empty reduction axis: zeros, nothing to differentiate through.
        return Tensor.zeros(x.shape[:-1], x.dtype)
    rows = x.size // m
    ones = Tensor.full((m, 1), 1.0, x.dtype)
    flat = reshape(x, (rows, m))
    return reshape(matmul(flat, ones), x.shape[:-1])


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = Tensor.zeros(x.shape, x.dtype)
    K.relu_fwd(x.data, out.data, out.size)

    def bwd():
        if x.requires_grad:
            K.relu_bwd(x.data, out.grad, x.ensure_grad(), out.size)

    return record(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out = Tensor.zeros(x.shape, x.dtype)
    K.tanh_fwd(x.data, out.data, out.size)

    def bwd():
        if x.requires_grad:
            K.tanh_bwd(out.data, out.grad, x.ensure_grad(), out.size)

    return record(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    out = Tensor.zeros(x.shape, x.dtype)
    K.sigmoid_fwd(x.data, out.data, out.size)

    def bwd():
        if x.requires_grad:
            K.sigmoid_bwd(out.data, out.grad, x.ensure_grad(), out.size)

    return record(out, (x,), bwd)


def log_clamped(x: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """log(max(x, floor)); zero slope inside the clamp."""
    out = Tensor.zeros(x.shape, x.dtype)
    K.log_clamped_fwd(x.data, floor, out.data, out.size)

    def bwd():
        if x.requires_grad:
            K.log_clamped_bwd(x.data, floor, out.grad, x.ensure_grad(), out.size)

    return record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# normalization / attention / dropout
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Per-row standardization over the last axis, then affine gamma/beta."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    cols = x.shape[-1]
    if gamma.shape != (cols,) or beta.shape != (cols,):
        raise ValueError("layer_norm affine shape mismatch")
    rows = x.size // cols
    dtype = _same_dtype(x, gamma, beta)
    out = Tensor.zeros(x.shape, dtype)
    xhat = _zero_buf(x.size, dtype)
    inv_std = _zero_buf(rows, dtype)
    K.layernorm_fwd(x.data, gamma.data, beta.data, eps, out.data, xhat, inv_std,
                    rows, cols)

    def bwd():
        gx = x.ensure_grad() if x.requires_grad else _zero_buf(x.size, dtype)
        gg = gamma.ensure_grad() if gamma.requires_grad else _zero_buf(cols, dtype)
        gb = beta.ensure_grad() if beta.requires_grad else _zero_buf(cols, dtype)
        K.layernorm_bwd(out.grad, xhat, inv_std, gamma.data, gx, gg, gb, rows, cols)

    return record(out, (x, gamma, beta), bwd)


def masked_softmax(scores: Tensor, mask) -> Tensor:
    """Row-wise softmax over positions where mask != 0; masked entries are 0.

    `mask` is a flat signed-char buffer of the same element count as `scores`.
    """
    mask = as_mask(mask)
    if len(mask) != scores.size:
        raise ValueError("mask size does not match scores")
    cols = scores.shape[-1]
    rows = scores.size // cols
    out = Tensor.zeros(scores.shape, scores.dtype)
    bad = K.masked_softmax_fwd(scores.data, mask, out.data, rows, cols)
    if bad >= 0:
        raise ValueError(f"no valid attention targets in row {bad}")

    def bwd():
        if scores.requires_grad:
            K.masked_softmax_bwd(out.data, out.grad, mask, scores.ensure_grad(),
                                 rows, cols)

    return record(out, (scores,), bwd)


def dropout(x: Tensor, p: float, training: bool, rng: RngState | None = None) -> Tensor:
    """Inverted dropout: identity in eval mode, 1/(1-p) scaling of survivors in
    train mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    out = Tensor.zeros(x.shape, x.dtype)
    mask = array("b", bytes(x.size))
    rng.counter = K.dropout_fwd(x.data, out.data, mask, p, rng.seed, rng.counter,
                                x.size)

    def bwd():
        if x.requires_grad:
            K.dropout_bwd(out.grad, mask, p, x.ensure_grad(), x.size)

    return record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# gathers
# ---------------------------------------------------------------------------

def embedding(ids, ids_shape, table: Tensor) -> Tensor:
    """Row gather: out[..., :] = table[ids[...], :].

    `ids` is a flat array('q'); id 0 is the padding row.
    """
    n_rows, d = table.shape
    for i in ids:
        if i < 0 or i >= n_rows:
            raise ValueError(f"id {i} out of range 0..{n_rows - 1}")
    n = len(ids)
    out = Tensor.zeros(tuple(ids_shape) + (d,), table.dtype)
    K.gather_rows(table.data, ids, out.data, n, d)

    def bwd():
        if table.requires_grad:
            K.scatter_add_rows(out.grad, ids, table.ensure_grad(), n, d)

    return record(out, (table,), bwd)


def gather_positions(x: Tensor, pos) -> Tensor:
    """out[b] = x[b, pos[b], :] for a (B, L, d) tensor."""
    B, L, d = x.shape
    if len(pos) != B:
        raise ValueError("one position per batch row required")
    out = Tensor.zeros((B, d), x.dtype)
    K.gather_positions(x.data, pos, out.data, B, L, d)

    def bwd():
        if x.requires_grad:
            K.scatter_positions_add(out.grad, pos, x.ensure_grad(), B, L, d)

    return record(out, (x,), bwd)


def masked_mean_mid(x: Tensor, mask) -> Tensor:
    """Mean over valid middle-axis slots of (B, C, d); zero when none valid."""
    B, C, d = x.shape
    mask = as_mask(mask)
    if len(mask) != B * C:
        raise ValueError("mask size does not match (B, C)")
    out = Tensor.zeros((B, d), x.dtype)
    K.masked_mean_mid_fwd(x.data, mask, out.data, B, C, d)

    def bwd():
        if x.requires_grad:
            K.masked_mean_mid_bwd(out.grad, mask, x.ensure_grad(), B, C, d)

    return record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# real FFT (middle axis) and complex filtering
# ---------------------------------------------------------------------------

@dataclass
class ComplexSpectrum:
    """Half-spectrum of a real signal: re/im tensors of identical shape whose
    frequency axis holds floor(L/2)+1 bins."""

    re: Tensor
    im: Tensor

    @property
    def shape(self):
        return self.re.shape

    @staticmethod
    def of(re: Tensor, im: Tensor) -> "ComplexSpectrum":
        if re.shape != im.shape:
            raise ValueError("re/im shape mismatch")
        return ComplexSpectrum(re, im)


def rfft_mid(x: Tensor) -> ComplexSpectrum:
    """Real FFT along the middle axis of a (B, C, d) tensor."""
    B, C, d = x.shape
    if C < 1:
        raise ValueError("empty signal")
    H = C // 2 + 1
    re = Tensor.zeros((B, H, d), x.dtype)
    im = Tensor.zeros((B, H, d), x.dtype)
    K.rfft_fwd(x.data, re.data, im.data, B, C, d)
    n = B * H * d

    def bwd_re():
        if x.requires_grad:
            K.rfft_bwd(re.grad, _zero_buf(n, x.dtype), x.ensure_grad(), B, C, d)

    def bwd_im():
        if x.requires_grad:
            K.rfft_bwd(_zero_buf(n, x.dtype), im.grad, x.ensure_grad(), B, C, d)

    record(re, (x,), bwd_re)
    record(im, (x,), bwd_im)
    return ComplexSpectrum(re, im)


def irfft_mid(spec: ComplexSpectrum, length: int) -> Tensor:
    """Inverse of rfft_mid, back to a real (B, length, d) tensor."""
    B, H, d = spec.shape
    if H != length // 2 + 1:
        raise ValueError(f"{H} bins inconsistent with signal length {length}")
    re, im = spec.re, spec.im
    out = Tensor.zeros((B, length, d), _same_dtype(re, im))
    K.irfft_fwd(re.data, im.data, out.data, B, length, d)

    def bwd():
        gre = re.ensure_grad() if re.requires_grad else _zero_buf(re.size, re.dtype)
        gim = im.ensure_grad() if im.requires_grad else _zero_buf(im.size, im.dtype)
        K.irfft_bwd(out.grad, gre, gim, B, length, d)

    return record(out, (re, im), bwd)


def complex_elementwise_mul(a: ComplexSpectrum, b: ComplexSpectrum) -> ComplexSpectrum:
    """Per-position complex product (a.re + i a.im) * (b.re + i b.im)."""
    if a.shape != b.shape:
        raise ValueError(f"spectrum shape mismatch {a.shape} vs {b.shape}")
    dtype = _same_dtype(a.re, a.im, b.re, b.im)
    n = a.re.size
    out_re = Tensor.zeros(a.shape, dtype)
    out_im = Tensor.zeros(a.shape, dtype)
    K.cmul_fwd(a.re.data, a.im.data, b.re.data, b.im.data, out_re.data,
               out_im.data, n)

    def _accum(target: ComplexSpectrum, other: ComplexSpectrum, gre, gim):
        need_re = target.re.requires_grad
        need_im = target.im.requires_grad
        if not (need_re or need_im):
            return
        tr = target.re.ensure_grad() if need_re else _zero_buf(n, dtype)
        ti = target.im.ensure_grad() if need_im else _zero_buf(n, dtype)
        K.cmul_conj_accum(other.re.data, other.im.data, gre, gim, tr, ti, n)

    def bwd_re():
        g = out_re.grad
        z = _zero_buf(n, dtype)
        _accum(a, b, g, z)
        _accum(b, a, g, z)

    def bwd_im():
        g = out_im.grad
        z = _zero_buf(n, dtype)
        _accum(a, b, z, g)
        _accum(b, a, z, g)

    record(out_re, (a.re, a.im, b.re, b.im), bwd_re)
    record(out_im, (a.re, a.im, b.re, b.im), bwd_im)
    return ComplexSpectrum(out_re, out_im)


def _as_mid3(x: Tensor):
    if len(x.shape) == 1:
        return reshape(x, (1, x.shape[0], 1)), ()
    if len(x.shape) == 2:
        return reshape(x, (1,) + x.shape), (x.shape[1],)
    raise ValueError(f"expected vector or matrix, got shape {x.shape}")


def fft_real_forward(x: Tensor) -> ComplexSpectrum:
    """DFT of a real vector (length L) or matrix (L x d, per column).

    Returns the floor(L/2)+1 non-redundant frequency bins.
    """
    if x.size == 0 or (len(x.shape) >= 1 and x.shape[0] == 0):
        raise ValueError("empty signal")
    x3, tail = _as_mid3(x)
    spec = rfft_mid(x3)
    H = spec.shape[1]
    return ComplexSpectrum(reshape(spec.re, (H,) + tail),
                           reshape(spec.im, (H,) + tail))


def fft_real_inverse(spec: ComplexSpectrum, length: int) -> Tensor:
    """Inverse of fft_real_forward for a signal of the given length."""
    shp = spec.shape
    H = shp[0]
    if H != length // 2 + 1:
        raise ValueError(f"{H} bins inconsistent with signal length {length}")
    tail = shp[1:]
    d = tail[0] if tail else 1
    spec3 = ComplexSpectrum(reshape(spec.re, (1, H, d)), reshape(spec.im, (1, H, d)))
    out = irfft_mid(spec3, length)
    return reshape(out, (length,) + tail)
