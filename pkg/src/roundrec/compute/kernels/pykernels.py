"""Pure-Python reference kernels.

Every kernel here has a compiled twin in ``_ckern.pyx`` with identical
semantics, down to the floating-point rounding: accumulation happens in double
precision and results are stored through the output buffer's own dtype, which
is exactly what the C code does. Buffers are flat ``array.array`` values
('f' or 'd' for data, 'b' for masks, 'q' for ids); shapes travel as explicit
integer arguments.

This backend is the fallback when the compiled extension is unavailable and
the ground truth the parity tests compare against.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / 9007199254740992.0
_PI = math.pi

BACKEND = "python"


def _stream(seed, counter):
    z = (seed + (counter + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def bmm(a, b, out, B, n, k, m, trans_a, trans_b, accumulate):
    """Batched matmul: out[B,n,m] = a (.) b, with optional per-operand transpose.

    a is B x (n,k) or B x (k,n) when trans_a; b is B x (k,m) or B x (m,k)
    when trans_b. With accumulate the product is added onto out.
    """
    for bi in range(B):
        ao = bi * n * k
        bo = bi * k * m
        co = bi * n * m
        for i in range(n):
            for j in range(m):
                acc = out[co + i * m + j] if accumulate else 0.0
                if not trans_a and not trans_b:
                    for l in range(k):
                        acc += a[ao + i * k + l] * b[bo + l * m + j]
                elif not trans_a and trans_b:
                    for l in range(k):
                        acc += a[ao + i * k + l] * b[bo + j * k + l]
                elif trans_a and not trans_b:
                    for l in range(k):
                        acc += a[ao + l * n + i] * b[bo + l * m + j]
                else:
                    for l in range(k):
                        acc += a[ao + l * n + i] * b[bo + j * k + l]
                out[co + i * m + j] = acc


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def ew_add(a, b, out, n):
    for i in range(n):
        out[i] = a[i] + b[i]


def ew_sub(a, b, out, n):
    for i in range(n):
        out[i] = a[i] - b[i]


def ew_mul(a, b, out, n):
    for i in range(n):
        out[i] = a[i] * b[i]


def ew_axpy(alpha, x, out, n):
    """out += alpha * x"""
    for i in range(n):
        out[i] = out[i] + alpha * x[i]


def ew_scale(x, alpha, out, n):
    for i in range(n):
        out[i] = alpha * x[i]


def ew_add_scalar(x, c, out, n):
    for i in range(n):
        out[i] = x[i] + c


def ew_mul_accum(a, b, out, n):
    """out += a * b elementwise"""
    for i in range(n):
        out[i] = out[i] + a[i] * b[i]


def add_bias(x, bias, out, rows, cols):
    for r in range(rows):
        off = r * cols
        for j in range(cols):
            out[off + j] = x[off + j] + bias[j]


def col_sum_accum(g, out, rows, cols):
    """out[j] += sum_r g[r, j]"""
    for j in range(cols):
        acc = out[j] + 0.0
        for r in range(rows):
            acc += g[r * cols + j]
        out[j] = acc


def scale_rows(x, w, out, rows, cols, accumulate):
    """out[r, j] (+)= x[r, j] * w[r]"""
    for r in range(rows):
        wr = w[r]
        off = r * cols
        for j in range(cols):
            v = x[off + j] * wr
            out[off + j] = (out[off + j] + v) if accumulate else v


def reduce_sum(x, n):
    acc = 0.0
    for i in range(n):
        acc += x[i]
    return acc


def isfinite_all(x, n):
    for i in range(n):
        if not math.isfinite(x[i]):
            return 0
    return 1


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu_fwd(x, out, n):
    for i in range(n):
        v = x[i]
        out[i] = v if v > 0.0 else 0.0


def relu_bwd(x, g, gx, n):
    for i in range(n):
        if x[i] > 0.0:
            gx[i] = gx[i] + g[i]


def tanh_fwd(x, out, n):
    for i in range(n):
        out[i] = math.tanh(x[i])


def tanh_bwd(y, g, gx, n):
    for i in range(n):
        yi = y[i]
        gx[i] = gx[i] + g[i] * (1.0 - yi * yi)


def sigmoid_fwd(x, out, n):
    # Branching keeps exp() arguments non-positive so nothing overflows.
    for i in range(n):
        v = x[i]
        if v >= 0.0:
            out[i] = 1.0 / (1.0 + math.exp(-v))
        else:
            e = math.exp(v)
            out[i] = e / (1.0 + e)


def sigmoid_bwd(y, g, gx, n):
    for i in range(n):
        yi = y[i]
        gx[i] = gx[i] + g[i] * yi * (1.0 - yi)


def log_clamped_fwd(x, floor, out, n):
    for i in range(n):
        v = x[i]
        out[i] = math.log(v if v > floor else floor)


def log_clamped_bwd(x, floor, g, gx, n):
    # Zero slope in the clamped region.
    for i in range(n):
        v = x[i]
        if v > floor:
            gx[i] = gx[i] + g[i] / v


# ---------------------------------------------------------------------------
# layer normalization
# ---------------------------------------------------------------------------

def layernorm_fwd(x, gamma, beta, eps, out, xhat, inv_std, rows, cols):
    for r in range(rows):
        off = r * cols
        mean = 0.0
        for j in range(cols):
            mean += x[off + j]
        mean /= cols
        var = 0.0
        for j in range(cols):
            d = x[off + j] - mean
            var += d * d
        var /= cols
        s = 1.0 / math.sqrt(var + eps)
        inv_std[r] = s
        for j in range(cols):
            h = (x[off + j] - mean) * s
            xhat[off + j] = h
            out[off + j] = h * gamma[j] + beta[j]


def layernorm_bwd(g, xhat, inv_std, gamma, gx, ggamma, gbeta, rows, cols):
    for r in range(rows):
        off = r * cols
        s = inv_std[r]
        mean_dh = 0.0
        mean_dh_xhat = 0.0
        for j in range(cols):
            dh = g[off + j] * gamma[j]
            h = xhat[off + j]
            mean_dh += dh
            mean_dh_xhat += dh * h
        mean_dh /= cols
        mean_dh_xhat /= cols
        for j in range(cols):
            dh = g[off + j] * gamma[j]
            h = xhat[off + j]
            gx[off + j] = gx[off + j] + s * (dh - mean_dh - h * mean_dh_xhat)
            ggamma[j] = ggamma[j] + g[off + j] * h
            gbeta[j] = gbeta[j] + g[off + j]


# ---------------------------------------------------------------------------
# masked softmax
# ---------------------------------------------------------------------------

def masked_softmax_fwd(scores, mask, out, rows, cols):
    """Row softmax over mask!=0 entries; masked entries are exactly 0.

    Returns -1 on success, else the index of the first fully masked row.
    """
    for r in range(rows):
        off = r * cols
        hi = 0.0
        any_valid = 0
        for j in range(cols):
            if mask[off + j]:
                v = scores[off + j]
                if not any_valid or v > hi:
                    hi = v
                any_valid = 1
        if not any_valid:
            return r
        total = 0.0
        for j in range(cols):
            if mask[off + j]:
                e = math.exp(scores[off + j] - hi)
                out[off + j] = e
                total += e
            else:
                out[off + j] = 0.0
        for j in range(cols):
            if mask[off + j]:
                out[off + j] = out[off + j] / total
    return -1


def masked_softmax_bwd(y, g, mask, gx, rows, cols):
    for r in range(rows):
        off = r * cols
        dot = 0.0
        for j in range(cols):
            if mask[off + j]:
                dot += g[off + j] * y[off + j]
        for j in range(cols):
            if mask[off + j]:
                gx[off + j] = gx[off + j] + y[off + j] * (g[off + j] - dot)


# ---------------------------------------------------------------------------
# dropout / random fills
# ---------------------------------------------------------------------------

def dropout_fwd(x, out, mask, p, seed, counter, n):
    """Inverted dropout: kept elements are scaled by 1/(1-p). Returns the
    advanced stream counter."""
    scale = 1.0 / (1.0 - p)
    for i in range(n):
        u = (_stream(seed, counter + i) >> 11) * _INV_2_53
        if u >= p:
            mask[i] = 1
            out[i] = x[i] * scale
        else:
            mask[i] = 0
            out[i] = 0.0
    return counter + n


def dropout_bwd(g, mask, p, gx, n):
    scale = 1.0 / (1.0 - p)
    for i in range(n):
        if mask[i]:
            gx[i] = gx[i] + g[i] * scale


def fill_uniform(buf, lo, hi, seed, counter, n):
    span = hi - lo
    for i in range(n):
        u = (_stream(seed, counter + i) >> 11) * _INV_2_53
        buf[i] = lo + span * u
    return counter + n


# ---------------------------------------------------------------------------
# FFT along the middle axis of a (B, C, d) tensor
# ---------------------------------------------------------------------------
#
# Real-input layout: H = C//2 + 1 frequency bins. Power-of-two lengths run an
# iterative radix-2 transform; every other length uses the direct O(C^2) sums.
# The adjoint (backward) kernels always use direct sums - they are linear maps
# and only need to be the exact transpose of this forward definition.

def _is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


def _fft_radix2(re, im, n):
    """In-place complex radix-2 FFT (n must be a power of two)."""
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j |= bit
        if i < j:
            re[i], re[j] = re[j], re[i]
            im[i], im[j] = im[j], im[i]
    m = 2
    while m <= n:
        half = m >> 1
        for jj in range(half):
            ang = (-2.0 * _PI * jj) / m
            wr = math.cos(ang)
            wi = math.sin(ang)
            for kk in range(jj, n, m):
                lo = kk
                hi2 = kk + half
                tr = wr * re[hi2] - wi * im[hi2]
                ti = wr * im[hi2] + wi * re[hi2]
                re[hi2] = re[lo] - tr
                im[hi2] = im[lo] - ti
                re[lo] = re[lo] + tr
                im[lo] = im[lo] + ti
        m <<= 1


def rfft_fwd(x, re, im, B, C, d):
    H = C // 2 + 1
    pow2 = _is_pow2(C)
    wre = [0.0] * C
    wim = [0.0] * C
    for b in range(B):
        xo = b * C * d
        so = b * H * d
        for j in range(d):
            if pow2:
                for c in range(C):
                    wre[c] = x[xo + c * d + j] + 0.0
                    wim[c] = 0.0
                _fft_radix2(wre, wim, C)
                for k in range(H):
                    re[so + k * d + j] = wre[k]
                    im[so + k * d + j] = wim[k]
            else:
                for k in range(H):
                    sr = 0.0
                    si = 0.0
                    for c in range(C):
                        ang = (-2.0 * _PI * ((k * c) % C)) / C
                        v = x[xo + c * d + j]
                        sr += v * math.cos(ang)
                        si += v * math.sin(ang)
                    re[so + k * d + j] = sr
                    im[so + k * d + j] = si


def rfft_bwd(gre, gim, gx, B, C, d):
    """Adjoint of rfft_fwd; accumulates into gx."""
    H = C // 2 + 1
    for b in range(B):
        xo = b * C * d
        so = b * H * d
        for j in range(d):
            for c in range(C):
                acc = 0.0
                for k in range(H):
                    ang = (-2.0 * _PI * ((k * c) % C)) / C
                    acc += gre[so + k * d + j] * math.cos(ang)
                    acc += gim[so + k * d + j] * math.sin(ang)
                gx[xo + c * d + j] = gx[xo + c * d + j] + acc


def irfft_fwd(re, im, out, B, C, d):
    """Inverse of rfft_fwd back to a real signal of length C.

    The imaginary parts of the DC bin (and the Nyquist bin for even C) are
    ignored, as Hermitian symmetry forces them to zero.
    """
    H = C // 2 + 1
    pow2 = _is_pow2(C)
    K = (C - 1) // 2  # bins that appear twice in the Hermitian extension
    wre = [0.0] * C
    wim = [0.0] * C
    inv = 1.0 / C
    for b in range(B):
        xo = b * C * d
        so = b * H * d
        for j in range(d):
            if pow2:
                # ifft(X) = conj(fft(conj(Xfull))) / C with Hermitian Xfull.
                wre[0] = re[so + j] + 0.0
                wim[0] = 0.0
                for k in range(1, H):
                    wre[k] = re[so + k * d + j] + 0.0
                    wim[k] = -(im[so + k * d + j] + 0.0)
                if C % 2 == 0:
                    wim[C // 2] = 0.0
                for k in range(H, C):
                    wre[k] = wre[C - k]
                    wim[k] = -wim[C - k]
                _fft_radix2(wre, wim, C)
                for c in range(C):
                    out[xo + c * d + j] = wre[c] * inv
            else:
                for c in range(C):
                    acc = re[so + j]
                    for k in range(1, K + 1):
                        ang = (2.0 * _PI * ((k * c) % C)) / C
                        acc += 2.0 * (re[so + k * d + j] * math.cos(ang)
                                      - im[so + k * d + j] * math.sin(ang))
                    if C % 2 == 0:
                        nyq = re[so + (C // 2) * d + j]
                        acc += nyq if c % 2 == 0 else -nyq
                    out[xo + c * d + j] = acc * inv


def irfft_bwd(g, gre, gim, B, C, d):
    """Adjoint of irfft_fwd; accumulates into gre/gim."""
    H = C // 2 + 1
    K = (C - 1) // 2
    inv = 1.0 / C
    for b in range(B):
        xo = b * C * d
        so = b * H * d
        for j in range(d):
            acc0 = 0.0
            for c in range(C):
                acc0 += g[xo + c * d + j]
            gre[so + j] = gre[so + j] + acc0 * inv
            for k in range(1, K + 1):
                ar = 0.0
                ai = 0.0
                for c in range(C):
                    ang = (2.0 * _PI * ((k * c) % C)) / C
                    gv = g[xo + c * d + j]
                    ar += gv * math.cos(ang)
                    ai -= gv * math.sin(ang)
                gre[so + k * d + j] = gre[so + k * d + j] + 2.0 * inv * ar
                gim[so + k * d + j] = gim[so + k * d + j] + 2.0 * inv * ai
            if C % 2 == 0:
                accn = 0.0
                for c in range(C):
                    gv = g[xo + c * d + j]
                    accn += gv if c % 2 == 0 else -gv
                kn = C // 2
                gre[so + kn * d + j] = gre[so + kn * d + j] + accn * inv


def cmul_fwd(are, aim, bre, bim, outre, outim, n):
    for i in range(n):
        ar = are[i]
        ai = aim[i]
        br = bre[i]
        bi = bim[i]
        outre[i] = ar * br - ai * bi
        outim[i] = ar * bi + ai * br



def cmul_conj_accum(bre, bim, gre, gim, outre, outim, n):
    """out += conj(b) * g, the gradient of a complex product w.r.t. the other
    factor."""
    for i in range(n):
        br = bre[i]
        bi = bim[i]
        gr = gre[i]
        gi = gim[i]
        outre[i] = outre[i] + br * gr + bi * gi
        outim[i] = outim[i] + br * gi - bi * gr


# ---------------------------------------------------------------------------
# gather / scatter
# ---------------------------------------------------------------------------

def gather_rows(table, ids, out, n_ids, d):
    for i in range(n_ids):
        to = ids[i] * d
        oo = i * d
        for j in range(d):
            out[oo + j] = table[to + j]


def scatter_add_rows(g, ids, gtable, n_ids, d):
    for i in range(n_ids):
        to = ids[i] * d
        go = i * d
        for j in range(d):
            gtable[to + j] = gtable[to + j] + g[go + j]


def gather_positions(x, pos, out, B, L, d):
    """out[b] = x[b, pos[b], :]"""
    for b in range(B):
        xo = (b * L + pos[b]) * d
        oo = b * d
        for j in range(d):
            out[oo + j] = x[xo + j]


def scatter_positions_add(g, pos, gx, B, L, d):
    for b in range(B):
        xo = (b * L + pos[b]) * d
        go = b * d
        for j in range(d):
            gx[xo + j] = gx[xo + j] + g[go + j]


def masked_mean_mid_fwd(x, mask, out, B, C, d):
    """out[b] = mean over slots c with mask[b,c] != 0 of x[b,c,:].

    Rows with no valid slot produce zeros.
    """
    for b in range(B):
        cnt = 0
        for c in range(C):
            if mask[b * C + c]:
                cnt += 1
        oo = b * d
        if cnt == 0:
            for j in range(d):
                out[oo + j] = 0.0
            continue
        inv = 1.0 / cnt
        for j in range(d):
            acc = 0.0
            for c in range(C):
                if mask[b * C + c]:
                    acc += x[(b * C + c) * d + j]
            out[oo + j] = acc * inv


def masked_mean_mid_bwd(g, mask, gx, B, C, d):
    for b in range(B):
        cnt = 0
        for c in range(C):
            if mask[b * C + c]:
                cnt += 1
        if cnt == 0:
            continue
        inv = 1.0 / cnt
        go = b * d
        for c in range(C):
            if mask[b * C + c]:
                xo = (b * C + c) * d
                for j in range(d):
                    gx[xo + j] = gx[xo + j] + g[go + j] * inv


# ---------------------------------------------------------------------------
# last-dim concat / slice
# ---------------------------------------------------------------------------

def concat2_lastdim(a, b, out, rows, da, db):
    dt = da + db
    for r in range(rows):
        ao = r * da
        bo = r * db
        oo = r * dt
        for j in range(da):
            out[oo + j] = a[ao + j]
        for j in range(db):
            out[oo + da + j] = b[bo + j]


def slice_lastdim(x, out, rows, dtot, start, width):
    for r in range(rows):
        xo = r * dtot + start
        oo = r * width
        for j in range(width):
            out[oo + j] = x[xo + j]


def slice_lastdim_add(g, gx, rows, dtot, start, width):
    for r in range(rows):
        xo = r * dtot + start
        go = r * width
        for j in range(width):
            gx[xo + j] = gx[xo + j] + g[go + j]


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(p, g, m, v, t, lr, b1, b2, eps, n):
    """Bias-corrected Adam update for step number t (1-based).

    Returns 0 on success, 1 if any gradient element is non-finite (the
    parameters are left untouched in that case).
    """
    for i in range(n):
        if not math.isfinite(g[i]):
            return 1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i in range(n):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] = p[i] - lr * (mi / c1) / (math.sqrt(vi / c2) + eps)
    return 0
