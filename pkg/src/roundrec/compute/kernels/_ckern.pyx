# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels.

Semantics (including floating-point rounding) match pykernels.py exactly:
double-precision accumulation, results stored through the buffer dtype. The
parity test suite asserts bit-identical outputs between the two backends.
"""

from libc.math cimport cos, exp, isfinite, log, pow, sin, sqrt, tanh
from libc.stdint cimport uint64_t
from libc.stdlib cimport free, malloc

BACKEND = "cython"

ctypedef fused real:
    float
    double

cdef double _PI = 3.141592653589793
cdef double _INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _stream(uint64_t seed, uint64_t counter) nogil:
    cdef uint64_t z = seed + (counter + 1) * (<uint64_t>0x9E3779B97F4A7C15)
    z = (z ^ (z >> 30)) * (<uint64_t>0xBF58476D1CE4E5B9)
    z = (z ^ (z >> 27)) * (<uint64_t>0x94D049BB133111EB)
    return z ^ (z >> 31)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def bmm(real[::1] a, real[::1] b, real[::1] out,
        Py_ssize_t B, Py_ssize_t n, Py_ssize_t k, Py_ssize_t m,
        bint trans_a, bint trans_b, bint accumulate):
    cdef Py_ssize_t bi, i, j, l, ao, bo, co
    cdef double acc
    with nogil:
        for bi in range(B):
            ao = bi * n * k
            bo = bi * k * m
            co = bi * n * m
            for i in range(n):
                for j in range(m):
                    acc = out[co + i * m + j] if accumulate else 0.0
                    if not trans_a and not trans_b:
                        for l in range(k):
                            acc += (<double>a[ao + i * k + l]) * (<double>b[bo + l * m + j])
                    elif not trans_a and trans_b:
                        for l in range(k):
                            acc += (<double>a[ao + i * k + l]) * (<double>b[bo + j * k + l])
                    elif trans_a and not trans_b:
                        for l in range(k):
                            acc += (<double>a[ao + l * n + i]) * (<double>b[bo + l * m + j])
                    else:
                        for l in range(k):
                            acc += (<double>a[ao + l * n + i]) * (<double>b[bo + j * k + l])
                    out[co + i * m + j] = <real>acc


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def ew_add(real[::1] a, real[::1] b, real[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = <real>((<double>a[i]) + (<double>b[i]))


def ew_sub(real[::1] a, real[::1] b, real[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = <real>((<double>a[i]) - (<double>b[i]))


def ew_mul(real[::1] a, real[::1] b, real[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = <real>((<double>a[i]) * (<double>b[i]))


def ew_axpy(double alpha, real[::1] x, real[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = <real>(out[i] + alpha * x[i])


def ew_scale(real[::1] x, double alpha, real[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = <real>(alpha * x[i])


def ew_add_scalar(real[::1] x, double c, real[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = <real>(x[i] + c)


def ew_mul_accum(real[::1] a, real[::1] b, real[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = <real>(out[i] + (<double>a[i]) * (<double>b[i]))


def add_bias(real[::1] x, real[::1] bias, real[::1] out,
             Py_ssize_t rows, Py_ssize_t cols):
    cdef Py_ssize_t r, j, off
    with nogil:
        for r in range(rows):
            off = r * cols
            for j in range(cols):
                out[off + j] = <real>((<double>x[off + j]) + (<double>bias[j]))


def col_sum_accum(real[::1] g, real[::1] out, Py_ssize_t rows, Py_ssize_t cols):
    cdef Py_ssize_t r, j
    cdef double acc
    with nogil:
        for j in range(cols):
            acc = out[j] + 0.0
            for r in range(rows):
                acc += g[r * cols + j]
            out[j] = <real>acc


def scale_rows(real[::1] x, real[::1] w, real[::1] out,
               Py_ssize_t rows, Py_ssize_t cols, bint accumulate):
    cdef Py_ssize_t r, j, off
    cdef double wr, v
    with nogil:
        for r in range(rows):
            wr = w[r]
            off = r * cols
            for j in range(cols):
                v = x[off + j] * wr
                out[off + j] = <real>((out[off + j] + v) if accumulate else v)


def reduce_sum(real[::1] x, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double acc = 0.0
    with nogil:
        for i in range(n):
            acc += x[i]
    return acc


def isfinite_all(real[::1] x, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            if not isfinite(x[i]):
                with gil:
                    return 0
    return 1


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu_fwd(real[::1] x, real[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v
    with nogil:
        for i in range(n):
            v = x[i]
            out[i] = <real>(v if v > 0.0 else 0.0)


def relu_bwd(real[::1] x, real[::1] g, real[::1] gx, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            if x[i] > 0.0:
                gx[i] = <real>(gx[i] + g[i])


def tanh_fwd(real[::1] x, real[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = <real>tanh(<double>x[i])


def tanh_bwd(real[::1] y, real[::1] g, real[::1] gx, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double yi
    with nogil:
        for i in range(n):
            yi = y[i]
            gx[i] = <real>(gx[i] + g[i] * (1.0 - yi * yi))


def sigmoid_fwd(real[::1] x, real[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v, e
    with nogil:
        for i in range(n):
            v = x[i]
            if v >= 0.0:
                out[i] = <real>(1.0 / (1.0 + exp(-v)))
            else:
                e = exp(v)
                out[i] = <real>(e / (1.0 + e))


def sigmoid_bwd(real[::1] y, real[::1] g, real[::1] gx, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double yi
    with nogil:
        for i in range(n):
            yi = y[i]
            gx[i] = <real>(gx[i] + g[i] * yi * (1.0 - yi))


def log_clamped_fwd(real[::1] x, double floor, real[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v
    with nogil:
        for i in range(n):
            v = x[i]
            out[i] = <real>log(v if v > floor else floor)


def log_clamped_bwd(real[::1] x, double floor, real[::1] g, real[::1] gx,
                    Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v
    with nogil:
        for i in range(n):
            v = x[i]
            if v > floor:
                gx[i] = <real>(gx[i] + g[i] / v)


# ---------------------------------------------------------------------------
# layer normalization
# ---------------------------------------------------------------------------

def layernorm_fwd(real[::1] x, real[::1] gamma, real[::1] beta, double eps,
                  real[::1] out, real[::1] xhat, real[::1] inv_std,
                  Py_ssize_t rows, Py_ssize_t cols):
    cdef Py_ssize_t r, j, off
    cdef double mean, var, dd, s, h
    with nogil:
        for r in range(rows):
            off = r * cols
            mean = 0.0
            for j in range(cols):
                mean += x[off + j]
            mean /= cols
            var = 0.0
            for j in range(cols):
                dd = x[off + j] - mean
                var += dd * dd
            var /= cols
            s = 1.0 / sqrt(var + eps)
            inv_std[r] = <real>s
            for j in range(cols):
                h = (x[off + j] - mean) * s
                xhat[off + j] = <real>h
                out[off + j] = <real>(h * gamma[j] + beta[j])


def layernorm_bwd(real[::1] g, real[::1] xhat, real[::1] inv_std,
                  real[::1] gamma, real[::1] gx, real[::1] ggamma,
                  real[::1] gbeta, Py_ssize_t rows, Py_ssize_t cols):
    cdef Py_ssize_t r, j, off
    cdef double s, mean_dh, mean_dh_xhat, dh, h
    with nogil:
        for r in range(rows):
            off = r * cols
            s = inv_std[r]
            mean_dh = 0.0
            mean_dh_xhat = 0.0
            for j in range(cols):
                dh = (<double>g[off + j]) * (<double>gamma[j])
                h = xhat[off + j]
                mean_dh += dh
                mean_dh_xhat += dh * h
            mean_dh /= cols
            mean_dh_xhat /= cols
            for j in range(cols):
                dh = (<double>g[off + j]) * (<double>gamma[j])
                h = xhat[off + j]
                gx[off + j] = <real>(gx[off + j] + s * (dh - mean_dh - h * mean_dh_xhat))
                ggamma[j] = <real>(ggamma[j] + g[off + j] * h)
                gbeta[j] = <real>(gbeta[j] + g[off + j])


# ---------------------------------------------------------------------------
# masked softmax
# ---------------------------------------------------------------------------

def masked_softmax_fwd(real[::1] scores, signed char[::1] mask, real[::1] out,
                       Py_ssize_t rows, Py_ssize_t cols):
    cdef Py_ssize_t r, j, off
    cdef double hi, total, e, v
    cdef int any_valid
    with nogil:
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
                with gil:
                    return r
            total = 0.0
            for j in range(cols):
                if mask[off + j]:
                    e = exp(scores[off + j] - hi)
                    out[off + j] = <real>e
                    total += e
                else:
                    out[off + j] = 0.0
            for j in range(cols):
                if mask[off + j]:
                    out[off + j] = <real>(out[off + j] / total)
    return -1


def masked_softmax_bwd(real[::1] y, real[::1] g, signed char[::1] mask,
                       real[::1] gx, Py_ssize_t rows, Py_ssize_t cols):
    cdef Py_ssize_t r, j, off
    cdef double dot
    with nogil:
        for r in range(rows):
            off = r * cols
            dot = 0.0
            for j in range(cols):
                if mask[off + j]:
                    dot += (<double>g[off + j]) * (<double>y[off + j])
            for j in range(cols):
                if mask[off + j]:
                    gx[off + j] = <real>(gx[off + j] + y[off + j] * (g[off + j] - dot))


# ---------------------------------------------------------------------------
# dropout / random fills
# ---------------------------------------------------------------------------

def dropout_fwd(real[::1] x, real[::1] out, signed char[::1] mask, double p,
                unsigned long long seed, unsigned long long counter,
                Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double scale = 1.0 / (1.0 - p)
    cdef double u
    with nogil:
        for i in range(n):
            u = (_stream(seed, counter + i) >> 11) * _INV_2_53
            if u >= p:
                mask[i] = 1
                out[i] = <real>(x[i] * scale)
            else:
                mask[i] = 0
                out[i] = 0.0
    return counter + n


def dropout_bwd(real[::1] g, signed char[::1] mask, double p, real[::1] gx,
                Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double scale = 1.0 / (1.0 - p)
    with nogil:
        for i in range(n):
            if mask[i]:
                gx[i] = <real>(gx[i] + g[i] * scale)


def fill_uniform(real[::1] buf, double lo, double hi,
                 unsigned long long seed, unsigned long long counter,
                 Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double span = hi - lo
    cdef double u
    with nogil:
        for i in range(n):
            u = (_stream(seed, counter + i) >> 11) * _INV_2_53
            buf[i] = <real>(lo + span * u)
    return counter + n


# ---------------------------------------------------------------------------
# FFT along the middle axis of a (B, C, d) tensor
# ---------------------------------------------------------------------------

cdef inline bint _is_pow2(Py_ssize_t n) nogil:
    return n > 0 and (n & (n - 1)) == 0


cdef void _fft_radix2(double* re, double* im, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j, bit, m, half, jj, kk, lo, hi2
    cdef double ang, wr, wi, tr, ti, tmp
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j |= bit
        if i < j:
            tmp = re[i]; re[i] = re[j]; re[j] = tmp
            tmp = im[i]; im[i] = im[j]; im[j] = tmp
    m = 2
    while m <= n:
        half = m >> 1
        for jj in range(half):
            ang = (-2.0 * _PI * jj) / m
            wr = cos(ang)
            wi = sin(ang)
            kk = jj
            while kk < n:
                lo = kk
                hi2 = kk + half
                tr = wr * re[hi2] - wi * im[hi2]
                ti = wr * im[hi2] + wi * re[hi2]
                re[hi2] = re[lo] - tr
                im[hi2] = im[lo] - ti
                re[lo] = re[lo] + tr
                im[lo] = im[lo] + ti
                kk += m
        m <<= 1


def rfft_fwd(real[::1] x, real[::1] re, real[::1] im,
             Py_ssize_t B, Py_ssize_t C, Py_ssize_t d):
    cdef Py_ssize_t H = C // 2 + 1
    cdef bint pow2 = _is_pow2(C)
    cdef Py_ssize_t b, j, c, k, xo, so
    cdef double sr, si, ang, v
    cdef double* wre = <double*>malloc(C * sizeof(double))
    cdef double* wim = <double*>malloc(C * sizeof(double))
    if wre == NULL or wim == NULL:
        free(wre); free(wim)
        raise MemoryError()
    with nogil:
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
                        re[so + k * d + j] = <real>wre[k]
                        im[so + k * d + j] = <real>wim[k]
                else:
                    for k in range(H):
                        sr = 0.0
                        si = 0.0
                        for c in range(C):
                            ang = (-2.0 * _PI * ((k * c) % C)) / C
                            v = x[xo + c * d + j]
                            sr += v * cos(ang)
                            si += v * sin(ang)
                        re[so + k * d + j] = <real>sr
                        im[so + k * d + j] = <real>si
    free(wre)
    free(wim)


def rfft_bwd(real[::1] gre, real[::1] gim, real[::1] gx,
             Py_ssize_t B, Py_ssize_t C, Py_ssize_t d):
    cdef Py_ssize_t H = C // 2 + 1
    cdef Py_ssize_t b, j, c, k, xo, so
    cdef double acc, ang
    with nogil:
        for b in range(B):
            xo = b * C * d
            so = b * H * d
            for j in range(d):
                for c in range(C):
                    acc = 0.0
                    for k in range(H):
                        ang = (-2.0 * _PI * ((k * c) % C)) / C
                        acc += gre[so + k * d + j] * cos(ang)
                        acc += gim[so + k * d + j] * sin(ang)
                    gx[xo + c * d + j] = <real>(gx[xo + c * d + j] + acc)


def irfft_fwd(real[::1] re, real[::1] im, real[::1] out,
              Py_ssize_t B, Py_ssize_t C, Py_ssize_t d):
    cdef Py_ssize_t H = C // 2 + 1
    cdef bint pow2 = _is_pow2(C)
    cdef Py_ssize_t K = (C - 1) // 2
    cdef Py_ssize_t b, j, c, k, xo, so
    cdef double acc, ang, nyq
    cdef double inv = 1.0 / C
    cdef double* wre = <double*>malloc(C * sizeof(double))
    cdef double* wim = <double*>malloc(C * sizeof(double))
    if wre == NULL or wim == NULL:
        free(wre); free(wim)
        raise MemoryError()
    with nogil:
        for b in range(B):
            xo = b * C * d
            so = b * H * d
            for j in range(d):
                if pow2:
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
                        out[xo + c * d + j] = <real>(wre[c] * inv)
                else:
                    for c in range(C):
                        acc = re[so + j]
                        for k in range(1, K + 1):
                            ang = (2.0 * _PI * ((k * c) % C)) / C
                            acc += 2.0 * (re[so + k * d + j] * cos(ang)
                                          - im[so + k * d + j] * sin(ang))
                        if C % 2 == 0:
                            nyq = re[so + (C // 2) * d + j]
                            acc += nyq if c % 2 == 0 else -nyq
                        out[xo + c * d + j] = <real>(acc * inv)
    free(wre)
    free(wim)


def irfft_bwd(real[::1] g, real[::1] gre, real[::1] gim,
              Py_ssize_t B, Py_ssize_t C, Py_ssize_t d):
    cdef Py_ssize_t H = C // 2 + 1
    cdef Py_ssize_t K = (C - 1) // 2
    cdef double inv = 1.0 / C
    cdef Py_ssize_t b, j, c, k, kn, xo, so
    cdef double acc0, ar, ai, ang, gv, accn
    with nogil:
        for b in range(B):
            xo = b * C * d
            so = b * H * d
            for j in range(d):
                acc0 = 0.0
                for c in range(C):
                    acc0 += g[xo + c * d + j]
                gre[so + j] = <real>(gre[so + j] + acc0 * inv)
                for k in range(1, K + 1):
                    ar = 0.0
                    ai = 0.0
                    for c in range(C):
                        ang = (2.0 * _PI * ((k * c) % C)) / C
                        gv = g[xo + c * d + j]
                        ar += gv * cos(ang)
                        ai -= gv * sin(ang)
                    gre[so + k * d + j] = <real>(gre[so + k * d + j] + 2.0 * inv * ar)
                    gim[so + k * d + j] = <real>(gim[so + k * d + j] + 2.0 * inv * ai)
                if C % 2 == 0:
                    accn = 0.0
                    for c in range(C):
                        gv = g[xo + c * d + j]
                        accn += gv if c % 2 == 0 else -gv
                    kn = C // 2
                    gre[so + kn * d + j] = <real>(gre[so + kn * d + j] + accn * inv)


def cmul_fwd(real[::1] are, real[::1] aim, real[::1] bre, real[::1] bim,
             real[::1] outre, real[::1] outim, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double ar, ai, br, bi
    with nogil:
        for i in range(n):
            ar = are[i]
            ai = aim[i]
            br = bre[i]
            bi = bim[i]
            outre[i] = <real>(ar * br - ai * bi)
            outim[i] = <real>(ar * bi + ai * br)


def cmul_conj_accum(real[::1] bre, real[::1] bim, real[::1] gre, real[::1] gim,
                    real[::1] outre, real[::1] outim, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double br, bi, gr, gi
    with nogil:
        for i in range(n):
            br = bre[i]
            bi = bim[i]
            gr = gre[i]
            gi = gim[i]
            outre[i] = <real>(outre[i] + br * gr + bi * gi)
            outim[i] = <real>(outim[i] + br * gi - bi * gr)


# ---------------------------------------------------------------------------
# gather / scatter
# ---------------------------------------------------------------------------

def gather_rows(real[::1] table, long long[::1] ids, real[::1] out,
                Py_ssize_t n_ids, Py_ssize_t d):
    cdef Py_ssize_t i, j, to, oo
    with nogil:
        for i in range(n_ids):
            to = ids[i] * d
            oo = i * d
            for j in range(d):
                out[oo + j] = table[to + j]


def scatter_add_rows(real[::1] g, long long[::1] ids, real[::1] gtable,
                     Py_ssize_t n_ids, Py_ssize_t d):
    cdef Py_ssize_t i, j, to, go
    with nogil:
        for i in range(n_ids):
            to = ids[i] * d
            go = i * d
            for j in range(d):
                gtable[to + j] = <real>(gtable[to + j] + g[go + j])


def gather_positions(real[::1] x, long long[::1] pos, real[::1] out,
                     Py_ssize_t B, Py_ssize_t L, Py_ssize_t d):
    cdef Py_ssize_t b, j, xo, oo
    with nogil:
        for b in range(B):
            xo = (b * L + pos[b]) * d
            oo = b * d
            for j in range(d):
                out[oo + j] = x[xo + j]


def scatter_positions_add(real[::1] g, long long[::1] pos, real[::1] gx,
                          Py_ssize_t B, Py_ssize_t L, Py_ssize_t d):
    cdef Py_ssize_t b, j, xo, go
    with nogil:
        for b in range(B):
            xo = (b * L + pos[b]) * d
            go = b * d
            for j in range(d):
                gx[xo + j] = <real>(gx[xo + j] + g[go + j])


def masked_mean_mid_fwd(real[::1] x, signed char[::1] mask, real[::1] out,
                        Py_ssize_t B, Py_ssize_t C, Py_ssize_t d):
    cdef Py_ssize_t b, c, j, cnt, oo
    cdef double inv, acc
    with nogil:
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
                out[oo + j] = <real>(acc * inv)


def masked_mean_mid_bwd(real[::1] g, signed char[::1] mask, real[::1] gx,
                        Py_ssize_t B, Py_ssize_t C, Py_ssize_t d):
    cdef Py_ssize_t b, c, j, cnt, go, xo
    cdef double inv
    with nogil:
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
                        gx[xo + j] = <real>(gx[xo + j] + g[go + j] * inv)


# ---------------------------------------------------------------------------
# last-dim concat / slice
# ---------------------------------------------------------------------------

def concat2_lastdim(real[::1] a, real[::1] b, real[::1] out,
                    Py_ssize_t rows, Py_ssize_t da, Py_ssize_t db):
    cdef Py_ssize_t dt = da + db
    cdef Py_ssize_t r, j, ao, bo, oo
    with nogil:
        for r in range(rows):
            ao = r * da
            bo = r * db
            oo = r * dt
            for j in range(da):
                out[oo + j] = a[ao + j]
            for j in range(db):
                out[oo + da + j] = b[bo + j]


def slice_lastdim(real[::1] x, real[::1] out, Py_ssize_t rows,
                  Py_ssize_t dtot, Py_ssize_t start, Py_ssize_t width):
    cdef Py_ssize_t r, j, xo, oo
    with nogil:
        for r in range(rows):
            xo = r * dtot + start
            oo = r * width
            for j in range(width):
                out[oo + j] = x[xo + j]


def slice_lastdim_add(real[::1] g, real[::1] gx, Py_ssize_t rows,
                      Py_ssize_t dtot, Py_ssize_t start, Py_ssize_t width):
    cdef Py_ssize_t r, j, xo, go
    with nogil:
        for r in range(rows):
            xo = r * dtot + start
            go = r * width
            for j in range(width):
                gx[xo + j] = <real>(gx[xo + j] + g[go + j])


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(real[::1] p, real[::1] g, real[::1] m, real[::1] v, long t,
              double lr, double b1, double b2, double eps, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double c1, c2, gi, mi, vi
    with nogil:
        for i in range(n):
            if not isfinite(g[i]):
                with gil:
                    return 1
        c1 = 1.0 - pow(b1, t)
        c2 = 1.0 - pow(b2, t)
        for i in range(n):
            gi = g[i]
            mi = b1 * m[i] + (1.0 - b1) * gi
            vi = b2 * v[i] + (1.0 - b2) * gi * gi
            m[i] = <real>mi
            v[i] = <real>vi
            p[i] = <real>(p[i] - lr * (mi / c1) / (sqrt(vi / c2) + eps))
    return 0
