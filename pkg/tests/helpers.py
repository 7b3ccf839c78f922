"""Shared test utilities."""

from roundrec.compute import RngState, Tensor


def rand_tensor(shape, rng: RngState, lo=-1.0, hi=1.0, dtype="f", requires_grad=False):
    return Tensor.rand_uniform(shape, lo, hi, rng, dtype, requires_grad=requires_grad)


def rand_tensor_away_from_zero(shape, rng: RngState, dtype="d", requires_grad=False,
                               min_abs=0.05):
    """Uniform magnitudes in [min_abs, 1] with random signs; keeps finite
    differences away from relu/clamp kinks."""
    t = Tensor.zeros(shape, dtype, requires_grad=requires_grad)
    for i in range(t.size):
        mag = rng.uniform(min_abs, 1.0)
        t.data[i] = mag if rng.uniform() < 0.5 else -mag
    return t


def max_abs_diff(a, b):
    va = a.tolist() if isinstance(a, Tensor) else list(a)
    vb = b.tolist() if isinstance(b, Tensor) else list(b)
    assert len(va) == len(vb)
    return max((abs(x - y) for x, y in zip(va, vb)), default=0.0)
