import cmath

import pytest

from roundrec.compute import (
    ComplexSpectrum,
    RngState,
    Tensor,
    complex_elementwise_mul,
    fft_real_forward,
    fft_real_inverse,
)

from helpers import max_abs_diff, rand_tensor


def dft_oracle(values):
    """Direct O(L^2) DFT, first floor(L/2)+1 bins."""
    L = len(values)
    return [sum(values[n] * cmath.exp(-2j * cmath.pi * k * n / L) for n in range(L))
            for k in range(L // 2 + 1)]


def test_constant_signal_is_dc_only():
    spec = fft_real_forward(Tensor.from_values([4.0, 4.0, 4.0, 4.0]))
    assert spec.re.tolist() == [16.0, 0.0, 0.0]
    assert spec.im.tolist() == [0.0, 0.0, 0.0]


def test_unit_impulse_has_flat_spectrum():
    spec = fft_real_forward(Tensor.from_values([1.0, 0.0, 0.0, 0.0]))
    assert spec.re.tolist() == [1.0, 1.0, 1.0]
    assert spec.im.tolist() == [0.0, 0.0, 0.0]


def test_matches_direct_dft_oracle_length7():
    rng = RngState(7)
    x = rand_tensor((7,), rng)
    spec = fft_real_forward(x)
    expected = dft_oracle(x.tolist())
    for k, z in enumerate(expected):
        assert abs(spec.re.tolist()[k] - z.real) < 1e-6
        assert abs(spec.im.tolist()[k] - z.imag) < 1e-6


@pytest.mark.parametrize("L", [3, 5, 8, 12, 16, 50])
def test_matches_direct_dft_oracle_various_lengths(L):
    rng = RngState(100 + L)
    x = rand_tensor((L,), rng)
    spec = fft_real_forward(x)
    expected = dft_oracle(x.tolist())
    for k, z in enumerate(expected):
        assert abs(spec.re.tolist()[k] - z.real) < 1e-5
        assert abs(spec.im.tolist()[k] - z.imag) < 1e-5


def test_matrix_input_transforms_each_column():
    rng = RngState(3)
    x = rand_tensor((6, 3), rng)
    spec = fft_real_forward(x)
    assert spec.shape == (4, 3)
    cols = [[x.tolist()[r * 3 + j] for r in range(6)] for j in range(3)]
    for j, col in enumerate(cols):
        expected = dft_oracle(col)
        for k, z in enumerate(expected):
            assert abs(spec.re.tolist()[k * 3 + j] - z.real) < 1e-5
            assert abs(spec.im.tolist()[k * 3 + j] - z.imag) < 1e-5


def test_inverse_of_constant_case():
    spec = ComplexSpectrum(Tensor.from_values([16.0, 0.0, 0.0]),
                           Tensor.from_values([0.0, 0.0, 0.0]))
    assert fft_real_inverse(spec, 4).tolist() == [4.0, 4.0, 4.0, 4.0]


def test_zero_spectrum_inverts_to_zero_signal():
    spec = ComplexSpectrum(Tensor.zeros((3,)), Tensor.zeros((3,)))
    assert fft_real_inverse(spec, 4).tolist() == [0.0, 0.0, 0.0, 0.0]


def test_round_trip_length_50():
    rng = RngState(50)
    x = rand_tensor((50,), rng)
    back = fft_real_inverse(fft_real_forward(x), 50)
    assert max_abs_diff(x, back) < 1e-5


@pytest.mark.parametrize("L", list(range(1, 65)))
def test_round_trip_all_lengths(L):
    rng = RngState(1000 + L)
    x = rand_tensor((L,), rng)
    back = fft_real_inverse(fft_real_forward(x), L)
    assert max_abs_diff(x, back) < 1e-5


def test_empty_signal_rejected():
    with pytest.raises(ValueError, match="empty signal"):
        fft_real_forward(Tensor.zeros((0,)))


def test_bin_count_mismatch_rejected():
    spec = ComplexSpectrum(Tensor.zeros((3,)), Tensor.zeros((3,)))
    with pytest.raises(ValueError):
        fft_real_inverse(spec, 7)


class TestComplexElementwiseMul:
    def test_identity_filter(self):
        rng = RngState(9)
        spec = fft_real_forward(rand_tensor((8,), rng))
        ones = ComplexSpectrum(Tensor.full((5,), 1.0), Tensor.zeros((5,)))
        out = complex_elementwise_mul(spec, ones)
        assert out.re.tolist() == spec.re.tolist()
        assert out.im.tolist() == spec.im.tolist()

    def test_zero_filter(self):
        rng = RngState(10)
        spec = fft_real_forward(rand_tensor((8,), rng))
        zeros = ComplexSpectrum(Tensor.zeros((5,)), Tensor.zeros((5,)))
        out = complex_elementwise_mul(spec, zeros)
        assert out.re.tolist() == [0.0] * 5
        assert out.im.tolist() == [0.0] * 5

    def test_closed_form_product(self):
        a = ComplexSpectrum(Tensor.from_values([1.0]), Tensor.from_values([1.0]))
        b = ComplexSpectrum(Tensor.from_values([1.0]), Tensor.from_values([-1.0]))
        out = complex_elementwise_mul(a, b)
        assert out.re.tolist() == [2.0]
        assert out.im.tolist() == [0.0]

    def test_shape_mismatch_rejected(self):
        a = ComplexSpectrum(Tensor.zeros((3,)), Tensor.zeros((3,)))
        b = ComplexSpectrum(Tensor.zeros((4,)), Tensor.zeros((4,)))
        with pytest.raises(ValueError):
            complex_elementwise_mul(a, b)
