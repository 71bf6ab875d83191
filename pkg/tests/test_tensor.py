import numpy as np
import pytest

from diopt.tensor import Tensor, f32, f64, i8


class TestTensorInvariants:
    def test_flat_length_matches_shape(self):
        t = f32([[1, 2, 3], [4, 5, 6]])
        assert t.shape == (2, 3)
        assert len(t.flat) == 6
        assert t.flat.tolist() == [1, 2, 3, 4, 5, 6]  # row-major

    def test_elem_kinds(self):
        assert f32([1.0]).elem_kind == "f32"
        assert f64([1.0]).elem_kind == "f64"
        assert i8([1], scale=0.5).elem_kind == "i8"

    def test_quant_scale_required_for_i8(self):
        with pytest.raises(ValueError):
            Tensor(np.array([1], dtype=np.int8))

    def test_quant_scale_rejected_for_float(self):
        with pytest.raises(ValueError):
            Tensor(np.array([1.0], dtype=np.float32), quant_scale=0.1)

    def test_quant_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            i8([1], scale=0.0)
        with pytest.raises(ValueError):
            i8([1], scale=-1.0)

    def test_unsupported_dtype_rejected(self):
        with pytest.raises(ValueError):
            Tensor(np.array([1, 2], dtype=np.int32))


class TestByteSize:
    def test_float_sizes(self):
        assert f32(np.zeros(33)).byte_size() == 132
        assert f64(np.zeros(10)).byte_size() == 80

    def test_i8_includes_scale(self):
        assert i8(np.zeros(33, dtype=np.int8), scale=0.1).byte_size() == 37

    def test_dequantized(self):
        t = i8([-127, 64, 0], scale=0.5)
        np.testing.assert_allclose(t.dequantized(), [-63.5, 32.0, 0.0])
