import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from qkdsim.clock import ClockModel
from qkdsim.errors import DomainError


def test_linear_model():
    m = ClockModel.linear(1000.0, 1e-6)
    assert m.apply(1e12) == pytest.approx(1e12 + 1000 + 1e6)
    assert m.slope == 1e-6


def test_piecewise_model_is_continuous():
    m = ClockModel(5.0, ((0.0, 1e-6), (1e12, -2e-6)))
    left = m.delta(1e12 - 1)
    right = m.delta(1e12)
    assert right == pytest.approx(left, abs=1e-5)
    assert m.delta(2e12) == pytest.approx(5 + 1e6 - 2e6)


@given(st.floats(-1e9, 1e9), st.floats(-1e-4, 1e-4), st.floats(-1e-4, 1e-4), st.floats(0, 1e13))
@example(off=1.0634422302246094, s1=0.0, s2=0.0, t=8796093022208.154)
def test_invert_is_inverse(off, s1, s2, t):
    m = ClockModel(off, ((0.0, s1), (3e12, s2)))
    # a few ulps of the largest operand; still far below the 1 ps tag grid
    tol = max(1e-3, 8 * float(np.spacing(abs(t) + abs(off))))
    assert m.invert(m.apply(t)) == pytest.approx(t, abs=tol)


def test_dict_roundtrip():
    m = ClockModel(12.5, ((0.0, 1e-6), (2e12, 3e-7)), 40.0, ((1e12, 1.5e12),))
    assert ClockModel.from_dict(m.to_dict()) == m


def test_validation():
    with pytest.raises(DomainError):
        ClockModel(0.0, ((1.0, 0.0), (0.5, 0.0)))
    with pytest.raises(DomainError):
        ClockModel.linear(0.0, -1.0)


def test_to_reference_is_integer():
    m = ClockModel.linear(478_120_000.0, 1e-6)
    tb = np.array([478_120_000, 1_478_121_000], np.int64)
    ref = m.to_reference(tb)
    assert ref.dtype == np.int64
    assert ref.tolist() == [0, 1_000_000_000]
