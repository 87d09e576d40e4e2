import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bubbletree import io, modulation as M, profiles as P

finite = st.floats(allow_nan=False, allow_infinity=False)
radii = st.floats(min_value=1e-3, max_value=1e3)


@given(finite)
def test_format_round_trip(x):
    assert float(io.format_value(x)) == x


@given(radii)
def test_trig_identity(R):
    s, c = P.trig_composites(R)
    assert abs(s * s + c * c - 1) < 1e-12


@given(st.floats(min_value=1e-2, max_value=10.0))
def test_zero_mode_is_scaling_derivative(R):
    # past R ~ 10 the difference of Q ~ pi cancels too many digits
    h = 1e-6 * R
    d = (P.bubble_profile(R + h) - P.bubble_profile(R - h)) / (2 * h)
    assert R * d == pytest.approx(P.zero_mode(R), rel=1e-6, abs=1e-12)


@given(st.floats(min_value=-0.9, max_value=0.9), st.floats(min_value=-5, max_value=5))
@settings(max_examples=50)
def test_picard_linear_fixed_point(alpha, d):
    res = M.picard_m(lambda m: alpha * m, np.full(3, d), steps=400)
    assert np.allclose(res.m, d / (1 - alpha), rtol=1e-8, atol=1e-10)
