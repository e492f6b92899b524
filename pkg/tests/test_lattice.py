import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qwscatter.errors import ConfigurationError, WindowError
from qwscatter.lattice import NormSpec, Outside, SpinorField, bracket, l1_norm, sup_norm, weighted_norm


def test_bracket_values():
    assert bracket(0) == 1.0
    assert bracket(1) == pytest.approx(1.41421356, abs=1e-8)
    assert bracket(-3) == pytest.approx(np.sqrt(10), abs=1e-15)


@given(st.integers(-(10**6), 10**6))
def test_bracket_even_and_at_least_one(x):
    assert bracket(x) == bracket(-x)
    assert bracket(x) >= 1.0


def test_weighted_norm_examples():
    assert weighted_norm(SpinorField.delta((-3, 3), 0), NormSpec(2, 0)) == 1.0
    assert weighted_norm(SpinorField.delta((-3, 3), 2), NormSpec(1, 1)) == pytest.approx(np.sqrt(5), abs=1e-15)
    u = SpinorField(0, [[1, 0], [0, 1]])
    assert weighted_norm(u, NormSpec(np.inf, 0)) == 1.0


def test_unsupported_norm():
    with pytest.raises(ConfigurationError):
        NormSpec(3, 0)
    with pytest.raises(ConfigurationError):
        NormSpec(2, 0.5)


def test_zero_outside_and_window_checks():
    u = SpinorField.delta((0, 4), 2, (1, 2j))
    assert np.all(u[10] == 0) and u[2][1] == 2j
    assert u.support() == (2, 2)
    with pytest.raises(WindowError):
        u + SpinorField.zeros((0, 5))
    with pytest.raises(WindowError):
        SpinorField.delta((0, 4), 9)
    with pytest.raises(ValueError):
        u.values[0, 0] = 1  # read-only storage


def test_restrict_and_json_roundtrip():
    u = SpinorField(-2, np.arange(10).reshape(5, 2) * (1 + 1j))
    v = u.restrict((-4, 0))
    assert v.window == (-4, 0) and np.all(v[-4] == 0) and np.all(v[0] == u[0])
    recs = json.loads(u.to_json())
    assert set(recs[0]) == {"x", "up_re", "up_im", "down_re", "down_im"}
    assert SpinorField.from_json(u.to_json()) == u


fields = st.lists(
    st.tuples(
        st.complex_numbers(max_magnitude=1e3, allow_nan=False), st.complex_numbers(max_magnitude=1e3, allow_nan=False)
    ),
    min_size=1,
    max_size=30,
).map(lambda rows: SpinorField(-7, np.array(rows, dtype=complex)))


@settings(max_examples=60, deadline=None)
@given(fields, fields, st.sampled_from([1, 2, np.inf]), st.sampled_from([0, 1, 2]))
def test_norm_axioms(u, v, p, s):
    n = max(len(u), len(v))
    u, v = u.restrict((-7, -7 + n - 1)), v.restrict((-7, -7 + n - 1))
    spec = NormSpec(p, s)
    assert weighted_norm(u + v, spec) <= weighted_norm(u, spec) + weighted_norm(v, spec) + 1e-12 * (
        1 + weighted_norm(u, spec) + weighted_norm(v, spec)
    )
    c = 2.5 - 1j
    assert weighted_norm(c * u, spec) == pytest.approx(abs(c) * weighted_norm(u, spec), rel=1e-12, abs=1e-300)
    assert (weighted_norm(u, spec) == 0) == (u.support() is None)


@settings(max_examples=60, deadline=None)
@given(fields)
def test_monotone_in_sigma(u):
    a, b, c = (weighted_norm(u, NormSpec(1, s)) for s in (0, 1, 2))
    assert a <= b * (1 + 1e-12) and b <= c * (1 + 1e-12)
    assert sup_norm(u) <= l1_norm(u) * (1 + 1e-12)


def test_outside_convention_kept():
    u = SpinorField.zeros((0, 3), Outside.FREE_EXTENSION)
    assert u.restrict((0, 5)).outside is Outside.FREE_EXTENSION
