import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ionsbm.observables import (
    SpinState,
    bloch_vector,
    first_crossing_below,
    p0,
    purity,
    revival_detect,
    simulate_measurement,
    tomography_reconstruct,
    trace_distance,
)

ZERO = np.diag([1.0, 0.0]).astype(complex)
ONE = np.diag([0.0, 1.0]).astype(complex)
PLUS = 0.5 * np.ones((2, 2), dtype=complex)
MIXED = 0.5 * np.eye(2, dtype=complex)


def bloch_state(r):
    return tomography_reconstruct(*r).rho


ball = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda r: np.linalg.norm(r) <= 1)


def test_population():
    assert p0(ZERO) == 1.0
    assert p0(MIXED) == 0.5
    assert p0(SpinState(ONE)) == 0.0


def test_spin_state_validation():
    with pytest.raises(ValueError):
        SpinState(np.eye(2))
    with pytest.raises(ValueError):
        SpinState(np.array([[0.5, 0.6], [0.6, 0.5]]))
    with pytest.raises(ValueError):
        SpinState(np.array([[0.5, 1j], [0.0, 0.5]]))


def test_reconstruction_conventions():
    np.testing.assert_allclose(tomography_reconstruct(0, 0, 1).rho, ZERO)
    np.testing.assert_allclose(tomography_reconstruct(1, 0, 0).rho, PLUS)
    s = tomography_reconstruct(0.6, 0.0, 0.9)
    assert s.projected
    assert np.linalg.norm(s.bloch) == pytest.approx(1.0)
    np.testing.assert_allclose(s.bloch, np.array([0.6, 0, 0.9]) / math.hypot(0.6, 0.9))
    assert not tomography_reconstruct(0.3, 0.2, 0.1).projected


def test_measurement_statistics():
    rng = np.random.default_rng(0)
    assert simulate_measurement(ZERO, "z", 17, rng) == 1.0
    assert simulate_measurement(ONE, "z", 17, rng) == -1.0
    assert simulate_measurement(PLUS, "x", 5, rng) == 1.0
    est = [simulate_measurement(MIXED, "z", 300, rng) for _ in range(4000)]
    assert np.std(est) == pytest.approx(1 / math.sqrt(300), rel=0.05)
    rho = bloch_state((0.3, -0.4, 0.5))
    for axis, exact in zip("xyz", (0.3, -0.4, 0.5)):
        assert abs(simulate_measurement(rho, axis, 10**7, rng) - exact) < 1e-3


def test_trace_distance_values():
    assert trace_distance(ZERO, ZERO) == 0.0
    assert trace_distance(ZERO, ONE) == pytest.approx(1.0)
    assert trace_distance(PLUS, MIXED) == pytest.approx(0.5)


@settings(max_examples=100, deadline=None)
@given(ball, ball, ball)
def test_trace_distance_is_a_metric(a, b, c):
    ra, rb, rc = bloch_state(a), bloch_state(b), bloch_state(c)
    dab = trace_distance(ra, rb)
    assert 0 <= dab <= 1 + 1e-12
    assert dab == pytest.approx(trace_distance(rb, ra), abs=1e-12)
    assert dab <= trace_distance(ra, rc) + trace_distance(rc, rb) + 1e-12
    assert dab == pytest.approx(0.5 * np.linalg.norm(np.subtract(a, b)), abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(ball)
def test_bloch_round_trip(r):
    rho = bloch_state(r)
    np.testing.assert_allclose(bloch_vector(rho), r, atol=1e-12)
    assert purity(rho) == pytest.approx(0.5 * (1 + np.dot(r, r)))


def test_revival_on_rabi_signal():
    lam = 2 * math.pi / 0.1
    t = np.linspace(0, 0.25, 251)
    rep = revival_detect(t, np.abs(np.cos(lam * t / 2)))
    assert rep.revival_time == pytest.approx(2 * math.pi / lam)
    assert rep.revival_height == pytest.approx(1.0)
    assert rep.collapse_time < 0.05


def test_monotone_decay_has_no_revival():
    t = np.linspace(0, 1, 101)
    rep = revival_detect(t, np.exp(-5 * t))
    assert rep.collapsed
    assert not rep.revived


def test_no_collapse():
    t = np.linspace(0, 1, 50)
    rep = revival_detect(t, 0.9 + 0.05 * np.sin(t))
    assert not rep.collapsed and not rep.revived


def test_revival_input_checks():
    with pytest.raises(ValueError):
        revival_detect(np.arange(10), np.zeros(10))
    with pytest.raises(ValueError):
        revival_detect(np.arange(30), np.zeros(29))
    with pytest.raises(ValueError):
        revival_detect(np.arange(30), np.zeros(30), collapse_threshold=1.5)


def test_first_crossing():
    t = np.linspace(0, 1, 11)
    assert first_crossing_below(t, 1 - t, 0.45) == pytest.approx(0.6)
    assert first_crossing_below(t, np.ones(11), 0.5) is None
