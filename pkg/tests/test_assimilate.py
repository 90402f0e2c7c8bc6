import numpy as np
import pytest
from hypothesis import given, strategies as st

from nudgelearn.assimilate import Observation, ObservationPlan, is_observation_step, make_feedback, observe
from nudgelearn.dynamics import Gains, Params, State
from nudgelearn.integrate import NoiseSource, Scheme, spinup, trajectory

STD = Params(10.0, 28.0, 8.0 / 3.0)
val = st.floats(-100, 100, allow_nan=False)
gain = st.floats(0, 1e4, allow_nan=False)


def test_noise_free_x_only_is_exact():
    obs = observe(State(1.5, -2.0, 30.0), ObservationPlan((True, False, False), 0.05))
    assert obs.values == (1.5, None, None)


def test_observation_noise_std():
    plan = ObservationPlan((True, True, True), 0.05, eta=1e-3)
    ns = NoiseSource(17)
    s = State(3.0, -4.0, 20.0)
    dev = np.array([np.subtract(observe(s, plan, ns).values, s) for _ in range(100_000)])
    assert np.allclose(dev.std(axis=0), 1e-3, rtol=0.03)
    assert ns.position == 300_000


def test_masked_observation_still_draws_three():
    ns = NoiseSource(0)
    observe(State(1, 2, 3), ObservationPlan((True, False, False), 0.05, eta=0.1), ns)
    assert ns.position == 3


def test_translated_z_settles_at_minus_sigma_minus_one():
    p = Params(10.0, 15.0, 8.0 / 3.0)
    end = trajectory(p, spinup(p), 1e-3, 100_000, Scheme.RK4)[-1]
    obs = observe(State(*end), ObservationPlan((False, False, True), 0.05, translated_z=True), p=p)
    assert obs.values[2] == pytest.approx(-11.0, abs=1e-6)


def test_translated_needs_params():
    with pytest.raises(ValueError):
        observe(State(1, 2, 3), ObservationPlan((False, False, True), 0.05, translated_z=True))


def test_feedback_examples():
    g = Gains(500, 1800, 7, 0, 0, 0)
    assert make_feedback(State(1, 0, 0), Observation((0.0, None, None)), g) == (500, 0, 0)
    s = State(2.0, -1.0, 5.0)
    assert make_feedback(s, Observation(tuple(s)), g) == (0, 0, 0)
    fb = make_feedback(s, Observation((0.0, 0.0, None)), Gains(1800, 1800, 123.0))
    assert fb[2] == 0.0


def test_translated_feedback_uses_estimates():
    obs = Observation((None, None, -11.0), translated=True)
    fb = make_feedback(State(0, 0, 15.0), obs, Gains(0, 0, 2.0), Params(9.0, 16.0, 8 / 3))
    assert fb == (0, 0, 2.0 * (15.0 - 25.0 + 11.0))
    with pytest.raises(ValueError):
        make_feedback(State(0, 0, 0), obs, Gains(0, 0, 1.0))


@given(st.lists(val, min_size=3, max_size=3), st.lists(val, min_size=3, max_size=3),
       st.lists(gain, min_size=3, max_size=3), st.lists(st.booleans(), min_size=3, max_size=3))
def test_feedback_masking_and_linearity(s, o, mu, mask):
    g = Gains(*mu)
    obs = Observation(tuple(v if m else None for v, m in zip(o, mask)))
    fb = make_feedback(State(*s), obs, g)
    for i in range(3):
        if mask[i]:
            assert fb[i] == pytest.approx(mu[i] * (s[i] - o[i]), rel=1e-12, abs=1e-9)
        else:
            assert fb[i] == 0.0
    # doubling the discrepancy doubles the feedback
    s2 = [2 * a - b for a, b in zip(s, o)]
    fb2 = make_feedback(State(*s2), obs, g)
    assert np.allclose(fb2, 2 * np.array(fb), rtol=1e-9, atol=1e-6)


def test_observation_schedule():
    assert [k for k in range(1, 1200) if is_observation_step(k, 500)] == [1, 501, 1001]
    assert all(is_observation_step(k, 1) for k in range(5))


def test_plan_invariants():
    with pytest.raises(ValueError):
        ObservationPlan((False, False, False))
    with pytest.raises(ValueError):
        ObservationPlan(eta=-1.0)
    assert ObservationPlan(dt_obs=0.05).interval(1e-4) == 500
    with pytest.raises(ValueError):
        ObservationPlan(dt_obs=4e-5).interval(1e-4)
    assert ObservationPlan((True, False, True)).channels == "xz"
