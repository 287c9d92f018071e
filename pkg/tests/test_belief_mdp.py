import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualplan import _kernels as K
from dualplan.belief_mdp import RewardSpec, generate, reward
from dualplan.filter import GaussianBelief, correct, predict
from dualplan.models import build_double_integrator, build_planar_manipulation

L1 = RewardSpec.for_model("1d", "l1")
L2 = RewardSpec.for_model("1d", "l2")


def test_reward_examples():
    assert reward(L1, [0.0, 0.0], [0.0]) == 0.0
    assert reward(L1, [2.0, -1.0], [3.0]) == -26.0
    assert reward(L2, [2.0, -1.0], [3.0]) == -52.0


def test_table_weights():
    assert RewardSpec.for_model("pm").weights.tolist() == [-1.0, -1.0, -0.1]
    with pytest.raises(ValueError):
        RewardSpec("l1", 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        RewardSpec("l3")


def test_planar_reward_uses_wrapped_heading():
    spec = RewardSpec.for_model("pm")
    pm = build_planar_manipulation()
    x = np.array([1.0, -2.0, 2 * np.pi + 0.1, 0.5, 0.0, -0.25])
    u = np.array([10.0, 0.0, -20.0])
    expected = -(1.0 + 2.0 + 0.1) - (0.5 + 0.25) - 0.1 * 30.0
    assert reward(spec, x, u, pm) == pytest.approx(expected, rel=1e-12)


def test_noiseless_generate_is_deterministic_dynamics(di):
    b = GaussianBelief([10.0, 1.0, 4.0], np.zeros((3, 3)))
    rng = np.random.default_rng(0)
    first = generate(b, [50.0], di, L1, rng)
    second = generate(b, [50.0], di, L1, rng)
    np.testing.assert_allclose(first.next_belief.mean, di.f(b.mean, [50.0]), atol=1e-12)
    np.testing.assert_array_equal(first.next_belief.mean, second.next_belief.mean)
    assert first.reward == second.reward == pytest.approx(reward(L1, first.next_belief.mean[:2], [50.0]))


def test_generate_same_seed_identical(pm):
    b = GaussianBelief.initial(pm.with_process_noise(0.5), pm.default_initial_state, [5, 5, 5, 0, 0], 3.0)
    model = pm.with_process_noise(0.5)
    a = generate(b, [10.0, -5.0, 2.0], model, RewardSpec.for_model("pm"), np.random.default_rng(3))
    c = generate(b, [10.0, -5.0, 2.0], model, RewardSpec.for_model("pm"), np.random.default_rng(3))
    np.testing.assert_array_equal(a.next_belief.mean, c.next_belief.mean)
    np.testing.assert_array_equal(a.next_belief.cov, c.next_belief.cov)
    np.testing.assert_array_equal(a.sampled_observation, c.sampled_observation)
    assert a.reward == c.reward


def test_generate_saturates_action(di):
    b = GaussianBelief([0.0, 0.0, 2.0], np.zeros((3, 3)))
    a = generate(b, [1e5], di, L1, np.random.default_rng(0))
    c = generate(b, [300.0], di, L1, np.random.default_rng(0))
    np.testing.assert_array_equal(a.next_belief.mean, c.next_belief.mean)


def test_next_mean_is_unbiased(di):
    model = di.with_process_noise(1.0)
    b = GaussianBelief([2.0, -1.0, 4.0], np.diag([0.5, 0.5, 2.0]))
    u = [40.0]
    rng = np.random.default_rng(2024)
    samples = np.array([generate(b, u, model, L1, rng).next_belief.mean[:2] for _ in range(10_000)])
    expected = di.f(b.mean, u)[:2]
    se = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
    assert np.all(np.abs(samples.mean(axis=0) - expected) < 3 * se)
    # observations come from a sampled next state, so they scatter
    assert np.all(samples.var(axis=0) > 0)


@pytest.mark.parametrize("build", [build_double_integrator, build_planar_manipulation])
def test_generate_equals_sample_then_filter(build):
    """The compiled transition is predict+correct on an observation of a sampled next state."""
    model = build().with_process_noise(0.3)
    rng = np.random.default_rng(5)
    for _ in range(25):
        x = rng.uniform(-3, 3, model.state_dim)
        p = rng.uniform(1, 6, model.param_dim)
        G = rng.normal(size=(model.dim, model.dim))
        b = GaussianBelief(np.concatenate([x, p]), 0.1 * G @ G.T)
        u = rng.uniform(-model.u_max, model.u_max, model.control_dim)
        z_proc, z_obs = rng.normal(size=model.dim), rng.normal(size=model.obs_dim)
        mean, cov, o, status = K.generate(model.kind, model.consts, b.mean, b.cov, u, model.noise_cov,
                                          model.noise_sqrt, model.R, model.R_sqrt, model.lower, z_proc, z_obs)
        assert status == K.OK
        s_next = model.clamp(model.f(b.mean, u) + model.noise_sqrt @ z_proc)
        o_ref = model.h(s_next, u) + model.R_sqrt @ z_obs
        ref = correct(predict(b, model, u), model, u, o_ref)
        np.testing.assert_allclose(o, o_ref, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(mean, ref.mean, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(cov, ref.cov, rtol=1e-9, atol=1e-9)


vals = st.floats(-100, 100, allow_nan=False)


@given(st.sampled_from(["l1", "l2"]), st.lists(vals, min_size=2, max_size=2), vals,
       st.tuples(st.floats(-10, 0), st.floats(-10, 0), st.floats(-10, 0)))
def test_reward_is_nonpositive(kind, x, u, w):
    assert reward(RewardSpec(kind, *w), x, [u]) <= 0.0


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2), st.floats(-1, 1), st.floats(0, 10))
def test_quadratic_penalty_below_linear_inside_unit_box(x, u, w):
    l1 = reward(RewardSpec("l1", -w, -w, -w), x, [u])
    l2 = reward(RewardSpec("l2", -w, -w, -w), x, [u])
    assert abs(l2) <= abs(l1) + 1e-12
