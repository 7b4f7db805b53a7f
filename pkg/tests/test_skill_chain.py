import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mphrl.errors import ChainIncompleteError, ContractError, InsufficientPositivesError
from mphrl.harness.toy_envs import Corridor1D
from mphrl.rl_execution import DdpgAgent, DdpgConfig
from mphrl.skill_chain import (
    ChainParams,
    GoalDisk,
    _sq_dists,
    build_chain,
    collect_labels,
    contains,
    fit_initiation,
    label_from,
    project_capped_simplex,
    train_option_policy,
)

TOY_DDPG = DdpgConfig(actor_hidden=(64, 64), critic_hidden=(64, 64), warmup=256, actor_lr=1e-3, critic_lr=1e-3)
CORRIDOR_GOAL = GoalDisk((10.0,), 1.0, dims=(0,))


def corridor_params(**kw):
    base = dict(K=25, N=200, nu=0.1, feature_indices=(0,), episodes_per_option=60)
    return ChainParams(**{**base, **kw})


def factory(rng):
    return lambda: DdpgAgent(2, TOY_DDPG, rng)


# ---------------------------------------------------------------- goal disk


def test_goal_disk_membership():
    g = GoalDisk((-45.0, 1.75), 3.0, dims=(0, 1), scale=60.0)
    center = np.array([-45.0 / 60.0, 1.75 / 60.0, 0, 0])
    assert contains(g, center)
    outside = np.array([(-45.0 + 4.0) / 60.0, 1.75 / 60.0, 0, 0])
    assert not contains(g, outside)


# ---------------------------------------------------------------- one-class classifier


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(20, 150), st.sampled_from([0.05, 0.1, 0.3]))
def test_nu_containment(seed, n, nu):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3)) * rng.uniform(0.1, 5, size=3)
    clf = fit_initiation(x, ChainParams(nu=nu, feature_indices=(0, 1, 2)))
    accepted = int((clf.decision_function(x) >= 0).sum())
    assert accepted >= math.ceil((1 - nu) * n)
    assert clf.containment() == accepted / n


def test_hundred_positives_ninety_accepted():
    x = np.random.default_rng(0).normal(size=(100, 4))
    clf = fit_initiation(x, ChainParams(nu=0.1))
    assert (clf.decision_function(x) >= 0).sum() >= 90


def test_far_query_rejected():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(60, 2))
    clf = fit_initiation(x, ChainParams(feature_indices=(0, 1)))
    far = x.max(axis=0) + 10 * clf.sigma + 1.0
    d = np.sqrt(((x - far) ** 2).sum(axis=1))
    assert d.min() >= 10 * clf.sigma
    assert not clf.contains(far)


def test_degenerate_cloud_contains_its_point():
    x = np.tile([0.3, -1.0, 2.0, 0.5], (12, 1))
    clf = fit_initiation(x, ChainParams())
    assert clf.contains(x[0])


def test_fixed_bandwidth_is_used_and_keeps_containment():
    x = np.random.default_rng(4).normal(size=(80, 2))
    clf = fit_initiation(x, ChainParams(feature_indices=(0, 1), bandwidth=0.4))
    assert clf.sigma == 0.4
    assert clf.containment() >= 0.9


@pytest.mark.parametrize("bad", ["mean", -1.0, 0.0, True])
def test_bad_bandwidth_rejected(bad):
    with pytest.raises(ContractError):
        fit_initiation(np.random.default_rng(0).normal(size=(20, 4)), ChainParams(bandwidth=bad))


def test_too_few_positives():
    with pytest.raises(InsufficientPositivesError):
        fit_initiation(np.zeros((4, 4)), ChainParams())


def test_fit_is_deterministic():
    x = np.random.default_rng(2).normal(size=(50, 4))
    a, b = fit_initiation(x, ChainParams()), fit_initiation(x, ChainParams())
    assert np.array_equal(a.alpha, b.alpha) and a.rho == b.rho and a.sigma == b.sigma


def test_contains_agrees_with_decision_sign():
    rng = np.random.default_rng(3)
    clf = fit_initiation(rng.normal(size=(80, 4)), ChainParams())
    for q in rng.normal(scale=2.0, size=(100, 4)):
        assert clf.contains(q) == (clf.decision_function(q)[0] >= 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 30))
def test_capped_simplex_projection_is_nearest_feasible(seed, n):
    rng = np.random.default_rng(seed)
    cap = rng.uniform(1.0 / n, 1.0)
    v = rng.normal(size=n)
    p = project_capped_simplex(v, cap)
    assert abs(p.sum() - 1.0) < 1e-9
    assert np.all(p >= 0) and np.all(p <= cap)
    for _ in range(20):
        q = project_capped_simplex(rng.normal(size=n) * 3, cap)
        assert np.linalg.norm(v - p) <= np.linalg.norm(v - q) + 1e-9


def test_dual_solution_matches_libsvm():
    # independent solver for the same one-class dual (sklearn wraps libsvm)
    from sklearn.svm import OneClassSVM

    rng = np.random.default_rng(4)
    x = np.concatenate([rng.normal(size=(70, 2)), rng.normal(loc=3, scale=0.5, size=(30, 2))])
    clf = fit_initiation(x, ChainParams(feature_indices=(0, 1)))
    ref = OneClassSVM(kernel="rbf", gamma=1 / (2 * clf.sigma ** 2), nu=0.1, tol=1e-8).fit(x)
    k = np.exp(-_sq_dists(x) / (2 * clf.sigma ** 2))
    a_ref = np.zeros(len(x))
    a_ref[ref.support_] = ref.dual_coef_[0]
    a_ref /= a_ref.sum()
    a = np.zeros(len(x))
    for s, w in zip(clf.support, clf.alpha):
        a[np.flatnonzero((x == s).all(axis=1))[0]] = w
    assert 0.5 * a @ k @ a <= 0.5 * a_ref @ k @ a_ref * (1 + 5e-3)
    q = rng.uniform(-4, 5, size=(2000, 2))
    agree = np.mean((clf.decision_function(q) >= 0) == (ref.decision_function(q) >= 0))
    assert agree > 0.97


# ---------------------------------------------------------------- labels


def test_label_positive_when_starting_inside():
    env = Corridor1D()
    obs = env.set_state(9.5, 0.0)
    assert label_from(env, obs, lambda s: (None, None), CORRIDOR_GOAL, 25)


def test_label_negative_when_unreachable():
    env = Corridor1D()
    obs = env.set_state(0.0, 0.0)
    agent = DdpgAgent(2, TOY_DDPG, 0)
    assert not label_from(env, obs, lambda s: (agent.act(s), None), CORRIDOR_GOAL, 25)


@pytest.mark.parametrize("n", [10, 37])
def test_collect_labels_length(n):
    agent = DdpgAgent(2, TOY_DDPG, 0)
    labels = collect_labels(Corridor1D(), agent, CORRIDOR_GOAL, 25, n, np.random.default_rng(0), corridor_params(N=10))
    assert len(labels) == n


# ---------------------------------------------------------------- option policies and chains


@pytest.mark.slow
def test_option_policy_learns_corridor():
    wins = 0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        agent, curve = train_option_policy(Corridor1D(), CORRIDOR_GOAL, 200, rng, DdpgAgent(2, TOY_DDPG, rng),
                                           corridor_params())
        assert len(curve) == 200
        wins += np.mean([ok for _, ok in curve[-20:]]) >= 0.8
    assert wins >= 2


def test_whole_space_termination_ends_every_episode_at_step_one():
    everything = GoalDisk((0.0,), 1e9, dims=(0,))
    rng = np.random.default_rng(0)
    agent, curve = train_option_policy(Corridor1D(), everything, 5, rng, DdpgAgent(2, TOY_DDPG, rng),
                                       corridor_params())
    assert len(curve) == 5
    assert all(ok for _, ok in curve)
    assert agent.buffer.items()["done"].tolist() == [1.0] * 5
    items = agent.buffer.items()
    progress = items["s2"][:, 0] - items["s"][:, 0]
    assert np.allclose(items["r"], progress - 0.01 + 10.0, atol=1e-12)


def test_trivial_chain_has_one_link():
    # goal interval begins one meter from the start: the first link covers the start
    env = Corridor1D(goal_start=1.0)
    goal = GoalDisk((5.5,), 4.5, dims=(0,))
    rng = np.random.default_rng(0)
    chain = build_chain(env, goal, corridor_params(episodes_per_option=20), rng, factory(rng))
    assert len(chain) == 1
    assert chain[0].termination is goal


def test_max_length_one_raises_with_partial_chain():
    rng = np.random.default_rng(0)
    with pytest.raises(ChainIncompleteError) as info:
        build_chain(Corridor1D(), CORRIDOR_GOAL, corridor_params(max_length=1, episodes_per_option=20), rng,
                    factory(rng))
    assert len(info.value.chain) == 1


@pytest.fixture(scope="module")
def corridor_chain():
    rng = np.random.default_rng(1)
    return build_chain(Corridor1D(), CORRIDOR_GOAL, corridor_params(), rng, factory(rng))


def test_corridor_chain_structure(corridor_chain):
    chain = corridor_chain
    assert 1 <= len(chain) <= 8
    assert chain[0].termination is CORRIDOR_GOAL
    for k in range(1, len(chain)):
        assert chain[k].termination is chain[k - 1].initiation
    assert chain[-1].initiation.contains(Corridor1D().canonical_start())
    assert all(m.initiation.containment() >= 0.9 for m in chain)


def test_positive_labels_replay_into_termination(corridor_chain):
    mp = corridor_chain[0]
    env = Corridor1D()
    rng = np.random.default_rng(9)
    labels = collect_labels(env, mp.policy, mp.termination, 25, 60, rng, corridor_params())
    positives = [lb.state for lb in labels if lb.positive]
    assert positives
    for s in positives:
        obs = env.set_state(*s)
        assert label_from(env, obs, lambda o: (mp.policy.act(o), None), mp.termination, 25)


def test_chain_is_deterministic():
    def run():
        rng = np.random.default_rng(5)
        chain = build_chain(Corridor1D(goal_start=1.0), GoalDisk((5.5,), 4.5, dims=(0,)),
                            corridor_params(episodes_per_option=10, N=40), rng, factory(rng))
        return [(m.initiation.rho, m.initiation.alpha.tobytes()) for m in chain]

    assert run() == run()
