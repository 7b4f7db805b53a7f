"""Quick self-check on the toy environments; backs the ``verify`` command.

Each check returns ``(name, passed, detail)``. The oracles here are small
and independent of the code under test: central differences, closed-form
recurrences, value iteration and dense point sampling.
"""

from __future__ import annotations

import math
import time

import numpy as np

from ..approximator import MlpSpec, backward, forward, init_params, soft_update
from ..rl_decision import DecisionAgent, DecisionConfig, SmdpTransition, decision_update, select_option
from ..rl_execution import DdpgAgent, DdpgConfig, EpsilonSchedule, train_episode
from ..sim_world import VehicleState, check_collision, reward, reward_components
from ..skill_chain import ChainParams, GoalDisk, build_chain
from .metrics import ema
from .toy_envs import ChainMdp, Corridor1D, PointReach


def check_rewards():
    s = VehicleState(0, 0, 0, 0)
    got = (reward(s, VehicleState(0, 0, 0, 4.0)), reward(s, VehicleState(0, 0, 0, 5.0), collision=True),
           reward(s, VehicleState(0, 0, 0, 5.0), goal=True), reward_components(s, VehicleState(0, 0, 0, 12.0)).r_vel)
    want = (0.5, -99.25, 10.75, -0.5)
    err = max(abs(a - b) for a, b in zip(got, want))
    return "reward examples", err < 1e-12, f"max error {err:.1e}"


def check_gradients(nets: int = 5):
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(nets):
        spec = MlpSpec((3, 5, 4, 2), use_batch_norm=True)
        p = init_params(spec, rng, final_scale=0.5)
        x = rng.normal(size=(6, 3))
        up = rng.normal(size=(6, 2))
        g, _ = backward(spec, p, x, up, mode="train")
        for t, gt in zip(p.trainable(), g.trainable()):
            idx = tuple(rng.integers(n) for n in t.shape)
            old = t[idx]
            t[idx] = old + 1e-5
            f1 = float((forward(spec, p, x, mode="train") * up).sum())
            t[idx] = old - 1e-5
            f0 = float((forward(spec, p, x, mode="train") * up).sum())
            t[idx] = old
            num = (f1 - f0) / 2e-5
            # floor: biases feeding batch norm have an exact zero gradient, the difference quotient ~1e-11
            worst = max(worst, abs(num - gt[idx]) / max(abs(num), abs(gt[idx]), 1e-4))
    return "backprop vs finite differences", worst < 1e-4, f"max rel error {worst:.1e}"


def check_soft_update(n: int = 50):
    rng = np.random.default_rng(1)
    spec = MlpSpec((3, 4, 2))
    worst = 0.0
    for tau in (1e-3, 0.01):
        online, target = init_params(spec, rng), init_params(spec, rng)
        gap0 = [o - t for o, t in zip(online.tensors(), target.tensors())]
        for _ in range(n):
            target = soft_update(target, online, tau)
        for g0, o, t in zip(gap0, online.tensors(), target.tensors()):
            worst = max(worst, float(np.max(np.abs((o - t) - (1 - tau) ** n * g0))))
    return "soft-update geometry", worst < 1e-10, f"max deviation {worst:.1e}"


def check_ddqn(seed: int = 0, max_updates: int = 5000):
    mdp = ChainMdp(gamma=0.9)
    v, q_star, _ = mdp.value_iteration()
    optimal = q_star[:mdp.terminal].argmax(axis=1)
    cfg = DecisionConfig(hidden=(32, 32), lr=1e-3, tau=0.01, gamma=0.9, batch_size=32, warmup=32, capacity=5000)
    agent = DecisionAgent(mdp.n_states, mdp.n_options, cfg, seed)
    rng = np.random.default_rng(seed)
    eye = np.array([mdp.obs(s) for s in range(mdp.terminal)])
    ok, err = False, math.inf
    while agent.updates < max_updates and not ok:
        s, done = int(rng.integers(mdp.terminal)), False
        while not done:
            o = select_option(agent, mdp.obs(s), {0, 1}, 0.3, rng)
            r, d, s2, done = mdp.step_option(s, o)
            agent.push(SmdpTransition(mdp.obs(s), o, r, d, mdp.obs(s2), done))
            if len(agent.buffer) >= cfg.warmup:
                decision_update(agent, agent.buffer.sample(cfg.batch_size, rng))
            s = s2
        q = agent.q_values(eye)
        err = float(np.max(np.abs(q.max(axis=1) - v[:mdp.terminal])))
        ok = np.array_equal(q.argmax(axis=1), optimal) and err < 0.05
    return "double DQN on chain MDP", ok, f"{agent.updates} updates, value error {err:.3f}"


TOY_DDPG = DdpgConfig(actor_hidden=(64, 64), critic_hidden=(64, 64), warmup=256, actor_lr=1e-3, critic_lr=1e-3)


def check_point_reach(seed: int = 0, episodes: int = 300):
    env = PointReach()
    rng = np.random.default_rng(seed)
    agent = DdpgAgent(2, TOY_DDPG, rng)
    sched = EpsilonSchedule.for_phase(episodes)
    wins = [train_episode(agent, env, sched, rng, e).goal for e in range(episodes)]
    rate = float(np.mean(wins[-50:]))
    return "DDPG on point reach", rate >= 0.9, f"final-50 success {rate:.2f}"


def check_corridor_chain(seed: int = 1):
    env = Corridor1D()
    rng = np.random.default_rng(seed)
    goal = GoalDisk((10.0,), 1.0, dims=(0,))
    params = ChainParams(K=25, N=200, nu=0.1, feature_indices=(0,), episodes_per_option=60)
    chain = build_chain(env, goal, params, rng, lambda: DdpgAgent(2, TOY_DDPG, rng))
    ok = (1 <= len(chain) <= 8 and chain[0].termination is goal
          and all(chain[k].termination is chain[k - 1].initiation for k in range(1, len(chain)))
          and chain[-1].initiation.contains(env.canonical_start())
          and all(m.initiation.containment() >= 0.9 for m in chain))
    return "skill chain on corridor", ok, f"{len(chain)} links"


def _inside(px, py, pose, dims) -> bool:
    x, y, th = pose
    c, s = math.cos(th), math.sin(th)
    u, v = c * (px - x) + s * (py - y), -s * (px - x) + c * (py - y)
    return abs(u) <= dims[0] / 2 and abs(v) <= dims[1] / 2


def _boundary(pose, dims, step: float = 0.01):
    x, y, th = pose
    half_l, half_w = dims[0] / 2, dims[1] / 2
    c, s = math.cos(th), math.sin(th)
    pts = []
    for u0, v0, u1, v1 in ((-half_l, -half_w, half_l, -half_w), (half_l, -half_w, half_l, half_w),
                           (half_l, half_w, -half_l, half_w), (-half_l, half_w, -half_l, -half_w)):
        n = max(2, int(math.hypot(u1 - u0, v1 - v0) / step) + 1)
        for t in np.linspace(0.0, 1.0, n):
            u, v = u0 + t * (u1 - u0), v0 + t * (v1 - v0)
            pts.append((x + c * u - s * v, y + s * u + c * v))
    return pts


def sampled_overlap(a, da, b, db) -> bool:
    """Rectangles overlap iff a boundary sample of one lies in the other, or one contains the other's center."""
    if _inside(a[0], a[1], b, db) or _inside(b[0], b[1], a, da):
        return True
    return (any(_inside(px, py, b, db) for px, py in _boundary(a, da))
            or any(_inside(px, py, a, da) for px, py in _boundary(b, db)))


def check_collision_sampling(pairs: int = 200, seed: int = 2):
    rng = np.random.default_rng(seed)
    dims = (4.5, 2.0)
    agree = 0
    for _ in range(pairs):
        a = (0.0, 0.0, rng.uniform(-math.pi, math.pi))
        b = (rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(-math.pi, math.pi))
        agree += check_collision(a, dims, b, dims) == sampled_overlap(a, dims, b, dims)
    return "collision vs point sampling", agree == pairs, f"{agree}/{pairs} agree"


def check_ema():
    got = ema([0.0, 10.0, 10.0], 0.95)
    want = [0.0, 0.5, 0.975]
    err = max(abs(a - b) for a, b in zip(got, want))
    return "EMA recurrence", err < 1e-12, f"max error {err:.1e}"


CHECKS = (check_rewards, check_gradients, check_soft_update, check_ddqn, check_point_reach,
          check_corridor_chain, check_collision_sampling, check_ema)


def run_verify(checks=CHECKS, echo=print) -> bool:
    ok_all = True
    for fn in checks:
        t0 = time.perf_counter()
        name, ok, detail = fn()
        ok_all &= bool(ok)
        echo(f"{'PASS' if ok else 'FAIL'}  {name}: {detail} ({time.perf_counter() - t0:.1f}s)")
    return ok_all
