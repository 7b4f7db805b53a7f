"""Flat baselines: one DDPG agent, and a tabular Q-learner on a coarse grid."""

from __future__ import annotations

import math

import numpy as np

from ..rl_execution import DdpgAgent, DdpgConfig, EpsilonSchedule, train_episode
from ..sim_world import Action, decode_host, wrap_angle, POS_SCALE, SPEED_SCALE

# full brake, half brake, coast, half throttle, full throttle
Q_ACTIONS = (Action(0.0, 1.0), Action(0.0, 0.5), Action(0.0, 0.0), Action(0.5, 0.0), Action(1.0, 0.0))
POS_BINS, POS_RANGE = 7, 30.0
SPEED_BINS, SPEED_MAX = 5, 10.0
YAW_BINS = 8


def _bin(x: float, lo: float, hi: float, n: int) -> int:
    k = int(math.floor((x - lo) / (hi - lo) * n))
    return min(max(k, 0), n - 1)


def discretize(obs) -> tuple[int, int, int, int]:
    """Grid cell of the other vehicle's position and yaw in the host frame, plus host speed."""
    hx, hy, hth, hv = decode_host(obs)
    ox, oy = obs[4] * POS_SCALE, obs[5] * POS_SCALE
    oth = obs[6] * math.pi
    dx, dy = ox - hx, oy - hy
    c, s = math.cos(hth), math.sin(hth)
    fwd, left = c * dx + s * dy, -s * dx + c * dy
    yaw = wrap_angle(oth - hth)
    return (_bin(fwd, -POS_RANGE, POS_RANGE, POS_BINS), _bin(left, -POS_RANGE, POS_RANGE, POS_BINS),
            _bin(hv, 0.0, SPEED_MAX, SPEED_BINS), _bin(yaw, -math.pi, math.pi, YAW_BINS))


class TabularQ:
    def __init__(self, alpha: float = 0.1, gamma: float = 0.99):
        self.alpha = alpha
        self.gamma = gamma
        self.table = np.zeros((POS_BINS, POS_BINS, SPEED_BINS, YAW_BINS, len(Q_ACTIONS)))

    def q(self, obs) -> np.ndarray:
        return self.table[discretize(obs)]

    def act(self, obs, eps: float, rng: np.random.Generator) -> int:
        if rng.random() < eps:
            return int(rng.integers(len(Q_ACTIONS)))
        return int(np.argmax(self.q(obs)))

    def update(self, s, a: int, r: float, s2, terminal: bool) -> float:
        cell = discretize(s) + (a,)
        target = r if terminal else r + self.gamma * float(np.max(self.q(s2)))
        td = target - self.table[cell]
        self.table[cell] += self.alpha * td
        return td


def tabular_episode(agent: TabularQ, env, eps: float, rng: np.random.Generator, env_rng, learn: bool = True) -> None:
    obs = env.reset(env_rng)
    done = False
    while not done:
        a = agent.act(obs, eps, rng)
        obs2, r, done, info = env.step(Q_ACTIONS[a])
        if learn:
            agent.update(obs, a, r, obs2, bool(info.get("terminal", done)))
        obs = obs2


def flat_ddpg_agent(cfg: DdpgConfig, rng) -> DdpgAgent:
    return DdpgAgent(8, cfg, rng)


def flat_ddpg_episode(agent: DdpgAgent, env, schedule: EpsilonSchedule, episode: int, rng, env_rng,
                      learn: bool = True) -> None:
    obs = env.reset(env_rng)
    train_episode(agent, env, schedule, rng, episode, obs=obs, learn=learn)
