"""Small deterministic environments with known answers.

* ``Corridor1D``: position/velocity on a line, goal interval at the far end.
* ``PointReach``: move a point onto a target with a single bounded action.
* ``ChainMdp``: five-state semi-MDP with two options and known optimal values.

The first two follow the same ``reset`` / ``step(Action)`` protocol as the
intersection env so agents and skill chaining run on them unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..sim_world import Action


@dataclass
class Corridor1D:
    length: float = 10.0
    goal_start: float = 9.0
    dt: float = 0.1
    a_max: float = 2.0
    v_max: float = 2.0
    max_steps: int = 200
    goal_reward: float = 10.0
    step_cost: float = 0.01

    action_mode = "longitudinal"
    obs_size = 2

    def __post_init__(self):
        self.x = 0.0
        self.v = 0.0
        self.t = 0
        self.done = False

    def _obs(self) -> np.ndarray:
        return np.array([self.x, self.v])

    def set_state(self, x: float, v: float) -> np.ndarray:
        self.x, self.v, self.t, self.done = float(x), float(v), 0, False
        return self._obs()

    def reset(self, rng=None) -> np.ndarray:
        return self.set_state(0.0, 0.0)

    def reset_random(self, rng) -> np.ndarray:
        return self.set_state(rng.uniform(0.0, self.goal_start), rng.uniform(-self.v_max, self.v_max))

    def canonical_start(self) -> np.ndarray:
        return np.array([0.0, 0.0])

    def in_goal(self, obs) -> bool:
        return obs[0] >= self.goal_start

    def step(self, action: Action):
        if self.done:
            raise ContractError("episode already finished")
        x0 = self.x
        self.x = self.x + self.v * self.dt
        self.v = float(np.clip(self.v + self.a_max * action.longitudinal * self.dt, -self.v_max, self.v_max))
        if self.x <= 0.0:
            self.x, self.v = 0.0, max(self.v, 0.0)
        self.x = min(self.x, self.length)
        self.t += 1
        goal = self.x >= self.goal_start
        r = (self.x - x0) - self.step_cost + (self.goal_reward if goal else 0.0)
        timeout = self.t >= self.max_steps and not goal
        self.done = goal or self.t >= self.max_steps
        return self._obs(), r, self.done, {"goal": goal, "collision": False, "timeout": timeout,
                                           "terminal": goal}


@dataclass
class PointReach:
    step_size: float = 0.1
    tolerance: float = 0.05
    min_gap: float = 0.3
    max_steps: int = 50
    bound: float = 1.0

    action_mode = "longitudinal"
    obs_size = 2

    def __post_init__(self):
        self.x = 0.0
        self.target = 0.5
        self.t = 0
        self.done = False

    def _obs(self):
        return np.array([self.x, self.target])

    def reset(self, rng) -> np.ndarray:
        while True:
            x, target = rng.uniform(-self.bound, self.bound, size=2)
            if abs(x - target) >= self.min_gap:
                break
        self.x, self.target, self.t, self.done = float(x), float(target), 0, False
        return self._obs()

    def step(self, action: Action):
        if self.done:
            raise ContractError("episode already finished")
        self.x = float(np.clip(self.x + self.step_size * action.longitudinal, -1.5 * self.bound, 1.5 * self.bound))
        self.t += 1
        gap = abs(self.x - self.target)
        goal = gap < self.tolerance
        r = -gap + (10.0 if goal else 0.0)
        timeout = self.t >= self.max_steps and not goal
        self.done = goal or self.t >= self.max_steps
        return self._obs(), r, self.done, {"goal": goal, "collision": False, "timeout": timeout,
                                           "terminal": goal}


class ChainMdp:
    """States 0..4 with 4 terminal. Option 0 walks one state per step; option 1
    leaps two states in two steps.

    Walk rewards depend on the state left (state 1 is a mud patch); reaching
    state 4 pays +10 on top. A leap pays -0.5 per step, or -0.5 then +9.5 when
    it lands on the goal.
    """

    n_states = 5
    n_options = 2
    terminal = 4
    walk_cost = (-1.0, -5.0, -1.0, -1.0)

    def __init__(self, gamma: float = 0.9):
        self.gamma = gamma

    def step_rewards(self, s: int, o: int) -> tuple[int, list[float]]:
        if s == self.terminal:
            raise ContractError("no options from the terminal state")
        if o == 0:
            s2 = s + 1
            return s2, [self.walk_cost[s] + (10.0 if s2 == self.terminal else 0.0)]
        s2 = min(s + 2, self.terminal)
        return s2, [-0.5, 9.5 if s2 == self.terminal else -0.5]

    def step_option(self, s: int, o: int) -> tuple[float, int, int, bool]:
        """``(R, d, s2, done)`` with ``R`` discounted inside the option."""
        s2, rs = self.step_rewards(s, o)
        big_r = sum(self.gamma ** k * r for k, r in enumerate(rs))
        return big_r, len(rs), s2, s2 == self.terminal

    def obs(self, s: int) -> np.ndarray:
        e = np.zeros(self.n_states)
        e[s] = 1.0
        return e

    def value_iteration(self, tol: float = 1e-10, max_iter: int = 10_000):
        """Returns ``(V, Q, sweeps)``; stops once the sup-norm change is below ``tol``."""
        v = np.zeros(self.n_states)
        q = np.zeros((self.n_states, self.n_options))
        for sweep in range(1, max_iter + 1):
            for s in range(self.terminal):
                for o in range(self.n_options):
                    r, d, s2, done = self.step_option(s, o)
                    q[s, o] = r + (0.0 if done else self.gamma ** d * v[s2])
            new_v = np.where(np.arange(self.n_states) == self.terminal, 0.0, q.max(axis=1))
            delta = np.max(np.abs(new_v - v))
            v = new_v
            if delta < tol:
                return v, q.copy(), sweep
        raise RuntimeError("value iteration did not converge")


def toy_envs() -> dict:
    return {"corridor_1d": Corridor1D(), "point_reach": PointReach(), "chain_mdp": ChainMdp()}
