"""DDPG intra-option learner.

The actor maps an observation to a tanh-range vector; ``Action.from_policy``
turns that into throttle/brake(/steer). The replay buffer stores the raw
tanh-range vector, which is what the critic consumes.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .approximator import (
    AdamState,
    MlpSpec,
    adam_step_inplace,
    backward,
    clip_by_global_norm,
    forward,
    init_params,
    soft_update_inplace,
)
from .errors import ContractError, InsufficientDataError
from .sim_world import Action


@dataclass
class DdpgConfig:
    actor_hidden: tuple[int, ...] = (400, 300)
    critic_hidden: tuple[int, ...] = (400, 300)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.01
    batch_size: int = 64
    capacity: int = 100_000
    warmup: int = 1000
    actor_batch_norm: bool = True
    grad_clip: float = 10.0
    final_scale: float = 3e-3
    action_mode: str = "longitudinal"
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.25

    def __post_init__(self):
        self.actor_hidden = tuple(self.actor_hidden)
        self.critic_hidden = tuple(self.critic_hidden)
        if not 0.0 <= self.gamma < 1.0:
            raise ContractError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ContractError(f"tau must lie in (0, 1], got {self.tau}")
        if self.batch_size < 1 or self.capacity < self.batch_size:
            raise ContractError("need 1 <= batch_size <= capacity")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


ACTION_SIZES = {"longitudinal": 1, "full": 3}


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring of named array fields.

    ``fields`` maps a name to the per-item shape, e.g. ``{"s": (8,), "r": ()}``.
    """

    def __init__(self, capacity: int, fields: dict):
        if capacity < 1:
            raise ContractError("capacity must be positive")
        self.capacity = int(capacity)
        self._data = {k: np.zeros((self.capacity,) + tuple(shape)) for k, shape in fields.items()}
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def push(self, **item) -> None:
        if item.keys() != self._data.keys():
            raise ContractError(f"expected fields {sorted(self._data)}, got {sorted(item)}")
        i = self.inserted % self.capacity
        for k, v in item.items():
            self._data[k][i] = v
        self.inserted += 1

    def _order(self) -> np.ndarray:
        n = len(self)
        start = self.inserted - n
        return (start + np.arange(n)) % self.capacity

    def items(self) -> dict:
        """All stored items, oldest first."""
        idx = self._order()
        return {k: v[idx] for k, v in self._data.items()}

    def sample(self, k: int, rng: np.random.Generator) -> dict:
        n = len(self)
        if n < k:
            raise InsufficientDataError(f"buffer holds {n} items, {k} requested")
        idx = rng.integers(0, n, size=k)
        slots = self._order()[idx]
        return {name: v[slots] for name, v in self._data.items()}


def transition_buffer(capacity: int, obs_size: int, action_size: int) -> ReplayBuffer:
    return ReplayBuffer(capacity, {"s": (obs_size,), "a": (action_size,), "r": (), "s2": (obs_size,), "done": ()})


def as_batch(batch) -> dict:
    """Accept a dict of arrays or a list of ``Transition``."""
    if isinstance(batch, dict):
        return batch
    batch = list(batch)
    if not batch:
        raise ContractError("empty batch")
    return {
        "s": np.array([t.s for t in batch], dtype=np.float64),
        "a": np.array([np.atleast_1d(t.a) for t in batch], dtype=np.float64),
        "r": np.array([t.r for t in batch], dtype=np.float64),
        "s2": np.array([t.s2 for t in batch], dtype=np.float64),
        "done": np.array([t.done for t in batch], dtype=np.float64),
    }


@dataclass
class EpsilonSchedule:
    """Linear decay from ``start`` to ``end`` over ``horizon`` episodes, then flat."""

    start: float = 1.0
    end: float = 0.05
    horizon: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.end <= self.start <= 1.0:
            raise ContractError("need 0 <= end <= start <= 1")

    @classmethod
    def for_phase(cls, episodes: int, start=1.0, end=0.05, fraction=0.25) -> "EpsilonSchedule":
        return cls(start, end, max(1.0, fraction * episodes))

    def value(self, episode: int) -> float:
        if self.horizon <= 0 or episode >= self.horizon:
            return self.end
        return self.start + (self.end - self.start) * episode / self.horizon


class DdpgAgent:
    def __init__(self, obs_size: int, config: DdpgConfig | None = None, rng=None,
                 actor_spec: MlpSpec | None = None, critic_spec: MlpSpec | None = None):
        self.config = cfg = config or DdpgConfig()
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.obs_size = int(obs_size)
        self.action_mode = cfg.action_mode
        self.action_size = ACTION_SIZES[cfg.action_mode]
        self.actor_spec = actor_spec or MlpSpec((obs_size, *cfg.actor_hidden, self.action_size),
                                                output_activation="tanh",
                                                use_batch_norm=cfg.actor_batch_norm)
        self.critic_spec = critic_spec or MlpSpec((obs_size + self.action_size, *cfg.critic_hidden, 1))
        if self.actor_spec.input_size != obs_size or self.actor_spec.output_size != self.action_size:
            raise ContractError("actor spec does not match observation/action sizes")
        if self.critic_spec.input_size != obs_size + self.action_size or self.critic_spec.output_size != 1:
            raise ContractError("critic spec must map (s, a) to one value")
        self.actor = init_params(self.actor_spec, self.rng, final_scale=cfg.final_scale)
        self.critic = init_params(self.critic_spec, self.rng, final_scale=cfg.final_scale)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = AdamState.create(self.actor, lr=cfg.actor_lr)
        self.critic_opt = AdamState.create(self.critic, lr=cfg.critic_lr)
        self.buffer = transition_buffer(cfg.capacity, obs_size, self.action_size)
        self.updates = 0

    @property
    def gamma(self) -> float:
        return self.config.gamma

    @property
    def tau(self) -> float:
        return self.config.tau

    def policy(self, s) -> np.ndarray:
        """Greedy raw action (eval mode)."""
        return forward(self.actor_spec, self.actor, s, mode="eval")

    def act(self, s) -> Action:
        return Action.from_policy(self.policy(s), self.action_mode)

    def q_value(self, s, a) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=1)
        return forward(self.critic_spec, self.critic, x)[:, 0]

    def clone(self) -> "DdpgAgent":
        return copy.deepcopy(self)

    def load_weights_from(self, other: "DdpgAgent") -> None:
        """Copy networks (online and target) from ``other``; optimizer and buffer start fresh."""
        if other.actor_spec != self.actor_spec or other.critic_spec != self.critic_spec:
            raise ContractError("cannot warm-start from an agent with different networks")
        self.actor = other.actor.copy()
        self.critic = other.critic.copy()
        self.actor_target = other.actor_target.copy()
        self.critic_target = other.critic_target.copy()


def select_action(agent: DdpgAgent, s, eps: float, rng: np.random.Generator) -> tuple[Action, np.ndarray]:
    """Epsilon-greedy. Returns the action and the raw tanh-range vector to store."""
    if not 0.0 <= eps <= 1.0:
        raise ContractError(f"epsilon must lie in [0, 1], got {eps}")
    if eps > 0.0 and rng.random() < eps:
        raw = rng.uniform(-1.0, 1.0, size=agent.action_size)
    else:
        raw = agent.policy(s)
    return Action.from_policy(raw, agent.action_mode), raw


def compute_targets(agent: DdpgAgent, batch) -> np.ndarray:
    b = as_batch(batch)
    s2 = np.atleast_2d(b["s2"])
    a2 = forward(agent.actor_spec, agent.actor_target, s2, mode="eval")
    q2 = forward(agent.critic_spec, agent.critic_target, np.concatenate([s2, a2], axis=1), mode="eval")[:, 0]
    return b["r"] + agent.gamma * (1.0 - b["done"]) * q2


def critic_gradient(agent: DdpgAgent, batch, y=None):
    """``(gradients, loss)`` of the mean squared TD error."""
    b = as_batch(batch)
    if y is None:
        y = compute_targets(agent, b)
    x = np.concatenate([np.atleast_2d(b["s"]), np.atleast_2d(b["a"])], axis=1)
    q, cache = forward(agent.critic_spec, agent.critic, x, mode="train", return_cache=True)
    err = q[:, 0] - y
    n = len(err)
    loss = float(np.mean(err * err))
    grads, _ = backward(agent.critic_spec, agent.critic, x, (2.0 / n) * err[:, None], cache=cache)
    return grads, loss


def critic_update(agent: DdpgAgent, batch, y=None) -> float:
    """One Adam step on the critic. Returns the loss before the step."""
    grads, loss = critic_gradient(agent, batch, y)
    adam_step_inplace(agent.critic, clip_by_global_norm(grads, agent.config.grad_clip), agent.critic_opt)
    return loss


def actor_gradient(agent: DdpgAgent, states, mode: str = "train",
                   action_value_grad: Callable | None = None):
    """Gradient of ``-(1/N) sum Q(s, pi(s))`` with respect to the actor parameters.

    ``action_value_grad(s, a)`` can replace the critic's dQ/da (used for
    analytic test objectives). Returns ``(gradients, mean_q)``; ``mean_q`` is
    ``nan`` when the critic is bypassed.
    """
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    n = s.shape[0]
    a, a_cache = forward(agent.actor_spec, agent.actor, s, mode=mode, return_cache=True)
    if action_value_grad is None:
        x = np.concatenate([s, a], axis=1)
        q, q_cache = forward(agent.critic_spec, agent.critic, x, mode="eval", return_cache=True)
        _, dx = backward(agent.critic_spec, agent.critic, x, np.ones((n, 1)), cache=q_cache, input_only=True)
        dq_da = dx[:, agent.obs_size:]
        mean_q = float(q.mean())
    else:
        dq_da = np.asarray(action_value_grad(s, a), dtype=np.float64).reshape(a.shape)
        mean_q = float("nan")
    grads, _ = backward(agent.actor_spec, agent.actor, s, -dq_da / n, cache=a_cache)
    return grads, mean_q


def actor_update(agent: DdpgAgent, batch, action_value_grad: Callable | None = None) -> float:
    """One Adam step ascending the mean Q of the actor's actions. Returns the pre-step mean Q."""
    b = as_batch(batch) if not isinstance(batch, np.ndarray) else {"s": batch}
    grads, mean_q = actor_gradient(agent, b["s"], "train", action_value_grad)
    adam_step_inplace(agent.actor, clip_by_global_norm(grads, agent.config.grad_clip), agent.actor_opt)
    return mean_q


def soft_update_targets(agent: DdpgAgent) -> None:
    soft_update_inplace(agent.actor_target, agent.actor, agent.tau)
    soft_update_inplace(agent.critic_target, agent.critic, agent.tau)


def ready(agent: DdpgAgent) -> bool:
    return len(agent.buffer) >= max(agent.config.warmup, agent.config.batch_size)


def train_step(agent: DdpgAgent, rng: np.random.Generator) -> tuple[float, float] | None:
    """Critic update, actor update, soft target update. ``None`` while warming up."""
    if not ready(agent):
        return None
    batch = agent.buffer.sample(agent.config.batch_size, rng)
    loss = critic_update(agent, batch)
    q = actor_update(agent, batch)
    soft_update_targets(agent)
    agent.updates += 1
    return loss, q


@dataclass
class EpisodeLog:
    ret: float = 0.0
    steps: int = 0
    goal: bool = False
    collision: bool = False
    timeout: bool = False
    reached_termination: bool = False
    updates: int = 0
    components: dict = field(default_factory=dict)
    final_info: dict = field(default_factory=dict)
    final_obs: np.ndarray | None = None


def run_episode(env, act: Callable, rng: np.random.Generator, obs=None, termination=None,
                bonus: float = 0.0, max_steps: int | None = None, on_transition: Callable | None = None) -> EpisodeLog:
    """Roll ``act(obs) -> (Action, raw)`` in ``env`` until a stop condition.

    The episode stops on an env terminal, on entering ``termination`` (bonus
    added, transition marked done), or after ``max_steps``. ``on_transition``
    receives ``(s, raw, r, s2, done)`` where ``done`` is the bootstrap mask:
    true only for real terminals, never for step limits.
    """
    if obs is None:
        obs = env.reset(rng)
    log = EpisodeLog()
    while True:
        action, raw = act(obs)
        obs2, r, env_done, info = env.step(action)
        log.steps += 1
        parts = info.get("components")
        if parts is not None:
            for k, v in parts._asdict().items():
                log.components[k] = log.components.get(k, 0.0) + v
        in_beta = termination is not None and not info.get("collision", False) and termination(obs2)
        if in_beta:
            r += bonus
        if "terminal" in info:
            terminal = bool(info["terminal"]) or in_beta
        else:
            terminal = (env_done and not info.get("timeout", False)) or in_beta
        log.ret += r
        if on_transition is not None:
            on_transition(obs, raw, r, obs2, terminal)
        obs = obs2
        if env_done or in_beta or (max_steps is not None and log.steps >= max_steps):
            log.goal = bool(info.get("goal", False))
            log.collision = bool(info.get("collision", False))
            log.timeout = not (terminal or in_beta)
            log.reached_termination = bool(in_beta)
            log.final_info = info
            log.final_obs = obs
            return log


def train_episode(agent: DdpgAgent, env, schedule: EpsilonSchedule, rng: np.random.Generator,
                  episode: int = 0, obs=None, termination=None, bonus: float = 0.0,
                  max_steps: int | None = None, learn: bool = True) -> EpisodeLog:
    """One exploratory episode; every transition is stored and, once the buffer
    is warm, each step triggers one critic, actor and target update."""
    eps = schedule.value(episode)
    before = agent.updates

    def act(s):
        return select_action(agent, s, eps, rng)

    def store(s, raw, r, s2, done):
        agent.buffer.push(s=s, a=raw, r=r, s2=s2, done=float(done))
        if learn:
            train_step(agent, rng)

    log = run_episode(env, act, rng, obs, termination, bonus, max_steps, store)
    log.updates = agent.updates - before
    return log
