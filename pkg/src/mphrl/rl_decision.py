"""Option-level decision layer.

A double DQN over the primitives in the library. Each option invocation is
one semi-Markov transition: the accumulated discounted reward ``R`` over the
``d`` steps the primitive ran, bootstrapped with ``gamma ** d``. The output
layer grows by one unit per new primitive without changing existing values.
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
    append_output_unit,
    backward,
    clip_by_global_norm,
    forward,
    init_params,
    soft_update_inplace,
)
from .errors import ContractError, NoAvailableOptionError
from .rl_execution import EpsilonSchedule, ReplayBuffer


@dataclass
class DecisionConfig:
    hidden: tuple[int, ...] = (256, 128)
    lr: float = 1e-4
    gamma: float = 0.99
    tau: float = 1e-3
    batch_size: int = 64
    capacity: int = 20_000
    # bootstrap with gamma**d; False gives a plain gamma
    smdp_gamma_power: bool = True
    t_max: int = 200
    grow_init: float = 1e-3
    grad_clip: float = 10.0
    warmup: int = 64
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.25

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not 0.0 <= self.gamma < 1.0 or not 0.0 < self.tau <= 1.0:
            raise ContractError("need 0 <= gamma < 1 and 0 < tau <= 1")
        if self.t_max < 1 or self.batch_size < 1 or self.capacity < self.batch_size:
            raise ContractError("need t_max >= 1 and capacity >= batch_size >= 1")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class SmdpTransition:
    s: np.ndarray
    option: int
    R: float
    d: int
    s2: np.ndarray
    done: bool
    # episode over for any reason (timeouts included); ``done`` is the bootstrap cut
    ended: bool = False
    rewards: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise ContractError("option duration must be at least one step")
        if not np.isfinite(self.R):
            raise ContractError("option return must be finite")


class DecisionAgent:
    def __init__(self, obs_size: int, n_options: int = 0, config: DecisionConfig | None = None, rng=None):
        self.config = cfg = config or DecisionConfig()
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.obs_size = int(obs_size)
        self.spec = MlpSpec((obs_size, *cfg.hidden, 0), output_activation="linear", use_batch_norm=False)
        self.online = init_params(self.spec, self.rng)
        self.target = self.online.copy()
        self.opt = AdamState.create(self.online, lr=cfg.lr)
        self.buffer = ReplayBuffer(cfg.capacity, {"s": (obs_size,), "o": (), "R": (), "d": (),
                                                  "s2": (obs_size,), "done": ()})
        self.updates = 0
        for _ in range(n_options):
            grow_output(self)

    @property
    def n_options(self) -> int:
        return self.spec.output_size

    @property
    def gamma(self) -> float:
        return self.config.gamma

    def q_values(self, s) -> np.ndarray:
        """``(batch, n_options)`` values; a single state gives one row."""
        return forward(self.spec, self.online, np.atleast_2d(s), mode="eval")

    def target_values(self, s) -> np.ndarray:
        return forward(self.spec, self.target, np.atleast_2d(s), mode="eval")

    def push(self, tr: SmdpTransition) -> None:
        self.buffer.push(s=tr.s, o=float(tr.option), R=tr.R, d=float(tr.d), s2=tr.s2, done=float(tr.done))

    def schedule(self, episodes: int) -> EpsilonSchedule:
        c = self.config
        return EpsilonSchedule.for_phase(episodes, c.eps_start, c.eps_end, c.eps_fraction)

    def clone(self) -> "DecisionAgent":
        return copy.deepcopy(self)

    def restore(self, state: dict) -> None:
        """Adopt saved networks (as restored by the library loader)."""
        spec = state["spec"]
        if spec.input_size != self.obs_size or spec.layer_sizes[1:-1] != self.spec.layer_sizes[1:-1]:
            raise ContractError("saved decision network has a different shape")
        self.spec = spec
        self.online = state["online"].copy()
        self.target = state["target"].copy()
        self.opt = AdamState.create(self.online, lr=self.config.lr)


def grow_output(agent: DecisionAgent) -> DecisionAgent:
    """Add one output unit to both networks; old outputs stay bit-identical."""
    g = agent.config.grow_init
    fan_in = agent.spec.layer_sizes[-2]
    row = agent.rng.uniform(-g, g, size=fan_in)
    bias = float(agent.rng.uniform(-g, g))
    agent.online = append_output_unit(agent.online, row, bias)
    agent.target = append_output_unit(agent.target, row, bias)
    agent.spec = agent.spec.with_output_size(agent.spec.output_size + 1)
    n = len(agent.online.weights)
    # final weight and bias slots in trainable() order
    for i in (n - 1, 2 * n - 1):
        for acc in (agent.opt.m, agent.opt.v):
            old = acc[i]
            acc[i] = np.concatenate([old, np.zeros((1,) + old.shape[1:])], axis=0)
    return agent


def select_option(agent: DecisionAgent, s, options, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over ``options``; greedy ties go to the lowest id."""
    opts = sorted(int(o) for o in options)
    if not opts:
        raise NoAvailableOptionError("no option is available in this state")
    if any(o < 0 or o >= agent.n_options for o in opts):
        raise ContractError("option id outside the decision network's range")
    if len(opts) == 1:
        return opts[0]
    if rng.random() < eps:
        return opts[int(rng.integers(len(opts)))]
    q = agent.q_values(s)[0]
    masked = np.full_like(q, -np.inf)
    masked[opts] = q[opts]
    return int(np.argmax(masked))


def execute_option(env, mp, gamma: float, t_max: int, obs, on_step: Callable | None = None) -> SmdpTransition:
    """Run ``mp``'s greedy policy from ``obs`` for at least one step.

    Stops when the termination set holds, the episode ends, or after
    ``t_max`` steps. ``on_step(obs, action, r, obs2, info)`` sees each step.
    """
    s = np.array(obs, dtype=np.float64)
    cur = s
    big_r, disc, d = 0.0, 1.0, 0
    rewards = []
    while True:
        action = mp.policy.act(cur)
        nxt, r, ended, info = env.step(action)
        if on_step is not None:
            on_step(cur, action, r, nxt, info)
        big_r += disc * r
        disc *= gamma
        rewards.append(r)
        d += 1
        cur = nxt
        if ended or mp.termination.contains(cur) or d >= t_max:
            break
    terminal = bool(info.get("terminal", ended))
    return SmdpTransition(s, mp.id, big_r, d, np.array(cur, dtype=np.float64), terminal, bool(ended), rewards, info)


def _as_option_batch(batch) -> dict:
    if isinstance(batch, dict):
        return batch
    rows = list(batch)
    if not rows:
        raise ContractError("empty batch")
    return {"s": np.array([t.s for t in rows]), "o": np.array([t.option for t in rows], dtype=float),
            "R": np.array([t.R for t in rows]), "d": np.array([t.d for t in rows], dtype=float),
            "s2": np.array([t.s2 for t in rows]), "done": np.array([t.done for t in rows], dtype=float)}


def ddqn_target(agent: DecisionAgent, batch) -> np.ndarray:
    """Online network picks the next option, target network prices it."""
    b = _as_option_batch(batch)
    s2 = np.atleast_2d(b["s2"])
    pick = np.argmax(agent.q_values(s2), axis=1)
    value = agent.target_values(s2)[np.arange(len(pick)), pick]
    d = np.asarray(b["d"], dtype=np.float64)
    disc = agent.gamma ** d if agent.config.smdp_gamma_power else np.full_like(d, agent.gamma)
    return np.asarray(b["R"], dtype=np.float64) + (1.0 - np.asarray(b["done"], dtype=np.float64)) * disc * value


def decision_update(agent: DecisionAgent, batch, y=None) -> float:
    """Mean squared error on the taken options, one Adam step, soft target update.

    Returns the loss before the step.
    """
    b = _as_option_batch(batch)
    if y is None:
        y = ddqn_target(agent, b)
    s = np.atleast_2d(b["s"])
    o = np.asarray(b["o"]).astype(int)
    q, cache = forward(agent.spec, agent.online, s, mode="train", return_cache=True)
    rows = np.arange(len(o))
    err = q[rows, o] - y
    n = len(err)
    loss = float(np.mean(err * err))
    upstream = np.zeros_like(q)
    upstream[rows, o] = (2.0 / n) * err
    grads, _ = backward(agent.spec, agent.online, s, upstream, cache=cache)
    adam_step_inplace(agent.online, clip_by_global_norm(grads, agent.config.grad_clip), agent.opt)
    soft_update_inplace(agent.target, agent.online, agent.config.tau)
    agent.updates += 1
    return loss


def decision_train_step(agent: DecisionAgent, rng: np.random.Generator) -> float | None:
    c = agent.config
    if len(agent.buffer) < max(c.batch_size, c.warmup) or agent.n_options == 0:
        return None
    return decision_update(agent, agent.buffer.sample(c.batch_size, rng))
