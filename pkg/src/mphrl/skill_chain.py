"""Backward skill chaining.

Primitives are built from the goal outward. Each link gets a DDPG policy that
drives into its termination set, then an initiation set learned from
labelled start states: a state is positive when the freshly trained policy
reaches the termination set from it within ``K`` steps. The next link's
termination set *is* that initiation classifier (same object), so the chain
is executable end to end.

The initiation sets are one-class SVMs with a Gaussian kernel, fitted by
projected gradient on the dual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ChainIncompleteError, ContractError, InsufficientPositivesError
from .rl_execution import DdpgAgent, EpsilonSchedule, train_episode
from .sim_world import Action


@dataclass
class GoalDisk:
    """Euclidean ball on selected observation entries, in world units.

    ``dims`` picks the host-position entries and ``scale`` undoes the
    observation normalization, so membership is exact in meters.
    """

    center: tuple[float, ...]
    radius: float
    dims: tuple[int, ...] = (0, 1)
    scale: float = 1.0

    def __post_init__(self):
        self.center = tuple(float(c) for c in self.center)
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.center) != len(self.dims):
            raise ContractError("center and dims must have the same length")
        if self.radius < 0:
            raise ContractError("radius must be non-negative")

    def contains(self, s) -> bool:
        d2 = 0.0
        for c, i in zip(self.center, self.dims):
            d = s[i] * self.scale - c
            d2 += d * d
        return math.sqrt(d2) <= self.radius

    def __call__(self, s) -> bool:
        return self.contains(s)

    def describe(self) -> dict:
        return {"kind": "goal_disk", "center": list(self.center), "radius": self.radius,
                "dims": list(self.dims), "scale": self.scale}


@dataclass(eq=False)
class InitiationClassifier:
    """One-class SVM decision rule ``g(s) = sum_i alpha_i k(s, s_i) - rho``.

    ``eq=False`` keeps comparison by identity, which is how chain adjacency is
    checked.
    """

    support: np.ndarray
    alpha: np.ndarray
    rho: float
    sigma: float
    nu: float
    feature_indices: tuple[int, ...]
    # full observation vectors the classifier was fitted on
    train_states: np.ndarray | None = None

    @property
    def n_train(self) -> int:
        return 0 if self.train_states is None else len(self.train_states)

    def containment(self) -> float:
        """Fraction of the training states accepted."""
        return float(np.mean(self.decision_function(self.train_states) >= 0.0))

    def _features(self, s) -> np.ndarray:
        x = np.atleast_2d(np.asarray(s, dtype=np.float64))
        return x[:, list(self.feature_indices)]

    def scores(self, s) -> np.ndarray:
        """Kernel expansion without the offset, batched."""
        x = self._features(s)
        d2 = ((x[:, None, :] - self.support[None, :, :]) ** 2).sum(axis=-1)
        k = np.exp(-d2 / (2.0 * self.sigma ** 2))
        return (k * self.alpha).sum(axis=-1)

    def decision_function(self, s) -> np.ndarray:
        return self.scores(s) - self.rho

    def contains(self, s) -> bool:
        return bool(self.decision_function(s)[0] >= 0.0)

    def __call__(self, s) -> bool:
        return self.contains(s)

    def describe(self) -> dict:
        return {"kind": "classifier", "nu": self.nu, "sigma": self.sigma, "rho": self.rho,
                "support_count": int(len(self.alpha)), "feature_indices": list(self.feature_indices),
                "n_train": self.n_train}


def contains(region, s) -> bool:
    return region.contains(s)


@dataclass
class ChainParams:
    K: int = 100
    N: int = 200
    nu: float = 0.1
    # "median" (median pairwise distance of the positives) or a fixed sigma in feature units
    bandwidth: str | float = "median"
    max_length: int = 8
    episodes_per_option: int = 50
    feature_indices: tuple[int, ...] = (0, 1, 2, 3)
    bonus: float = 10.0
    # share of label start states drawn from the canonical reset (rest: reset_random)
    canonical_fraction: float = 0.25
    label_retries: int = 3
    option_horizon: int | None = None
    min_positives: int = 5
    svm_iterations: int = 500

    def __post_init__(self):
        self.feature_indices = tuple(self.feature_indices)
        if self.K < 1 or self.N < 10 or self.max_length < 1:
            raise ContractError("need K >= 1, N >= 10 and max_length >= 1")
        if not 0.0 < self.nu < 1.0:
            raise ContractError("nu must lie in (0, 1)")

    @property
    def horizon(self) -> int:
        return self.option_horizon if self.option_horizon is not None else 4 * self.K

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class LabeledState:
    state: np.ndarray
    positive: bool


@dataclass(eq=False)
class MotionPrimitive:
    """Option triple plus bookkeeping. ``id`` is assigned by the library."""

    initiation: InitiationClassifier
    policy: DdpgAgent
    termination: GoalDisk | InitiationClassifier
    metadata: dict = field(default_factory=dict)
    id: int = -1

    def act(self, s):
        return self.policy.act(s)


# ---------------------------------------------------------------- one-class SVM


def _sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    return np.maximum(d2, 0.0)


def median_bandwidth(x: np.ndarray) -> float:
    n = len(x)
    if n < 2:
        return 1.0
    d = np.sqrt(_sq_dists(x)[np.triu_indices(n, 1)])
    sigma = float(np.median(d))
    return sigma if sigma > 1e-12 else 1.0


def project_capped_simplex(v: np.ndarray, cap: float, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{0 <= a <= cap, sum(a) = total}``.

    The projection is ``clip(v - t, 0, cap)`` for the shift ``t`` where the
    clipped sum hits ``total``. That sum is piecewise linear and decreasing in
    ``t`` with kinks at ``v`` and ``v - cap``, so ``t`` is found exactly by
    evaluating every kink and interpolating inside the bracketing piece.
    """
    v = np.asarray(v, dtype=np.float64)
    if cap * len(v) < total - 1e-12:
        raise ContractError("capped simplex is empty")
    kinks = np.unique(np.concatenate([v, v - cap]))
    sums = np.clip(v[None, :] - kinks[:, None], 0.0, cap).sum(axis=1)
    # sums is non-increasing along kinks; first kink where the sum drops to total or below
    j = int(np.searchsorted(-sums, -total, side="left"))
    if j == 0:
        t = kinks[0]
    elif j == len(kinks):
        t = kinks[-1]
    else:
        t0, t1, f0, f1 = kinks[j - 1], kinks[j], sums[j - 1], sums[j]
        t = t1 if f0 == f1 else t0 + (f0 - total) * (t1 - t0) / (f0 - f1)
    return np.clip(v - t, 0.0, cap)


def fit_initiation(positives: Sequence, params: ChainParams) -> InitiationClassifier:
    """Fit the initiation set from positive start states.

    Dual problem: minimize 0.5 a'Ka subject to 0 <= a_i <= 1/(nu N) and
    sum(a) = 1. The offset is the mean score of margin support vectors,
    lowered if needed so that at least ceil((1 - nu) N) training points are
    accepted.
    """
    pos = np.asarray(positives, dtype=np.float64)
    if pos.ndim != 2 or len(pos) < params.min_positives:
        raise InsufficientPositivesError(0 if pos.ndim != 2 else len(pos), params.min_positives)
    x = pos[:, list(params.feature_indices)]
    n = len(x)
    if params.bandwidth == "median":
        sigma = median_bandwidth(x)
    elif isinstance(params.bandwidth, (int, float)) and not isinstance(params.bandwidth, bool) \
            and params.bandwidth > 0:
        sigma = float(params.bandwidth)
    else:
        raise ContractError(f"unknown bandwidth rule {params.bandwidth!r}")
    k = np.exp(-_sq_dists(x) / (2.0 * sigma ** 2))
    cap = 1.0 / (params.nu * n)
    alpha = np.full(n, 1.0 / n)
    # 1 / Lipschitz constant of the gradient; K is symmetric PSD
    step = 1.0 / float(np.linalg.eigvalsh(k)[-1])
    for _ in range(params.svm_iterations):
        alpha = project_capped_simplex(alpha - step * (k @ alpha), cap)

    keep = alpha > 0.0
    clf = InitiationClassifier(x[keep].copy(), alpha[keep].copy(), 0.0, sigma, params.nu,
                               params.feature_indices, pos.copy())
    train_scores = clf.scores(pos)
    margin = (alpha > 1e-9 * cap) & (alpha < cap * (1 - 1e-9))
    # margin SVs sit on the boundary; the set is closed, so all of them are accepted
    rho_svm = float(train_scores[margin].min()) if margin.any() else float(np.median(train_scores))
    need = math.ceil((1.0 - params.nu) * n)
    rho_quota = float(np.sort(train_scores)[::-1][need - 1])
    clf.rho = min(rho_svm, rho_quota)
    return clf


# ---------------------------------------------------------------- labels and policies


def _greedy(agent: DdpgAgent):
    def act(s):
        raw = agent.policy(s)
        return Action.from_policy(raw, agent.action_mode), raw
    return act


def random_walk_start(env, rng: np.random.Generator, params: ChainParams, tries: int = 20):
    """A start state: canonical or randomized reset, then 0..K uniform-random steps.

    Returns ``None`` if every attempt ended the episode during the walk.
    """
    n_act = 3 if getattr(env, "action_mode", "longitudinal") == "full" else 1
    for _ in range(tries):
        if rng.random() < params.canonical_fraction or not hasattr(env, "reset_random"):
            obs = env.reset(rng)
        else:
            obs = env.reset_random(rng)
        done = False
        for _ in range(int(rng.integers(0, params.K + 1))):
            obs, _, done, _ = env.step(Action.from_policy(rng.uniform(-1, 1, n_act), env.action_mode))
            if done:
                break
        if not done:
            return obs
    return None


def label_from(env, obs, act: Callable, beta, K: int) -> bool:
    """Roll ``act`` from the env's current state; positive iff ``beta`` is hit within K steps."""
    if beta.contains(obs):
        return True
    for _ in range(K):
        action, _ = act(obs)
        obs, _, done, info = env.step(action)
        if info.get("collision", False):
            return False
        if beta.contains(obs):
            return True
        if done:
            return False
    return False


def collect_labels(env, policy: DdpgAgent | Callable, beta, K: int, N: int, rng: np.random.Generator,
                   params: ChainParams | None = None) -> list[LabeledState]:
    params = params or ChainParams(K=K, N=max(N, 10))
    act = _greedy(policy) if isinstance(policy, DdpgAgent) else policy
    out = []
    while len(out) < N:
        obs = random_walk_start(env, rng, params)
        if obs is None:
            raise RuntimeError("could not draw a start state that survives the random walk")
        out.append(LabeledState(np.array(obs, dtype=np.float64), label_from(env, obs, act, beta, K)))
    return out


def train_option_policy(env, beta, budget: int, rng: np.random.Generator, agent: DdpgAgent,
                        params: ChainParams | None = None) -> tuple[DdpgAgent, list]:
    """DDPG with a termination bonus. Episodes start from randomized starts and
    end on entering ``beta`` (+bonus), on an env terminal, or at the option horizon.

    Returns the agent (trained in place) and one entry per episode:
    ``(return, reached_beta)``.
    """
    params = params or ChainParams()
    cfg = agent.config
    sched = EpsilonSchedule.for_phase(budget, cfg.eps_start, cfg.eps_end, cfg.eps_fraction)
    curve = []
    for ep in range(budget):
        obs = env.reset_random(rng) if hasattr(env, "reset_random") else env.reset(rng)
        log = train_episode(agent, env, sched, rng, ep, obs=obs, termination=beta.contains,
                            bonus=params.bonus, max_steps=params.horizon)
        curve.append((log.ret, log.reached_termination))
    return agent, curve


def build_chain(env, goal, params: ChainParams, rng: np.random.Generator,
                agent_factory: Callable[[], DdpgAgent], warm_start: DdpgAgent | None = None,
                tag: str = "", on_episode: Callable | None = None) -> list[MotionPrimitive]:
    """Chain primitives backward from ``goal`` until the canonical start is covered.

    Link k >= 2 terminates in link k-1's initiation classifier (the same
    object). Each link's policy is warm-started from the previous link, or
    from ``warm_start`` for the first link.
    """
    chain: list[MotionPrimitive] = []
    beta = goal
    prev = warm_start
    start = env.canonical_start()
    for k in range(params.max_length):
        agent = agent_factory()
        if prev is not None:
            agent.load_weights_from(prev)
        agent, curve = train_option_policy(env, beta, params.episodes_per_option, rng, agent, params)
        if on_episode is not None:
            for ret, ok in curve:
                on_episode(k, ret, ok)
        labels = collect_labels(env, agent, beta, params.K, params.N, rng, params)
        positives = [lb.state for lb in labels if lb.positive]
        for _ in range(params.label_retries):
            if len(positives) >= params.min_positives:
                break
            more = collect_labels(env, agent, beta, params.K, params.N, rng, params)
            labels += more
            positives += [lb.state for lb in more if lb.positive]
        try:
            clf = fit_initiation(positives, params)
        except InsufficientPositivesError as e:
            raise ChainIncompleteError(f"link {k + 1}: {e}", chain) from e
        negatives = [lb.state for lb in labels if not lb.positive]
        false_accept = float(np.mean([clf.contains(s) for s in negatives])) if negatives else 0.0
        mp = MotionPrimitive(clf, agent, beta, {
            "subtask": tag, "link": k, "training_episodes": len(curve),
            "n_positive": len(positives), "n_negative": len(negatives),
            "false_accept_rate": false_accept,
            "final_success": float(np.mean([ok for _, ok in curve[-20:]])) if curve else 0.0,
        })
        chain.append(mp)
        if clf.contains(start):
            return chain
        beta = clf
        prev = agent
    raise ChainIncompleteError(f"start state not covered after {params.max_length} links", chain)
