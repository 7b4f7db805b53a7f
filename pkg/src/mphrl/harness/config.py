"""Run configuration: phase schedule, agent hyperparameters, JSON round trip."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import InvalidConfigError
from ..rl_decision import DecisionConfig
from ..rl_execution import DdpgConfig
from ..sim_world import SUBTASKS, ScenarioConfig
from ..skill_chain import ChainParams

PHASE_KINDS = ("constant_speed",) + SUBTASKS + ("mixed_test",)
METHODS = ("mp", "flat_ddpg", "tabular_q")


@dataclass
class PhaseSpec:
    kind: str
    epochs: int
    # only used by mixed_test
    presence_probability: float = 0.5

    def __post_init__(self):
        if self.kind not in PHASE_KINDS:
            raise InvalidConfigError(f"unknown phase kind {self.kind!r}")
        if self.epochs < 1:
            raise InvalidConfigError("a phase needs at least one epoch")
        if not 0.0 <= self.presence_probability <= 1.0:
            raise InvalidConfigError("presence_probability must lie in [0, 1]")

    @property
    def is_test(self) -> bool:
        return self.kind == "mixed_test"

    def scaled(self, scale: float) -> int:
        """Epochs after scaling; half-up rounding, never below one."""
        return max(1, int(math.floor(self.epochs * scale + 0.5)))

    def scenario(self, base: ScenarioConfig) -> ScenarioConfig:
        if self.kind == "constant_speed":
            return replace(base, subtasks=(), presence_probability=1.0)
        if self.is_test:
            return replace(base, subtasks=SUBTASKS, presence_probability=self.presence_probability)
        return replace(base, subtasks=(self.kind,), presence_probability=1.0)


def default_phases() -> list[PhaseSpec]:
    return [PhaseSpec(k, 400) for k in ("constant_speed",) + SUBTASKS] + [PhaseSpec("mixed_test", 1000)]


# host x, y, yaw and the other-vehicle block; host speed is left out because random-walk
# starts sit near standstill, so a speed feature rejects any option arriving at cruise speed
INTERSECTION_FEATURES = (0, 1, 2, 4, 5, 6, 7)


def intersection_chain_params() -> ChainParams:
    return ChainParams(K=200, N=200, nu=0.1, feature_indices=INTERSECTION_FEATURES, max_length=8,
                       option_horizon=200)


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    phases: list[PhaseSpec] = field(default_factory=default_phases)
    seeds: list[int] = field(default_factory=lambda: [0])
    ddpg: DdpgConfig = field(default_factory=DdpgConfig)
    decision: DecisionConfig = field(default_factory=DecisionConfig)
    chain: ChainParams = field(default_factory=intersection_chain_params)
    out_dir: str = "runs"
    scale: float = 0.1
    # "consolidate": decision net trains on the offline option buffer after the last
    # offline phase, then keeps training in the test phase; "online": trains after every option
    decision_schedule: str = "consolidate"
    consolidation_updates: int = 2000
    # option-policy episodes per chain link, as a multiple of the scaled phase epochs
    link_budget_factor: float = 1.0
    test_epsilon: float = 0.05
    success_window: int = 200
    ema_weight: float = 0.95
    # tabular Q baseline
    q_alpha: float = 0.1
    q_gamma: float = 0.99

    def __post_init__(self):
        if not self.phases:
            raise InvalidConfigError("need at least one phase")
        if not self.seeds:
            raise InvalidConfigError("need at least one seed")
        if not 0.0 < self.scale <= 1.0:
            raise InvalidConfigError(f"scale must lie in (0, 1], got {self.scale}")
        if self.decision_schedule not in ("consolidate", "online"):
            raise InvalidConfigError(f"unknown decision schedule {self.decision_schedule!r}")

    @property
    def offline_phases(self) -> list[PhaseSpec]:
        return [p for p in self.phases if not p.is_test]

    @property
    def test_phases(self) -> list[PhaseSpec]:
        return [p for p in self.phases if p.is_test]

    def epochs(self, phase: PhaseSpec) -> int:
        return phase.scaled(self.scale)

    def link_budget(self, phase: PhaseSpec) -> int:
        return max(1, int(math.floor(self.epochs(phase) * self.link_budget_factor + 0.5)))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "phases": [{"kind": p.kind, "epochs": p.epochs, "presence_probability": p.presence_probability}
                       for p in self.phases],
            "seeds": list(self.seeds),
            "ddpg": self.ddpg.to_dict(),
            "decision": self.decision.to_dict(),
            "chain": self.chain.to_dict(),
            "out_dir": self.out_dir,
            "scale": self.scale,
            "decision_schedule": self.decision_schedule,
            "consolidation_updates": self.consolidation_updates,
            "link_budget_factor": self.link_budget_factor,
            "test_epsilon": self.test_epsilon,
            "success_window": self.success_window,
            "ema_weight": self.ema_weight,
            "q_alpha": self.q_alpha,
            "q_gamma": self.q_gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown config fields {sorted(unknown)}")
        tup = lambda x: {k: tuple(v) if isinstance(v, list) else v for k, v in x.items()}
        if "scenario" in d:
            d["scenario"] = ScenarioConfig.from_dict(d["scenario"])
        if "phases" in d:
            d["phases"] = [PhaseSpec(**p) for p in d["phases"]]
        if "ddpg" in d:
            d["ddpg"] = DdpgConfig(**tup(d["ddpg"]))
        if "decision" in d:
            d["decision"] = DecisionConfig.from_dict(tup(d["decision"]))
        if "chain" in d:
            d["chain"] = ChainParams(**tup(d["chain"]))
        return cls(**d)


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise InvalidConfigError(f"cannot read config {path}: {e}") from e
    return RunConfig.from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1), encoding="utf-8")
