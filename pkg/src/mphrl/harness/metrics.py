"""Episode records, the ``episodes.csv`` format, EMA smoothing and success tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ContractError, CorruptionError
from ..sim_world import SUBTASKS

EPISODE_HEADER = ["phase", "epoch", "steps", "return", "r_vel", "r_living", "r_col", "r_goal",
                  "success_lane_change", "success_left_turn", "success_turn_around", "goal", "collision", "seed"]
SUCCESS_COLUMNS = dict(zip(SUBTASKS, EPISODE_HEADER[8:11]))
TABLE_ROWS = list(SUBTASKS) + ["goal"]


@dataclass
class EpisodeRecord:
    phase: str
    epoch: int
    steps: int
    ret: float
    components: tuple[float, float, float, float]
    # per subtask: None when the subtask's vehicle was absent
    success: dict
    goal: bool
    collision: bool
    seed: int
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def row(self) -> list[str]:
        flags = ["" if self.success.get(t) is None else str(int(self.success[t])) for t in SUBTASKS]
        nums = [repr(float(x)) for x in (self.ret, *self.components)]
        return [self.phase, str(self.epoch), str(self.steps), *nums, *flags, str(int(self.goal)),
                str(int(self.collision)), str(self.seed)]

    @classmethod
    def from_row(cls, row: dict) -> "EpisodeRecord":
        success = {t: None if row[c] == "" else bool(int(row[c])) for t, c in SUCCESS_COLUMNS.items()}
        return cls(row["phase"], int(row["epoch"]), int(row["steps"]), float(row["return"]),
                   tuple(float(row[k]) for k in ("r_vel", "r_living", "r_col", "r_goal")), success,
                   bool(int(row["goal"])), bool(int(row["collision"])), int(row["seed"]))


def write_episodes(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_HEADER)
        for r in records:
            w.writerow(r.row())


def read_episodes(path) -> list[EpisodeRecord]:
    p = Path(path)
    if not p.is_file():
        raise CorruptionError(p, "episode log not found")
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != EPISODE_HEADER:
            raise CorruptionError(p, "unexpected episode log header")
        try:
            return [EpisodeRecord.from_row(row) for row in reader]
        except (KeyError, ValueError, TypeError) as e:
            raise CorruptionError(p, f"malformed row ({e})") from e


def ema(series, w: float) -> list[float]:
    if not 0.0 <= w < 1.0:
        raise ContractError("EMA weight must lie in [0, 1)")
    out: list[float] = []
    for x in series:
        out.append(float(x) if not out else w * out[-1] + (1.0 - w) * float(x))
    return out


@dataclass
class SuccessTable:
    # row name -> rate, or None when the subtask never appeared in the window
    rates: dict
    counts: dict
    window: int

    def rate(self, row: str):
        return self.rates[row]


def success_rates(records, window: int) -> SuccessTable:
    """Rates over the final ``window`` episodes.

    A subtask's rate counts only episodes where it was present; the goal rate
    counts all of them.
    """
    recs = list(records)
    if window < 1 or window > len(recs):
        raise ContractError(f"window {window} does not fit {len(recs)} episodes")
    tail = recs[-window:]
    rates, counts = {}, {}
    for t in SUBTASKS:
        flags = [r.success.get(t) for r in tail if r.success.get(t) is not None]
        counts[t] = (sum(flags), len(flags))
        rates[t] = sum(flags) / len(flags) if flags else None
    goals = sum(r.goal for r in tail)
    counts["goal"] = (goals, window)
    rates["goal"] = goals / window
    return SuccessTable(rates, counts, window)
