"""Offline curriculum, mixed test and baseline runs.

Every method sees the same phase schedule and the same scenario draws: the
environment of (seed, phase index, epoch) is spawned from its own seed
sequence, separate from the stream the learner uses for exploration.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..errors import ChainIncompleteError, NoAvailableOptionError
from ..mp_library import Library, available_options, fallback_option, load, match_or_create, save
from ..rl_decision import DecisionAgent, decision_train_step, execute_option, grow_output, select_option
from ..rl_execution import DdpgAgent, EpsilonSchedule
from ..sim_world import POS_SCALE, SUBTASKS, IntersectionEnv
from ..skill_chain import GoalDisk, build_chain
from . import baselines
from .config import RunConfig
from .metrics import EpisodeRecord, write_episodes

CHAIN_HEADER = ["phase", "link", "episode", "return", "reached"]


def episode_rngs(seed: int, phase_index: int, epoch: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(scenario stream, learner stream) for one logged episode."""
    env_ss, agent_ss = np.random.SeedSequence([seed, phase_index, epoch]).spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(agent_ss)


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


class OutcomeTracker:
    """Env wrapper that tallies what an episode log needs from every step."""

    def __init__(self, env: IntersectionEnv):
        self.env = env

    def __getattr__(self, name):
        return getattr(self.env, name)

    def reset(self, rng):
        obs = self.env.reset(rng)
        self.present = dict(self.env.world.present)
        self.steps = 0
        self.ret = 0.0
        self.components = np.zeros(4)
        self.passed = {t: False for t in SUBTASKS}
        self.goal = self.collision = False
        return obs

    def step(self, action):
        obs, r, done, info = self.env.step(action)
        self.steps += 1
        self.ret += r
        self.components += np.array(info["components"])
        if info["collision"]:
            self.collision = True
        else:
            # zones count only if passed before any collision
            self.passed = dict(info["zones_passed"])
        self.goal |= bool(info["goal"])
        return obs, r, done, info

    def record(self, phase: str, epoch: int, seed: int, wall: float, **extra) -> EpisodeRecord:
        success = {t: (self.passed[t] if self.present[t] else None) for t in SUBTASKS}
        return EpisodeRecord(phase, epoch, self.steps, self.ret, tuple(float(c) for c in self.components),
                             success, self.goal, self.collision, seed, wall, extra)


def goal_region(cfg: RunConfig) -> GoalDisk:
    sc = cfg.scenario
    return GoalDisk(sc.goal_center, sc.goal_radius, dims=(0, 1), scale=POS_SCALE)


class MpController:
    """Library plus decision layer; runs hierarchical episodes."""

    def __init__(self, cfg: RunConfig, lib: Library, decision: DecisionAgent):
        self.cfg = cfg
        self.lib = lib
        self.decision = decision
        self.fallbacks = 0
        self.grow_events = 0

    @classmethod
    def fresh(cls, cfg: RunConfig, seed: int) -> "MpController":
        lib = Library()
        ctl = cls(cfg, lib, DecisionAgent(8, 0, cfg.decision, stream(seed, 7, 0)))
        lib.subscribe(ctl._on_append)
        return ctl

    def _on_append(self, mp) -> None:
        grow_output(self.decision)
        self.grow_events += 1

    def episode(self, env: OutcomeTracker, env_rng, rng, eps: float, learn: bool) -> int:
        """One logged episode; returns the number of option invocations."""
        obs = env.reset(env_rng)
        c = self.cfg.decision
        n = 0
        while True:
            opts = available_options(self.lib, obs)
            if opts:
                o = select_option(self.decision, obs, opts, eps, rng)
            else:
                o = fallback_option(self.lib, obs)
                self.fallbacks += 1
            tr = execute_option(env, self.lib[o], c.gamma, c.t_max, obs)
            self.decision.push(tr)
            if learn:
                decision_train_step(self.decision, rng)
            n += 1
            obs = tr.s2
            if tr.ended:
                return n


def _write_chain_log(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHAIN_HEADER)
        w.writerows(rows)


def _write_meta(path, meta: dict) -> None:
    Path(path).write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")


def run_offline(cfg: RunConfig, seed: int = 0, out_dir=None, progress=None):
    """Offline curriculum for the primitive-library method.

    Returns ``(controller, records)``. With ``out_dir`` the library,
    ``episodes.csv``, ``chain_episodes.csv`` and ``run_meta.json`` are
    written there, also when chaining fails (the error is re-raised after).
    """
    ctl = MpController.fresh(cfg, seed)
    lib = ctl.lib
    records: list[EpisodeRecord] = []
    chain_rows: list = []
    created: dict = {}
    timing: dict = {}
    epoch = 0
    goal = goal_region(cfg)
    failure = None
    try:
        for pi, phase in enumerate(cfg.phases):
            if phase.is_test:
                continue
            t0 = time.perf_counter()
            env = OutcomeTracker(IntersectionEnv(phase.scenario(cfg.scenario)))
            crng = stream(seed, pi, 1_000_000)
            params = replace(cfg.chain, episodes_per_option=cfg.link_budget(phase))
            base_ids = lib.ids_for("constant_speed")
            warm = lib[base_ids[0]].policy if base_ids else None

            def log_chain(link, ret, ok, _kind=phase.kind, _n=[0]):
                chain_rows.append([_kind, link, _n[0], repr(float(ret)), int(ok)])
                _n[0] += 1

            def factory(_env=env.env, _params=params, _crng=crng, _warm=warm, _kind=phase.kind, _log=log_chain):
                return build_chain(_env, goal, _params, _crng, lambda: DdpgAgent(8, cfg.ddpg, _crng),
                                   warm_start=_warm, tag=_kind, on_episode=_log)

            before = len(lib)
            mp_id, was_created = match_or_create(lib, env.canonical_start(), factory, phase=phase.kind)
            created[phase.kind] = {"created": was_created, "ids": list(range(before, len(lib))), "matched": mp_id}
            if progress:
                progress(f"{phase.kind}: library size {len(lib)} (created={was_created})")
            n = cfg.epochs(phase)
            sched = ctl.decision.schedule(n)
            learn = cfg.decision_schedule == "online"
            for e in range(n):
                env_rng, rng = episode_rngs(seed, pi, e)
                t1 = time.perf_counter()
                k = ctl.episode(env, env_rng, rng, sched.value(e), learn)
                records.append(env.record(phase.kind, epoch, seed, time.perf_counter() - t1, options=k))
                epoch += 1
            timing[phase.kind] = time.perf_counter() - t0
        if cfg.decision_schedule == "consolidate":
            crng = stream(seed, 8, 0)
            for _ in range(cfg.consolidation_updates):
                if decision_train_step(ctl.decision, crng) is None:
                    break
    except ChainIncompleteError as e:
        failure = e
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save(lib, out / "library", decision=ctl.decision)
        write_episodes(records, out / "episodes.csv")
        _write_chain_log(chain_rows, out / "chain_episodes.csv")
        _write_meta(out / "run_meta.json", {
            "method": "mp", "stage": "offline", "seed": seed, "scale": cfg.scale, "config": cfg.to_dict(),
            "library_size": len(lib), "subtasks": lib.subtasks, "grow_events": ctl.grow_events,
            "fallbacks": ctl.fallbacks, "created": created, "timing": timing,
            "failure": None if failure is None else str(failure),
        })
    if failure is not None:
        raise failure
    return ctl, records


def offline_epochs(cfg: RunConfig) -> int:
    return sum(cfg.epochs(p) for p in cfg.offline_phases)


def controller_for_test(cfg: RunConfig, lib: Library, seed: int) -> MpController:
    dec = DecisionAgent(8, 0, cfg.decision, stream(seed, 7, 0))
    if lib.decision_state is not None:
        dec.restore(lib.decision_state)
    else:
        for _ in lib:
            grow_output(dec)
    return MpController(cfg, lib, dec)


def run_test(cfg: RunConfig, lib: Library | str | Path, seed: int = 0, out_dir=None, episodes: int | None = None,
             controller: MpController | None = None) -> list[EpisodeRecord]:
    """Mixed test phase(s). The decision layer keeps learning; primitives stay frozen.

    Without ``controller`` a fresh one is built from the library and its
    saved decision weights, so repeated calls give identical logs.
    """
    if not isinstance(lib, Library):
        lib = load(lib)
    if not len(lib):
        raise NoAvailableOptionError("cannot test with an empty library")
    ctl = controller or controller_for_test(cfg, lib, seed)
    records = []
    epoch = offline_epochs(cfg)
    for pi, phase in enumerate(cfg.phases):
        if not phase.is_test:
            continue
        env = OutcomeTracker(IntersectionEnv(phase.scenario(cfg.scenario)))
        n = episodes if episodes is not None else cfg.epochs(phase)
        for e in range(n):
            env_rng, rng = episode_rngs(seed, pi, e)
            t1 = time.perf_counter()
            k = ctl.episode(env, env_rng, rng, cfg.test_epsilon, True)
            records.append(env.record(phase.kind, epoch, seed, time.perf_counter() - t1, options=k))
            epoch += 1
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_episodes(records, out / "episodes.csv")
        _write_meta(out / "run_meta.json", {"method": "mp", "stage": "test", "seed": seed, "scale": cfg.scale,
                                            "config": cfg.to_dict(), "fallbacks": ctl.fallbacks})
    return records


def run_mp(cfg: RunConfig, seed: int = 0, out_dir=None, progress=None) -> list[EpisodeRecord]:
    """Offline curriculum followed by the test phase, logged into one ``episodes.csv``."""
    ctl, records = run_offline(cfg, seed, out_dir, progress)
    test = run_test(cfg, ctl.lib, seed, controller=ctl)
    records = records + test
    if out_dir is not None:
        write_episodes(records, Path(out_dir) / "episodes.csv")
        meta_path = Path(out_dir) / "run_meta.json"
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        meta.update(stage="full", fallbacks=ctl.fallbacks)
        _write_meta(meta_path, meta)
    return records


def run_baseline(cfg: RunConfig, algo: str, seed: int = 0, out_dir=None, progress=None) -> list[EpisodeRecord]:
    """One flat learner carried through every phase, test phase included."""
    if algo not in ("flat_ddpg", "tabular_q"):
        raise ValueError(f"unknown baseline {algo!r}")
    rng0 = stream(seed, 9, 0)
    agent = baselines.flat_ddpg_agent(cfg.ddpg, rng0) if algo == "flat_ddpg" else \
        baselines.TabularQ(cfg.q_alpha, cfg.q_gamma)
    records = []
    epoch = 0
    for pi, phase in enumerate(cfg.phases):
        env = OutcomeTracker(IntersectionEnv(phase.scenario(cfg.scenario)))
        n = cfg.epochs(phase)
        sched = (EpsilonSchedule(cfg.test_epsilon, cfg.test_epsilon, 0) if phase.is_test
                 else EpsilonSchedule.for_phase(n, cfg.ddpg.eps_start, cfg.ddpg.eps_end, cfg.ddpg.eps_fraction))
        for e in range(n):
            env_rng, rng = episode_rngs(seed, pi, e)
            t1 = time.perf_counter()
            if algo == "flat_ddpg":
                baselines.flat_ddpg_episode(agent, env, sched, e, rng, env_rng)
            else:
                baselines.tabular_episode(agent, env, sched.value(e), rng, env_rng)
            records.append(env.record(phase.kind, epoch, seed, time.perf_counter() - t1))
            epoch += 1
        if progress:
            progress(f"{algo} {phase.kind}: done {n} episodes")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_episodes(records, out / "episodes.csv")
        _write_meta(out / "run_meta.json", {"method": algo, "stage": "full", "seed": seed, "scale": cfg.scale,
                                            "config": cfg.to_dict()})
    return records
