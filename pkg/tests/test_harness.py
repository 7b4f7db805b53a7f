import csv
import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mphrl.cli import main
from mphrl.errors import ContractError, CorruptionError, InvalidConfigError
from mphrl.harness.baselines import Q_ACTIONS, TabularQ, discretize
from mphrl.harness.config import PhaseSpec, RunConfig, load_config, save_config
from mphrl.harness.experiment import OutcomeTracker, episode_rngs, run_baseline
from mphrl.harness.metrics import EPISODE_HEADER, EpisodeRecord, ema, read_episodes, success_rates, \
    write_episodes
from mphrl.harness.report import report
from mphrl.harness.toy_envs import ChainMdp, Corridor1D, PointReach
from mphrl.sim_world import SUBTASKS, Action, IntersectionEnv, ScenarioConfig, encode, VehicleState


def rec(epoch, success=None, goal=False, phase="mixed_test", ret=0.0):
    success = success or {t: None for t in SUBTASKS}
    return EpisodeRecord(phase, epoch, 10, ret, (0.0, -5.0, 0.0, 0.0), success, goal, False, 0)


# ---------------------------------------------------------------- toy envs


def test_chain_mdp_value_iteration_converges():
    v, q, sweeps = ChainMdp().value_iteration(tol=1e-10)
    assert np.allclose(v, [5.5705, 6.34, 8.05, 9.0, 0.0], atol=1e-12)
    assert q[:4].argmax(axis=1).tolist() == [1, 1, 1, 0]


def test_corridor_full_throttle_step_count():
    # x_n = 0.2 n - 1.1 once the speed saturates; first n with x_n >= 9 is 51
    env = Corridor1D()
    env.reset(np.random.default_rng(0))
    n, done = 0, False
    while not done:
        _, _, done, info = env.step(Action(1.0, 0.0))
        n += 1
    assert info["goal"] and n == 51
    assert math.ceil((9 + 1.1) / 0.2) == 51


def test_point_reach_zero_action_never_succeeds():
    env = PointReach()
    rng = np.random.default_rng(0)
    for _ in range(20):
        env.reset(rng)
        done = False
        while not done:
            _, _, done, info = env.step(Action(0.0, 0.0))
        assert not info["goal"]


# ---------------------------------------------------------------- config


def test_scaled_epoch_bookkeeping():
    cfg = RunConfig(scale=0.1)
    assert [cfg.epochs(p) for p in cfg.offline_phases] == [40, 40, 40, 40]
    assert sum(cfg.epochs(p) for p in cfg.test_phases) == 100
    assert PhaseSpec("lane_change", 5).scaled(0.1) == 1
    assert PhaseSpec("lane_change", 25).scaled(0.1) == 3


def test_config_json_round_trip(tmp_path):
    cfg = RunConfig(scale=0.5, seeds=[3, 4], phases=[PhaseSpec("constant_speed", 7), PhaseSpec("mixed_test", 9, 0.3)])
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back.to_dict() == cfg.to_dict()
    assert back.chain == cfg.chain and back.ddpg == cfg.ddpg and back.scenario == cfg.scenario


@pytest.mark.parametrize("bad", [{"scale": 0.0}, {"scale": 1.5}, {"seeds": []}, {"phases": []}])
def test_invalid_config(bad):
    with pytest.raises(InvalidConfigError):
        RunConfig(**bad)


def test_unknown_phase_kind():
    with pytest.raises(InvalidConfigError):
        PhaseSpec("roundabout", 10)


def test_phase_scenarios():
    base = ScenarioConfig()
    assert PhaseSpec("constant_speed", 1).scenario(base).subtasks == ()
    assert PhaseSpec("turn_around", 1).scenario(base).subtasks == ("turn_around",)
    test = PhaseSpec("mixed_test", 1).scenario(base)
    assert test.subtasks == SUBTASKS and test.presence_probability == 0.5


def test_flat_ddpg_uses_table_sizes():
    cfg = RunConfig()
    assert cfg.ddpg.actor_hidden == (400, 300) and cfg.ddpg.critic_hidden == (400, 300)
    assert cfg.decision.hidden == (256, 128)


# ---------------------------------------------------------------- metrics


def test_ema_examples():
    assert ema([3.0] * 5, 0.95) == [3.0] * 5
    assert ema([1.0, 5.0, -2.0], 0.0) == [1.0, 5.0, -2.0]
    assert np.allclose(ema([0.0, 10.0, 10.0], 0.95), [0.0, 0.5, 0.975], atol=1e-12)
    assert ema([], 0.5) == []


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40), st.floats(0, 0.99))
def test_ema_stays_within_series_range(xs, w):
    ys = ema(xs, w)
    assert min(xs) - 1e-9 <= min(ys) and max(ys) <= max(xs) + 1e-9


def test_success_rates_counting():
    logs = []
    for i in range(10):
        s = {"lane_change": i < 7, "left_turn_oncoming": None, "turn_around": True}
        logs.append(rec(i, s, goal=i % 2 == 0))
    table = success_rates(logs, 10)
    assert table.rates["lane_change"] == 0.7
    assert table.rates["left_turn_oncoming"] is None
    assert table.rates["turn_around"] == 1.0
    assert table.rates["goal"] == 0.5


def test_success_rates_all_success():
    logs = [rec(i, {t: True for t in SUBTASKS}, goal=True) for i in range(5)]
    assert all(v == 1.0 for v in success_rates(logs, 5).rates.values())


def test_success_window_too_large():
    with pytest.raises(ContractError):
        success_rates([rec(0)], 2)


def test_episode_csv_round_trip(tmp_path):
    logs = [rec(i, {"lane_change": True, "left_turn_oncoming": None, "turn_around": False}, ret=0.1 * i)
            for i in range(4)]
    write_episodes(logs, tmp_path / "e.csv")
    with open(tmp_path / "e.csv") as fh:
        assert next(csv.reader(fh)) == EPISODE_HEADER
    back = read_episodes(tmp_path / "e.csv")
    assert [r.row() for r in back] == [r.row() for r in logs]


# ---------------------------------------------------------------- outcome tracking


def test_tracker_matches_reward_sum():
    env = OutcomeTracker(IntersectionEnv(ScenarioConfig(max_steps=200)))
    env.reset(np.random.default_rng(0))
    total = 0.0
    done = False
    while not done:
        _, r, done, _ = env.step(Action(0.5, 0.0))
        total += r
    r = env.record("lane_change", 0, 0, 0.0)
    assert r.ret == total and abs(sum(r.components) - total) < 1e-9
    assert r.steps <= 200


def test_episode_streams_are_disjoint_and_repeatable():
    a, b = episode_rngs(0, 1, 2)
    a2, _ = episode_rngs(0, 1, 2)
    assert a.random() == a2.random()
    assert a.random() != b.random()


# ---------------------------------------------------------------- baselines


def test_tabular_q_starts_at_zero():
    q = TabularQ()
    obs = encode(VehicleState(1.75, -40, math.pi / 2, 3.0), VehicleState(-1.75, 40, -math.pi / 2, 4.0))
    assert np.all(q.table == 0.0) and np.all(q.q(obs) == 0.0)
    assert q.table.shape == (7, 7, 5, 8, len(Q_ACTIONS))


def test_tabular_q_update_arithmetic():
    q = TabularQ(alpha=0.1, gamma=0.9)
    s = encode(VehicleState(0, 0, 0, 3.0), None)
    s2 = encode(VehicleState(1, 0, 0, 6.0), None)
    q.table[discretize(s2)][2] = 4.0
    q.update(s, 1, 1.0, s2, False)
    assert q.q(s)[1] == pytest.approx(0.1 * (1.0 + 0.9 * 4.0))
    q.update(s, 3, 2.0, s2, True)
    assert q.q(s)[3] == pytest.approx(0.2)


def test_discretize_host_frame():
    host = VehicleState(0.0, 0.0, math.pi / 2, 9.9)
    # 10 m straight ahead of a north-facing host, same heading
    cell = discretize(encode(host, VehicleState(0.0, 10.0, math.pi / 2, 0.0)))
    assert cell == (4, 3, 4, 4)
    # sentinel lands in the far-ahead bin
    assert discretize(encode(host, None))[0] == 6


def tiny_config(**kw):
    phases = [PhaseSpec("constant_speed", 2), PhaseSpec("lane_change", 2), PhaseSpec("mixed_test", 3)]
    base = dict(phases=phases, scale=1.0, scenario=ScenarioConfig(max_steps=60))
    return RunConfig(**{**base, **kw})


@pytest.mark.parametrize("algo", ["flat_ddpg", "tabular_q"])
def test_baseline_logs_follow_schedule(tmp_path, algo):
    from mphrl.rl_execution import DdpgConfig
    cfg = tiny_config(ddpg=DdpgConfig(actor_hidden=(8,), critic_hidden=(8,), warmup=16, batch_size=8))
    recs = run_baseline(cfg, algo, 0, tmp_path)
    assert [r.phase for r in recs] == ["constant_speed"] * 2 + ["lane_change"] * 2 + ["mixed_test"] * 3
    assert [r.epoch for r in recs] == list(range(7))
    back = read_episodes(tmp_path / "episodes.csv")
    assert [r.row() for r in back] == [r.row() for r in recs]
    again = run_baseline(cfg, algo, 0)
    assert [r.row() for r in again] == [r.row() for r in recs]


# ---------------------------------------------------------------- report


def fake_run(path, method, n=30, seed=0):
    path.mkdir(parents=True)
    rng = np.random.default_rng(seed)
    logs = []
    for i in range(n):
        s = {t: (bool(rng.random() < 0.6) if rng.random() < 0.5 else None) for t in SUBTASKS}
        logs.append(rec(i, s, goal=bool(rng.random() < 0.4), phase="lane_change" if i < 10 else "mixed_test",
                        ret=float(rng.normal())))
    write_episodes(logs, path / "episodes.csv")
    (path / "run_meta.json").write_text(json.dumps({"method": method}))
    return logs


def test_report_outputs(tmp_path):
    a = fake_run(tmp_path / "a", "mp")
    fake_run(tmp_path / "b", "flat_ddpg", seed=1)
    out = tmp_path / "rep"
    report([tmp_path / "a", tmp_path / "b"], out, 0.95, 200, svg=True)
    with open(out / "mp" / "learning_curve.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["return_ema"]) for r in rows] == ema([r.ret for r in a], 0.95)
    with open(out / "success_table.csv") as fh:
        table = list(csv.reader(fh))
    assert [r[0] for r in table[1:]] == ["lane_change", "left_turn_oncoming", "turn_around", "goal"]
    root = ET.fromstring((out / "curves.svg").read_text())
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2


def test_success_table_recomputable_and_stable(tmp_path):
    logs = fake_run(tmp_path / "a", "mp")
    report([tmp_path / "a"], tmp_path / "r1", window=15)
    report([tmp_path / "a"], tmp_path / "r2", window=15)
    first = (tmp_path / "r1" / "success_table.csv").read_bytes()
    assert first == (tmp_path / "r2" / "success_table.csv").read_bytes()
    table = success_rates([r for r in logs if r.phase == "mixed_test"], 15)
    rows = {r[0]: r[1] for r in csv.reader(first.decode().splitlines())}
    for name, v in table.rates.items():
        assert rows[name] == ("NA" if v is None else f"{v:.6f}")


def test_report_missing_log_names_file(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "a" / "run_meta.json").write_text(json.dumps({"method": "mp"}))
    with pytest.raises(CorruptionError, match="episodes.csv"):
        report([tmp_path / "a"], tmp_path / "rep")


# ---------------------------------------------------------------- cli


def test_cli_report(tmp_path, capsys):
    fake_run(tmp_path / "a", "mp")
    assert main(["report", "--runs", str(tmp_path / "a"), "--out", str(tmp_path / "rep"), "--svg"]) == 0
    assert (tmp_path / "rep" / "curves.svg").exists()


def test_cli_baseline(tmp_path):
    cfg = tiny_config()
    save_config(cfg, tmp_path / "c.json")
    assert main(["baseline", "--algo", "tabular_q", "--config", str(tmp_path / "c.json"), "--out",
                 str(tmp_path / "run")]) == 0
    assert len(read_episodes(tmp_path / "run" / "episodes.csv")) == 7


def test_cli_reports_bad_library(tmp_path, capsys):
    assert main(["test", "--library", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    assert "manifest" in capsys.readouterr().err


# ---------------------------------------------------------------- mp method end to end (tiny)


def tiny_mp_config(**kw):
    from mphrl.rl_decision import DecisionConfig
    from mphrl.rl_execution import DdpgConfig
    from mphrl.skill_chain import ChainParams

    # goal disk a few metres ahead of the host start, so chains are short
    scenario = ScenarioConfig(max_steps=80, goal_center=(1.75, -35.0), goal_radius=2.0)
    base = dict(
        scenario=scenario,
        ddpg=DdpgConfig(actor_hidden=(16,), critic_hidden=(16,), warmup=32, batch_size=16, capacity=2000,
                        actor_lr=1e-3),
        decision=DecisionConfig(hidden=(8,), warmup=4, batch_size=4, capacity=200),
        chain=ChainParams(K=60, N=20, nu=0.1, feature_indices=(0, 1, 2, 4, 5, 6, 7), max_length=3,
                          option_horizon=60),
        consolidation_updates=5,
        link_budget_factor=15.0,
    )
    return tiny_config(**{**base, **kw})


@pytest.fixture(scope="module")
def tiny_mp_run(tmp_path_factory):
    from mphrl.harness.experiment import run_mp

    out = tmp_path_factory.mktemp("mp")
    cfg = tiny_mp_config()
    return cfg, out, run_mp(cfg, 0, out)


def test_mp_run_follows_schedule(tiny_mp_run):
    cfg, out, recs = tiny_mp_run
    assert [r.phase for r in recs] == ["constant_speed"] * 2 + ["lane_change"] * 2 + ["mixed_test"] * 3
    assert [r.epoch for r in recs] == list(range(7))
    assert [r.row() for r in read_episodes(out / "episodes.csv")] == [r.row() for r in recs]


def test_mp_run_grows_decision_once_per_primitive(tiny_mp_run):
    from mphrl.mp_library import load

    cfg, out, _ = tiny_mp_run
    meta = json.loads((out / "run_meta.json").read_text())
    lib = load(out / "library")
    assert meta["grow_events"] == meta["library_size"] == len(lib) >= 1
    assert lib.decision_state["spec"].output_size == len(lib)
    # the lane-change vehicle makes the canonical start novel
    assert meta["created"]["lane_change"]["created"]
    assert set(lib.subtasks) == {"constant_speed", "lane_change"}


def test_mp_run_is_deterministic(tiny_mp_run, tmp_path):
    from mphrl.harness.experiment import run_mp

    cfg, out, recs = tiny_mp_run
    again = run_mp(cfg, 0, tmp_path)
    assert [r.row() for r in again] == [r.row() for r in recs]
    assert (tmp_path / "library" / "manifest.json").read_bytes() == (out / "library" / "manifest.json").read_bytes()


def test_saved_library_replays_test_phase(tiny_mp_run, tmp_path):
    from mphrl.harness.experiment import run_test

    cfg, out, _ = tiny_mp_run
    a = run_test(cfg, out / "library", 0, tmp_path / "t1")
    b = run_test(cfg, out / "library", 0)
    assert [r.row() for r in a] == [r.row() for r in b]
    assert [r.epoch for r in a] == [4, 5, 6]


def test_chain_failure_leaves_partial_artifacts(tmp_path):
    from dataclasses import replace

    from mphrl.errors import ChainIncompleteError
    from mphrl.harness.experiment import run_offline

    cfg = tiny_mp_config()
    # a goal far from the start and a single link cannot cover the start
    cfg = replace(cfg, scenario=replace(cfg.scenario, goal_center=(-45.0, 1.75), goal_radius=3.0),
                  chain=replace(cfg.chain, max_length=1))
    with pytest.raises(ChainIncompleteError):
        run_offline(cfg, 0, tmp_path)
    meta = json.loads((tmp_path / "run_meta.json").read_text())
    assert meta["failure"] and meta["library_size"] == 0
    assert (tmp_path / "library" / "manifest.json").exists()
    assert (tmp_path / "chain_episodes.csv").read_text().startswith("phase,link")


def test_cli_train_then_test(tmp_path):
    cfg = tiny_mp_config()
    save_config(cfg, tmp_path / "c.json")
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "run")]) == 0
    assert main(["test", "--library", str(tmp_path / "run" / "library"), "--config", str(tmp_path / "c.json"),
                 "--episodes", "2", "--out", str(tmp_path / "test")]) == 0
    assert len(read_episodes(tmp_path / "test" / "episodes.csv")) == 2


def test_verify_cheap_checks_pass():
    from mphrl.harness import verify

    lines = []
    cheap = (verify.check_rewards, verify.check_gradients, verify.check_soft_update,
             verify.check_collision_sampling, verify.check_ema)
    assert verify.run_verify(cheap, echo=lines.append)
    assert len(lines) == 5 and all(line.startswith("PASS") for line in lines)
