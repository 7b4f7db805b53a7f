import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mphrl.errors import ChainIncompleteError, ContractError, CorruptionError, FormatVersionError, \
    NoAvailableOptionError
from mphrl.mp_library import (
    Library,
    available_options,
    fallback_option,
    load,
    match_or_create,
    save,
)
from mphrl.rl_decision import DecisionAgent, DecisionConfig, decision_update, grow_output, SmdpTransition
from mphrl.rl_execution import DdpgAgent, DdpgConfig, train_step
from mphrl.skill_chain import ChainParams, GoalDisk, MotionPrimitive, fit_initiation

TINY = DdpgConfig(actor_hidden=(5, 4), critic_hidden=(6,), warmup=4, batch_size=4, capacity=40)
PARAMS = ChainParams(feature_indices=(0, 1))


def make_mp(center, seed=0, tag="t", termination=None, spread=0.3):
    rng = np.random.default_rng(seed)
    pts = np.asarray(center) + spread * rng.normal(size=(40, 2))
    clf = fit_initiation(pts, PARAMS)
    agent = DdpgAgent(2, TINY, rng)
    # some training so BN running stats and targets differ from init
    for _ in range(6):
        agent.buffer.push(s=rng.normal(size=2), a=rng.uniform(-1, 1, 1), r=rng.normal(), s2=rng.normal(size=2),
                          done=0.0)
    train_step(agent, rng)
    term = termination if termination is not None else GoalDisk(tuple(center), 0.5)
    return MotionPrimitive(clf, agent, term, {"subtask": tag, "link": 0})


def chain(tag, centers, seed=0):
    links = [make_mp(centers[0], seed, tag)]
    for k, c in enumerate(centers[1:], 1):
        mp = make_mp(c, seed + k, tag, termination=links[-1].initiation)
        mp.metadata["link"] = k
        links.append(mp)
    return links


def snapshot(lib):
    out = []
    for mp in lib:
        for name in ("actor", "actor_target", "critic", "critic_target"):
            out += [t.tobytes() for t in getattr(mp.policy, name).tensors()]
        clf = mp.initiation
        out += [clf.support.tobytes(), clf.alpha.tobytes(), repr((clf.rho, clf.sigma, clf.nu)),
                clf.train_states.tobytes(), json.dumps(mp.metadata, sort_keys=True), mp.id]
    return out


@pytest.fixture
def lib3():
    lib = Library()
    lib.append([make_mp((0, 0), 0, "a"), make_mp((5, 0), 1, "b"), make_mp((0, 5), 2, "c")])
    return lib


# ---------------------------------------------------------------- queries


def test_available_options_single_match(lib3):
    assert available_options(lib3, np.array([0.0, 5.0])) == {2}


def test_available_options_empty_when_all_reject(lib3):
    assert available_options(lib3, np.array([40.0, -40.0])) == set()


LIB3 = Library()
LIB3.append([make_mp((0, 0), 0, "a"), make_mp((5, 0), 1, "b"), make_mp((0, 5), 2, "c")])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 8), st.floats(-3, 8)), min_size=1, max_size=10))
def test_available_options_is_brute_force_scan(queries):
    lib = LIB3
    answers = []
    for q in queries:
        s = np.array(q)
        got = available_options(lib, s)
        assert got <= set(range(len(lib)))
        assert got == {i for i in range(len(lib)) if lib[i].initiation.decision_function(s)[0] >= 0}
        answers.append(got)
    assert [available_options(lib, np.array(q)) for q in reversed(queries)] == answers[::-1]


def test_fallback_picks_largest_decision_value(lib3):
    assert fallback_option(lib3, np.array([7.0, 0.0])) == 1
    with pytest.raises(NoAvailableOptionError):
        fallback_option(Library(), np.zeros(2))


# ---------------------------------------------------------------- growth


def test_match_returns_existing_without_growth(lib3):
    n = len(lib3)
    mp_id, created = match_or_create(lib3, np.array([5.0, 0.0]), lambda: pytest.fail("factory called"))
    assert (mp_id, created) == (1, False) and len(lib3) == n


def test_empty_library_creates_and_grows_decision_net():
    lib = Library()
    dec = DecisionAgent(2, 0, DecisionConfig(hidden=(8,)), 0)
    lib.subscribe(lambda mp: grow_output(dec))
    mp_id, created = match_or_create(lib, np.zeros(2), lambda: [make_mp((0, 0))])
    assert created and mp_id == 0 and len(lib) == 1
    assert dec.n_options == 1


def test_chain_append_grows_once_per_link():
    lib = Library()
    dec = DecisionAgent(2, 0, DecisionConfig(hidden=(8,)), 0)
    lib.subscribe(lambda mp: grow_output(dec))
    mp_id, created = match_or_create(lib, np.array([6.0, 0.0]), lambda: chain("x", [(0, 0), (3, 0), (6, 0)]))
    assert created and mp_id == 2
    assert [mp.id for mp in lib] == [0, 1, 2] and dec.n_options == 3
    assert lib.ids_for("x") == [0, 1, 2]


def test_factory_failure_leaves_library_untouched(lib3):
    dec = DecisionAgent(2, 3, DecisionConfig(hidden=(8,)), 0)
    lib3.subscribe(lambda mp: grow_output(dec))
    before, rev = snapshot(lib3), lib3.revision

    def failing():
        raise ChainIncompleteError("start not covered", [make_mp((9, 9))])

    with pytest.raises(ChainIncompleteError):
        match_or_create(lib3, np.array([40.0, 40.0]), failing)
    assert snapshot(lib3) == before and lib3.revision == rev and dec.n_options == 3


def test_incomplete_primitive_rejected_atomically(lib3):
    before = snapshot(lib3)
    bad = make_mp((9, 9))
    bad.termination = None
    with pytest.raises(ContractError):
        lib3.append([make_mp((8, 8)), bad])
    assert snapshot(lib3) == before


def test_append_never_alters_existing_primitives(lib3):
    before = snapshot(lib3)
    lib3.append(make_mp((9, 9), 7))
    assert snapshot(lib3)[:len(before)] == before
    assert [mp.id for mp in lib3] == [0, 1, 2, 3]
    assert lib3.revision == 2


# ---------------------------------------------------------------- persistence


def test_round_trip_is_bit_exact(tmp_path):
    lib = Library()
    lib.append(chain("lane_change", [(0, 0), (3, 0)]), phase=0)
    lib.append(make_mp((0, 6), 5, "turn"), phase=1)
    dec = DecisionAgent(2, 3, DecisionConfig(hidden=(8,)), 0)
    decision_update(dec, [SmdpTransition(np.ones(2), 1, 1.0, 2, np.zeros(2), False)])
    save(lib, tmp_path / "lib", decision=dec)
    back = load(tmp_path / "lib")
    assert snapshot(back) == snapshot(lib)
    assert back.revision == lib.revision and back.creation_log == lib.creation_log
    assert back[1].termination is back[0].initiation
    assert isinstance(back[0].termination, GoalDisk) and back[0].termination == lib[0].termination
    assert back[0].policy.config == lib[0].policy.config
    st_ = back.decision_state
    assert st_["spec"] == dec.spec
    assert all(np.array_equal(x, y) for x, y in zip(st_["online"].tensors(), dec.online.tensors()))
    assert all(np.array_equal(x, y) for x, y in zip(st_["target"].tensors(), dec.target.tensors()))
    restored = DecisionAgent(2, 0, DecisionConfig(hidden=(8,)), 1)
    restored.restore(st_)
    s = np.random.default_rng(0).normal(size=(10, 2))
    assert np.array_equal(restored.q_values(s), dec.q_values(s))
    q = np.random.default_rng(1).normal(size=(50, 2)) * 3
    for a, b in zip(lib, back):
        assert np.array_equal(a.initiation.decision_function(q), b.initiation.decision_function(q))
        assert np.array_equal(a.policy.policy(q), b.policy.policy(q))


def test_wrong_manifest_version(tmp_path, lib3):
    save(lib3, tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["format_version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(FormatVersionError):
        load(tmp_path)


def test_truncated_weight_file_names_the_file(tmp_path, lib3):
    save(lib3, tmp_path)
    f = tmp_path / "mp_001" / "actor.bin"
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(CorruptionError) as info:
        load(tmp_path)
    assert str(info.value.path).endswith("mp_001/actor.bin")


def test_flipped_byte_detected(tmp_path, lib3):
    save(lib3, tmp_path)
    f = tmp_path / "mp_002" / "classifier.bin"
    data = bytearray(f.read_bytes())
    data[-3] ^= 0x40
    f.write_bytes(bytes(data))
    with pytest.raises(CorruptionError, match="classifier.bin"):
        load(tmp_path)


def test_decision_width_must_match(tmp_path, lib3):
    with pytest.raises(ContractError):
        save(lib3, tmp_path, decision=DecisionAgent(2, 2, DecisionConfig(hidden=(8,)), 0))
    save(lib3, tmp_path, decision=DecisionAgent(2, 3, DecisionConfig(hidden=(8,)), 0))
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["decision"]["spec"]["layer_sizes"][-1] = 2
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(CorruptionError):
        load(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(CorruptionError):
        load(tmp_path)
