"""Motion-primitive library: storage, applicability queries, novelty-driven
growth and on-disk persistence.

A subtask is stored as its whole chain, one primitive per link, with ids
assigned densely in append order. Listeners registered with ``subscribe``
hear about every appended primitive exactly once; the decision layer uses
this to grow its output layer.

Disk layout::

    manifest.json
    decision.bin            (optional)
    mp_000/actor.bin  actor_target.bin  critic.bin  critic_target.bin  classifier.bin
    mp_001/...
"""

from __future__ import annotations

import json
import os
import zlib
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .approximator import MlpSpec, f64_blob, params_from_bytes, params_to_bytes, read_f64_blob
from .errors import ContractError, CorruptionError, FormatVersionError, NoAvailableOptionError
from .rl_execution import DdpgAgent, DdpgConfig
from .skill_chain import GoalDisk, InitiationClassifier, MotionPrimitive

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
CLASSIFIER_MAGIC = b"OCSV"
_AGENT_FILES = ("actor", "actor_target", "critic", "critic_target")


class Library:
    def __init__(self):
        self.mps: list[MotionPrimitive] = []
        self.format_version = FORMAT_VERSION
        # bumped on every mutation
        self.revision = 0
        self.creation_log: list[dict] = []
        self._listeners: list[Callable[[MotionPrimitive], None]] = []
        # decision-network weights restored by ``load`` (spec, online, target)
        self.decision_state: dict | None = None

    def __len__(self) -> int:
        return len(self.mps)

    def __getitem__(self, i: int) -> MotionPrimitive:
        return self.mps[i]

    def __iter__(self):
        return iter(self.mps)

    @property
    def subtasks(self) -> list[str]:
        seen = []
        for mp in self.mps:
            tag = mp.metadata.get("subtask", "")
            if tag not in seen:
                seen.append(tag)
        return seen

    def ids_for(self, subtask: str) -> list[int]:
        return [mp.id for mp in self.mps if mp.metadata.get("subtask", "") == subtask]

    def subscribe(self, listener: Callable[[MotionPrimitive], None]) -> None:
        self._listeners.append(listener)

    def append(self, mps: Iterable[MotionPrimitive] | MotionPrimitive, phase=None) -> list[int]:
        """Append primitives in order and return their new ids.

        Every primitive is checked before any is added, so a bad batch
        leaves the library untouched.
        """
        batch = [mps] if isinstance(mps, MotionPrimitive) else list(mps)
        for mp in batch:
            if mp.initiation is None or mp.policy is None or mp.termination is None:
                raise ContractError("a primitive needs initiation, policy and termination")
            if any(mp is other for other in self.mps):
                raise ContractError("primitive is already in the library")
        ids = []
        for mp in batch:
            mp.id = len(self.mps)
            if phase is not None:
                mp.metadata.setdefault("phase", phase)
            self.mps.append(mp)
            self.creation_log.append({"id": mp.id, "subtask": mp.metadata.get("subtask", ""), "phase": phase})
            ids.append(mp.id)
        self.revision += 1
        for mp in batch:
            for fn in self._listeners:
                fn(mp)
        return ids


def available_options(lib: Library, s) -> set[int]:
    return {mp.id for mp in lib.mps if mp.initiation.contains(s)}


def decision_values(lib: Library, s) -> np.ndarray:
    return np.array([mp.initiation.decision_function(s)[0] for mp in lib.mps])


def fallback_option(lib: Library, s) -> int:
    """Primitive whose classifier comes closest to accepting ``s``."""
    if not lib.mps:
        raise NoAvailableOptionError("library is empty")
    return int(np.argmax(decision_values(lib, s)))


def match_or_create(lib: Library, s, factory: Callable[[], list[MotionPrimitive] | MotionPrimitive],
                    phase=None) -> tuple[int, bool]:
    """Return an applicable primitive id, or build a new chain when none applies.

    With matches the lowest id is returned; the decision layer makes the real
    choice. Otherwise ``factory()`` builds the chain for the current subtask
    and the id of the link covering the start (the last one) is returned.
    Factory errors propagate before anything is appended.
    """
    opts = available_options(lib, s)
    if opts:
        return min(opts), False
    made = factory()
    ids = lib.append(made, phase=phase)
    return ids[-1], True


# ---------------------------------------------------------------- persistence


def _crc(data: bytes) -> str:
    return f"{zlib.crc32(data) & 0xFFFFFFFF:08x}"


def classifier_to_bytes(clf: InitiationClassifier) -> bytes:
    sup = np.atleast_2d(clf.support)
    train = np.zeros((0, 0)) if clf.train_states is None else np.atleast_2d(clf.train_states)
    head = np.array([sup.shape[0], sup.shape[1], train.shape[0], train.shape[1], clf.rho, clf.sigma, clf.nu,
                     1.0 if clf.train_states is not None else 0.0])
    return f64_blob(CLASSIFIER_MAGIC, np.concatenate([head, sup.ravel(), np.ravel(clf.alpha), train.ravel()]))


def classifier_from_bytes(data: bytes, feature_indices, source: str = "<bytes>") -> InitiationClassifier:
    flat = read_f64_blob(data, CLASSIFIER_MAGIC, source)
    if flat.size < 8:
        raise CorruptionError(source, "classifier header is incomplete")
    n, d, m, e = (int(x) for x in flat[:4])
    rho, sigma, nu, has_train = flat[4:8]
    if flat.size != 8 + n * d + n + m * e:
        raise CorruptionError(source, "classifier payload size does not match its header")
    pos = 8
    support = flat[pos:pos + n * d].reshape(n, d).copy()
    pos += n * d
    alpha = flat[pos:pos + n].copy()
    pos += n
    train = flat[pos:].reshape(m, e).copy() if has_train else None
    return InitiationClassifier(support, alpha, float(rho), float(sigma), float(nu), tuple(feature_indices), train)


def _termination_entry(lib: Library, mp: MotionPrimitive) -> dict:
    for other in lib.mps:
        if mp.termination is other.initiation:
            return {"kind": "initiation_of", "id": other.id}
    if isinstance(mp.termination, GoalDisk):
        return mp.termination.describe()
    raise ContractError(f"cannot persist termination set of primitive {mp.id}")


def _write(path: Path, data: bytes, files: dict, key: str) -> None:
    path.write_bytes(data)
    files[key] = {"bytes": len(data), "crc32": _crc(data)}


def save(lib: Library, path, decision=None) -> None:
    """Write the library (and optionally a decision agent's networks) to ``path``.

    ``decision`` needs ``spec``, ``online`` and ``target`` attributes; its
    output width must equal the library size.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    files: dict = {}
    entries = []
    for mp in lib.mps:
        sub = f"mp_{mp.id:03d}"
        (root / sub).mkdir(exist_ok=True)
        agent = mp.policy
        for name in _AGENT_FILES:
            _write(root / sub / f"{name}.bin", params_to_bytes(getattr(agent, name)), files, f"{sub}/{name}.bin")
        clf = mp.initiation
        _write(root / sub / "classifier.bin", classifier_to_bytes(clf), files, f"{sub}/classifier.bin")
        entries.append({
            "id": mp.id,
            "subtask": mp.metadata.get("subtask", ""),
            "metadata": mp.metadata,
            "obs_size": agent.obs_size,
            "ddpg_config": agent.config.to_dict(),
            "actor_spec": agent.actor_spec.to_dict(),
            "critic_spec": agent.critic_spec.to_dict(),
            "classifier": {"nu": clf.nu, "sigma": clf.sigma, "rho": clf.rho,
                           "feature_indices": list(clf.feature_indices), "support_count": int(len(clf.alpha))},
            "termination": _termination_entry(lib, mp),
        })
    manifest = {"format_version": lib.format_version, "revision": lib.revision, "mp_count": len(lib.mps),
                "mps": entries, "creation_log": lib.creation_log, "decision": None}
    if decision is not None:
        if decision.spec.output_size != len(lib.mps):
            raise ContractError("decision network width must equal the library size")
        blob = params_to_bytes(decision.online) + params_to_bytes(decision.target)
        _write(root / "decision.bin", blob, files, "decision.bin")
        manifest["decision"] = {"spec": decision.spec.to_dict(), "online_bytes": len(params_to_bytes(decision.online))}
    manifest["files"] = files
    tmp = root / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    os.replace(tmp, root / MANIFEST)


def _read_checked(root: Path, rel: str, files: dict) -> bytes:
    p = root / rel
    if rel not in files:
        raise CorruptionError(p, "not listed in the manifest")
    try:
        data = p.read_bytes()
    except OSError as e:
        raise CorruptionError(p, f"unreadable ({e.strerror})") from e
    want = files[rel]
    if len(data) != want["bytes"] or _crc(data) != want["crc32"]:
        raise CorruptionError(p, "checksum mismatch")
    return data


def _config_from_dict(d: dict) -> DdpgConfig:
    d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return DdpgConfig(**d)


def load(path) -> Library:
    root = Path(path)
    mpath = root / MANIFEST
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise CorruptionError(mpath, f"cannot read manifest ({e})") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"library format {version!r} is not supported (expected {FORMAT_VERSION})")
    files = manifest.get("files", {})
    lib = Library()
    pending = []
    for entry in manifest["mps"]:
        sub = f"mp_{entry['id']:03d}"
        cfg = _config_from_dict(entry["ddpg_config"])
        actor_spec = MlpSpec.from_dict(entry["actor_spec"])
        critic_spec = MlpSpec.from_dict(entry["critic_spec"])
        agent = DdpgAgent(entry["obs_size"], cfg, np.random.default_rng(0), actor_spec, critic_spec)
        for name in _AGENT_FILES:
            rel = f"{sub}/{name}.bin"
            spec = actor_spec if name.startswith("actor") else critic_spec
            setattr(agent, name, params_from_bytes(spec, _read_checked(root, rel, files), str(root / rel)))
        rel = f"{sub}/classifier.bin"
        clf = classifier_from_bytes(_read_checked(root, rel, files), entry["classifier"]["feature_indices"],
                                    str(root / rel))
        mp = MotionPrimitive(clf, agent, None, dict(entry["metadata"]), entry["id"])
        pending.append((mp, entry["termination"]))
        lib.mps.append(mp)
    for mp, term in pending:
        if term["kind"] == "initiation_of":
            mp.termination = lib.mps[term["id"]].initiation
        elif term["kind"] == "goal_disk":
            mp.termination = GoalDisk(tuple(term["center"]), term["radius"], tuple(term["dims"]), term["scale"])
        else:
            raise CorruptionError(mpath, f"unknown termination kind {term['kind']!r}")
    if [mp.id for mp in lib.mps] != list(range(len(lib.mps))) or manifest["mp_count"] != len(lib.mps):
        raise CorruptionError(mpath, "primitive ids are not dense")
    lib.revision = manifest["revision"]
    lib.creation_log = list(manifest["creation_log"])
    dec = manifest.get("decision")
    if dec is not None:
        spec = MlpSpec.from_dict(dec["spec"])
        if spec.output_size != len(lib.mps):
            raise CorruptionError(root / "decision.bin", "decision width does not match the library size")
        blob = _read_checked(root, "decision.bin", files)
        k = dec["online_bytes"]
        src = str(root / "decision.bin")
        lib.decision_state = {"spec": spec, "online": params_from_bytes(spec, blob[:k], src),
                              "target": params_from_bytes(spec, blob[k:], src)}
    return lib
