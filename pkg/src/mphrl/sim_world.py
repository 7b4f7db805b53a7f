"""Two-dimensional intersection micro-simulator.

A four-way orthogonal intersection with right-hand traffic. The host drives
north up the south arm in the inner lane, turns left, and leaves on the west
arm. Up to three scripted vehicles create the subtasks:

* ``lane_change``: a vehicle in the outer northbound lane merges in front of
  the host.
* ``left_turn_oncoming``: a southbound vehicle crosses the host's left-turn arc.
* ``turn_around``: an eastbound vehicle makes a U-turn inside the box.

Vehicles are kinematic bicycles integrated with explicit Euler. The host's
steering always comes from pure pursuit on its route; the learner only
chooses throttle and brake. Scalar math uses the ``math`` module because the
step loop is called millions of times.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractError, InvalidConfigError

SUBTASKS = ("lane_change", "left_turn_oncoming", "turn_around")

POS_SCALE = 60.0
SPEED_SCALE = 10.0
SENTINEL_DISTANCE = 60.0

R_LIVING = -0.5
R_COLLISION = -100.0
R_GOAL = 10.0


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.9
    max_steer: float = math.radians(35.0)
    a_max: float = 3.0
    b_max: float = 8.0
    drag: float = 0.05
    v_max: float = 20.0
    length: float = 4.5
    width: float = 2.0


DEFAULT_VEHICLE = VehicleParams()


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    theta: float
    v: float = 0.0

    def __post_init__(self):
        if self.v < 0.0:
            raise ContractError(f"speed must be non-negative, got {self.v}")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.theta, self.v)


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


@dataclass(frozen=True)
class Action:
    """Throttle and brake in [0, 1], steer in [-1, 1]. Out-of-range inputs are clamped."""

    throttle: float = 0.0
    brake: float = 0.0
    steer: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "throttle", _clamp(float(self.throttle), 0.0, 1.0))
        object.__setattr__(self, "brake", _clamp(float(self.brake), 0.0, 1.0))
        object.__setattr__(self, "steer", _clamp(float(self.steer), -1.0, 1.0))

    @classmethod
    def from_policy(cls, u, mode: str = "longitudinal") -> "Action":
        """Map a tanh-range policy output to an action.

        ``longitudinal``: one value, positive is throttle, negative is brake.
        ``full``: three values mapped to throttle, brake and steer.
        """
        u = np.asarray(u, dtype=np.float64).ravel()
        if mode == "longitudinal":
            if u.size != 1:
                raise ContractError(f"longitudinal mode takes one value, got {u.size}")
            c = float(u[0])
            return cls(max(c, 0.0), max(-c, 0.0), 0.0)
        if mode == "full":
            if u.size != 3:
                raise ContractError(f"full mode takes three values, got {u.size}")
            return cls((u[0] + 1.0) / 2.0, (u[1] + 1.0) / 2.0, u[2])
        raise ContractError(f"unknown action mode {mode!r}")

    @property
    def longitudinal(self) -> float:
        return self.throttle - self.brake


def integrate(state: VehicleState, action: Action, dt: float,
              params: VehicleParams = DEFAULT_VEHICLE) -> VehicleState:
    if dt <= 0:
        raise ContractError(f"dt must be positive, got {dt}")
    x, y, th, v = state.x, state.y, state.theta, state.v
    delta = action.steer * params.max_steer
    a = params.a_max * action.throttle - params.b_max * action.brake - params.drag * v
    x += v * math.cos(th) * dt
    y += v * math.sin(th) * dt
    th += v * math.tan(delta) / params.wheelbase * dt
    v = _clamp(v + a * dt, 0.0, params.v_max)
    return VehicleState(x, y, th, v)


class Path:
    """Polyline with cumulative arc length and a target speed."""

    def __init__(self, waypoints: Sequence[Sequence[float]], target_speed: float = 0.0):
        pts = np.asarray(waypoints, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ContractError("a path needs at least two (x, y) waypoints")
        seg = np.diff(pts, axis=0)
        lens = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lens == 0.0):
            raise ContractError("consecutive waypoints must be distinct")
        self.waypoints = pts
        self.target_speed = float(target_speed)
        self._xs = pts[:, 0].tolist()
        self._ys = pts[:, 1].tolist()
        self._dx = (seg[:, 0] / lens).tolist()
        self._dy = (seg[:, 1] / lens).tolist()
        self._lens = lens.tolist()
        self._s = np.concatenate([[0.0], np.cumsum(lens)]).tolist()

    @property
    def length(self) -> float:
        return self._s[-1]

    def _segment(self, s: float) -> int:
        i = bisect.bisect_right(self._s, s) - 1
        return min(max(i, 0), len(self._lens) - 1)

    def point_at(self, s: float) -> tuple[float, float]:
        """Point at arc length ``s``; extrapolated linearly beyond either end."""
        i = self._segment(s)
        ds = s - self._s[i]
        return self._xs[i] + ds * self._dx[i], self._ys[i] + ds * self._dy[i]

    def heading_at(self, s: float) -> float:
        i = self._segment(s)
        return math.atan2(self._dy[i], self._dx[i])

    def project(self, x: float, y: float, hint: float | None = None, window: float = 8.0) -> float:
        """Arc length of the closest path point.

        With ``hint`` only segments overlapping ``[hint - 1, hint + window]`` are
        searched, which keeps the projection from jumping between nearby
        branches of a curved path.
        """
        if hint is None:
            lo, hi = 0, len(self._lens) - 1
        else:
            lo = self._segment(hint - 1.0)
            hi = self._segment(hint + window)
        best_s, best_d = 0.0, math.inf
        for i in range(lo, hi + 1):
            px, py = x - self._xs[i], y - self._ys[i]
            t = px * self._dx[i] + py * self._dy[i]
            t = _clamp(t, 0.0, self._lens[i])
            ex, ey = px - t * self._dx[i], py - t * self._dy[i]
            d = ex * ex + ey * ey
            if d < best_d:
                best_d, best_s = d, self._s[i] + t
        # past the final waypoint the projection continues along the last segment
        if best_s >= self.length - 1e-12:
            i = len(self._lens) - 1
            best_s = self._s[i] + (x - self._xs[i]) * self._dx[i] + (y - self._ys[i]) * self._dy[i]
        return best_s


def arc_points(cx: float, cy: float, r: float, a0: float, a1: float, step: float = 0.5) -> list:
    n = max(2, int(math.ceil(abs(a1 - a0) * r / step)) + 1)
    return [(cx + r * math.cos(a), cy + r * math.sin(a)) for a in np.linspace(a0, a1, n)]


class PursuitCommand(NamedTuple):
    steer: float
    path_complete: bool
    progress: float


def pursuit_angle(alpha: float, distance: float, wheelbase: float) -> float:
    """Front-wheel angle that puts the rear axle on an arc through the target point."""
    return math.atan2(2.0 * wheelbase * math.sin(alpha), distance)


def pursuit_steer(alpha: float, distance: float, params: VehicleParams = DEFAULT_VEHICLE) -> float:
    """Normalized steer for a lookahead point at bearing ``alpha`` and ``distance``."""
    if abs(alpha) > math.pi / 2:
        return math.copysign(1.0, alpha)
    return _clamp(pursuit_angle(alpha, distance, params.wheelbase) / params.max_steer, -1.0, 1.0)


def pure_pursuit(state: VehicleState, path: Path, lookahead: float,
                 params: VehicleParams = DEFAULT_VEHICLE, progress: float | None = None) -> PursuitCommand:
    if lookahead <= 0:
        raise ContractError("lookahead must be positive")
    s = path.project(state.x, state.y, progress)
    if s >= path.length:
        return PursuitCommand(0.0, True, s)
    tx, ty = path.point_at(s + lookahead)
    dx, dy = tx - state.x, ty - state.y
    alpha = wrap_angle(math.atan2(dy, dx) - state.theta)
    return PursuitCommand(pursuit_steer(alpha, math.hypot(dx, dy), params), False, s)


@dataclass(frozen=True)
class PidGains:
    kp: float = 0.5
    ki: float = 0.1
    kd: float = 0.0
    integral_limit: float = 5.0

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd, self.integral_limit) < 0:
            raise ContractError("PID gains must be non-negative")


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float | None = None


def pid_speed(v: float, v_ref: float, state: PidState, dt: float = 0.05,
              gains: PidGains = PidGains()) -> tuple[float, float, PidState]:
    """Returns ``(throttle, brake, new_state)``."""
    e = v_ref - v
    integral = _clamp(state.integral + e * dt, -gains.integral_limit, gains.integral_limit)
    deriv = 0.0 if state.prev_error is None else (e - state.prev_error) / dt
    u = gains.kp * e + gains.ki * integral + gains.kd * deriv
    return _clamp(u, 0.0, 1.0), _clamp(-u, 0.0, 1.0), PidState(integral, e)


# ---------------------------------------------------------------- geometry


def _corners(x, y, th, length, width):
    c, s = math.cos(th), math.sin(th)
    hl, hw = length / 2.0, width / 2.0
    return [(x + c * dx - s * dy, y + s * dx + c * dy)
            for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))]


def check_collision(pose_a, dims_a, pose_b, dims_b) -> bool:
    """Separating-axis overlap test for two oriented rectangles.

    Poses are ``(x, y, theta)``; dims are ``(length, width)``. Touching edges
    count as overlap.
    """
    if min(dims_a) <= 0 or min(dims_b) <= 0:
        raise ContractError("rectangle dimensions must be positive")
    ca = _corners(pose_a[0], pose_a[1], pose_a[2], dims_a[0], dims_a[1])
    cb = _corners(pose_b[0], pose_b[1], pose_b[2], dims_b[0], dims_b[1])
    for th in (pose_a[2], pose_b[2]):
        for ax, ay in ((math.cos(th), math.sin(th)), (-math.sin(th), math.cos(th))):
            pa = [px * ax + py * ay for px, py in ca]
            pb = [px * ax + py * ay for px, py in cb]
            if max(pa) < min(pb) or max(pb) < min(pa):
                return False
    return True


# ---------------------------------------------------------------- reward


class RewardBreakdown(NamedTuple):
    r_vel: float
    r_living: float
    r_col: float
    r_goal: float

    @property
    def total(self) -> float:
        return self.r_vel + self.r_living + self.r_col + self.r_goal


def velocity_reward(v: float, v_goal: float = 5.0) -> float:
    return 0.25 * v if v <= v_goal else 0.25 * (2.0 * v_goal - v)


def reward_components(prev: VehicleState, nxt: VehicleState, collision: bool = False,
                      goal: bool = False, v_goal: float = 5.0) -> RewardBreakdown:
    return RewardBreakdown(velocity_reward(nxt.v, v_goal), R_LIVING,
                           R_COLLISION if collision else 0.0, R_GOAL if goal else 0.0)


def reward(prev: VehicleState, nxt: VehicleState, collision: bool = False, goal: bool = False,
           v_goal: float = 5.0) -> float:
    return reward_components(prev, nxt, collision, goal, v_goal).total


# ---------------------------------------------------------------- scenario


@dataclass(frozen=True)
class ScenarioConfig:
    lane_width: float = 3.5
    arm_length: float = 50.0
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0
    subtasks: tuple[str, ...] = SUBTASKS
    move_probability: float = 0.5
    # chance that an enabled subtask's vehicle is spawned at all (mixed test uses 0.5)
    presence_probability: float = 1.0
    speed_range: tuple[float, float] = (2.0, 6.0)
    offset_range: tuple[float, float] = (0.0, 15.0)
    dt: float = 0.05
    max_steps: int = 1000
    goal_center: tuple[float, float] | None = (-45.0, 1.75)
    goal_radius: float = 3.0
    v_goal: float = 5.0
    host_lookahead: float = 5.0
    other_lookahead: float = 5.0

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidConfigError("dt must be positive")
        if self.max_steps < 1:
            raise InvalidConfigError("max_steps must be at least 1")
        for name in ("move_probability", "presence_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise InvalidConfigError(f"{name} must lie in [0, 1], got {p}")
        bad = set(self.subtasks) - set(SUBTASKS)
        if bad:
            raise InvalidConfigError(f"unknown subtasks {sorted(bad)}")
        object.__setattr__(self, "subtasks", tuple(t for t in SUBTASKS if t in self.subtasks))
        if self.speed_range[0] > self.speed_range[1] or self.offset_range[0] > self.offset_range[1]:
            raise InvalidConfigError("ranges must be ordered (low, high)")

    @property
    def vehicle(self) -> VehicleParams:
        return replace(DEFAULT_VEHICLE, length=self.vehicle_length, width=self.vehicle_width)

    @property
    def dims(self) -> tuple[float, float]:
        return (self.vehicle_length, self.vehicle_width)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


class Routes(NamedTuple):
    host: Path
    others: dict
    zones: dict


def build_routes(cfg: ScenarioConfig) -> Routes:
    """Host route, scripted paths and zone arc lengths for a configuration."""
    w, arm = cfg.lane_width, cfg.arm_length
    box = 2.0 * w
    inner, outer = w / 2.0, 1.5 * w
    start_y = -(arm - 10.0)
    r = box + inner
    host_pts = [(inner, start_y)] + arc_points(-box, -box, r, 0.0, math.pi / 2) + [(-arm, inner)]
    host = Path(host_pts)
    stop_line = -box - start_y
    arc_end = stop_line + r * math.pi / 2

    merge_y = start_y + 12.0
    others = {
        "lane_change": Path([(outer, merge_y), (outer, merge_y + 4.0), (inner, merge_y + 16.0),
                             (inner, arm)]),
        "left_turn_oncoming": Path([(-inner, arm - 10.0), (-inner, -arm)]),
        "turn_around": Path([(-(arm - 10.0), -outer)]
                            + arc_points(-box, 0.0, outer, -math.pi / 2, math.pi / 2)
                            + [(-arm, outer)]),
    }
    zones = {"lane_change": stop_line, "left_turn_oncoming": arc_end, "turn_around": arc_end + 5.0}
    return Routes(host, others, zones)


@dataclass
class OtherVehicle:
    subtask: str
    state: VehicleState
    path: Path
    moving: bool
    target_speed: float
    pid: PidState = field(default_factory=PidState)
    progress: float = 0.0
    active: bool = True


@dataclass
class WorldState:
    config: ScenarioConfig
    routes: Routes
    host: VehicleState
    others: list[OtherVehicle]
    rng: np.random.Generator
    host_progress: float = 0.0
    step: int = 0
    collision: bool = False
    goal: bool = False
    done: bool = False
    zones_passed: dict = field(default_factory=dict)

    @property
    def present(self) -> dict:
        return {t: any(o.subtask == t for o in self.others) for t in SUBTASKS}

    def copy(self) -> "WorldState":
        others = [replace(o) for o in self.others]
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return replace(self, others=others, rng=rng, zones_passed=dict(self.zones_passed))


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def spawn_scenario(config: ScenarioConfig, seed) -> WorldState:
    """Fresh episode. The host waits at the south-arm start with v = 0.

    Each enabled subtask consumes exactly four draws (presence, moving, offset,
    speed) so the random stream lines up across configurations.
    """
    if not config.subtasks and config.goal_center is None:
        raise InvalidConfigError("scenario has no subtasks and no goal region")
    rng = _as_rng(seed)
    routes = build_routes(config)
    hx, hy = routes.host.point_at(0.0)
    host = VehicleState(hx, hy, routes.host.heading_at(0.0), 0.0)
    others = []
    for task in config.subtasks:
        present = rng.random() < config.presence_probability
        moving = rng.random() < config.move_probability
        offset = rng.uniform(*config.offset_range)
        speed = rng.uniform(*config.speed_range)
        if not present:
            continue
        path = routes.others[task]
        s0 = offset if moving else 0.0
        x, y = path.point_at(s0)
        others.append(OtherVehicle(task, VehicleState(x, y, path.heading_at(s0), speed if moving else 0.0),
                                   path, moving, speed if moving else 0.0, progress=s0))
    zones = {t: False for t in SUBTASKS}
    return WorldState(config, routes, host, others, rng, zones_passed=zones)


def nearest_other(world: WorldState) -> OtherVehicle | None:
    best, best_d = None, math.inf
    hx, hy = world.host.x, world.host.y
    for o in world.others:
        if not o.active:
            continue
        d = math.hypot(o.state.x - hx, o.state.y - hy)
        if d < best_d:
            best, best_d = o, d
    return best


def encode(host: VehicleState, other: VehicleState | None) -> np.ndarray:
    if other is None:
        other = VehicleState(host.x + SENTINEL_DISTANCE * math.cos(host.theta),
                             host.y + SENTINEL_DISTANCE * math.sin(host.theta), host.theta, 0.0)
    return np.array([host.x / POS_SCALE, host.y / POS_SCALE, host.theta / math.pi, host.v / SPEED_SCALE,
                     other.x / POS_SCALE, other.y / POS_SCALE, other.theta / math.pi, other.v / SPEED_SCALE])


def observe(world: WorldState) -> np.ndarray:
    o = nearest_other(world)
    return encode(world.host, o.state if o is not None else None)


def decode_host(obs) -> tuple[float, float, float, float]:
    """Host (x, y, theta, v) in world units from an observation vector."""
    return (obs[0] * POS_SCALE, obs[1] * POS_SCALE, obs[2] * math.pi, obs[3] * SPEED_SCALE)


def _advance_other(o: OtherVehicle, cfg: ScenarioConfig, params: VehicleParams) -> None:
    if not o.active or not o.moving:
        return
    cmd = pure_pursuit(o.state, o.path, cfg.other_lookahead, params, o.progress)
    o.progress = cmd.progress
    if cmd.path_complete:
        o.active = False
        return
    throttle, brake, o.pid = pid_speed(o.state.v, o.target_speed, o.pid, cfg.dt)
    o.state = integrate(o.state, Action(throttle, brake, cmd.steer), cfg.dt, params)


def step_env(world: WorldState, host_action: Action) -> tuple[np.ndarray, float, bool, dict]:
    """Advance one tick. Mutates ``world``.

    The host's steer channel is replaced by pure pursuit on its route.
    """
    if world.done:
        raise ContractError("episode already finished; spawn a new world")
    cfg = world.config
    params = cfg.vehicle
    cmd = pure_pursuit(world.host, world.routes.host, cfg.host_lookahead, params, world.host_progress)
    act = Action(host_action.throttle, host_action.brake, cmd.steer)
    prev = world.host
    world.host = integrate(prev, act, cfg.dt, params)
    world.host_progress = world.routes.host.project(world.host.x, world.host.y, cmd.progress)
    for o in world.others:
        _advance_other(o, cfg, params)
    world.step += 1

    for task, s in world.routes.zones.items():
        if world.host_progress >= s:
            world.zones_passed[task] = True

    hp = (world.host.x, world.host.y, world.host.theta)
    collision = any(o.active and check_collision(hp, cfg.dims, (o.state.x, o.state.y, o.state.theta), cfg.dims)
                    for o in world.others)
    goal = False
    if not collision and cfg.goal_center is not None:
        gx, gy = cfg.goal_center
        goal = math.hypot(world.host.x - gx, world.host.y - gy) <= cfg.goal_radius
    world.collision |= collision
    world.goal |= goal
    parts = reward_components(prev, world.host, collision, goal, cfg.v_goal)
    timeout = world.step >= cfg.max_steps and not (collision or goal)
    world.done = collision or goal or world.step >= cfg.max_steps
    info = {
        "collision": collision,
        "goal": goal,
        "timeout": timeout,
        "terminal": collision or goal,
        "components": parts,
        "zones_passed": dict(world.zones_passed),
        "present": world.present,
        "action": act,
        "step": world.step,
    }
    return observe(world), parts.total, world.done, info


class TrajectoryLogger:
    """Per-episode CSV of host and nearest-other states."""

    HEADER = ["step", "t", "host_x", "host_y", "host_theta", "host_v", "other_x", "other_y",
              "other_theta", "other_v", "throttle", "brake", "steer", "reward", "done"]

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.HEADER)

    def log(self, world: WorldState, action: Action, r: float, done: bool) -> None:
        o = nearest_other(world)
        os_ = o.state if o is not None else None
        vals = [world.step * world.config.dt, *world.host.as_tuple()]
        vals += list(os_.as_tuple()) if os_ is not None else [math.nan] * 4
        vals += [action.throttle, action.brake, action.steer, r]
        self._w.writerow([world.step] + [f"{v:.9g}" for v in vals] + [int(done)])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class IntersectionEnv:
    """Episodic wrapper around ``spawn_scenario`` / ``step_env``.

    Besides the canonical start, ``reset_random`` places the host anywhere along
    its route with a random speed, for gathering initiation-set samples.
    """

    action_mode = "longitudinal"
    obs_size = 8

    def __init__(self, config: ScenarioConfig | None = None, logger: TrajectoryLogger | None = None):
        self.config = config or ScenarioConfig()
        self.world: WorldState | None = None
        self.logger = logger
        self._routes = build_routes(self.config)

    def reset(self, rng) -> np.ndarray:
        self.world = spawn_scenario(self.config, rng)
        return observe(self.world)

    def reset_random(self, rng, max_preroll: int = 200, v_range=(0.0, 6.0), tries: int = 20) -> np.ndarray:
        rng = _as_rng(rng)
        route = self._routes.host
        end = route.length
        if self.config.goal_center is not None:
            end = route.project(*self.config.goal_center)
        for _ in range(tries):
            world = spawn_scenario(self.config, rng)
            s = rng.uniform(0.0, end)
            v = rng.uniform(*v_range)
            for _ in range(int(rng.integers(0, max_preroll + 1))):
                for o in world.others:
                    _advance_other(o, self.config, self.config.vehicle)
            x, y = route.point_at(s)
            world.host = VehicleState(x, y, route.heading_at(s), v)
            world.host_progress = s
            for task, z in world.routes.zones.items():
                world.zones_passed[task] = s >= z
            hp = (x, y, world.host.theta)
            if not any(o.active and check_collision(hp, self.config.dims, (o.state.x, o.state.y, o.state.theta),
                                                    self.config.dims) for o in world.others):
                break
        self.world = world
        return observe(world)

    def canonical_start(self) -> np.ndarray:
        """Start observation with every enabled subtask vehicle parked at its spawn point."""
        cfg = replace(self.config, move_probability=0.0, presence_probability=1.0)
        return observe(spawn_scenario(cfg, 0))

    def step(self, action: Action):
        out = step_env(self.world, action)
        if self.logger is not None:
            self.logger.log(self.world, out[3]["action"], out[1], out[2])
        return out

    def in_goal(self, obs) -> bool:
        if self.config.goal_center is None:
            return False
        x, y, _, _ = decode_host(obs)
        gx, gy = self.config.goal_center
        return math.hypot(x - gx, y - gy) <= self.config.goal_radius

    def snapshot(self) -> WorldState:
        return self.world.copy()

    def restore(self, snap: WorldState) -> None:
        self.world = snap.copy()
