"""Episodic manipulation tasks on the simulated rod.

Four tasks, matching control modes and rates:

  follow_target       bend3d        10 Hz   track a moving target point
  ik4d                bend3d_twist  10 Hz   reach a 4D pose (x, y, z, yaw)
  obstacles2d_tight   bend2d         2 Hz   thread a 0.12 m gap between two
                                            capsules to a fixed target
  obstacles3d_random  bend3d         2 Hz   reach a point beyond 8 random
                                            capsule obstacles

The rod is cantilevered at the origin along +x. Non-contact episodes run
100 control steps, contact episodes 40 (10 s / 20 s of simulated time).

Observation layout (all float64, normalized, fixed per task):
  [0:18)    positions of the control-point nodes plus the tip, / L
  [18:36)   velocities of the same nodes, / 1 m/s
  next      natural-shape targets at the control points, / kappa_bound:
            kappa1 (bend2d: 5), kappa1+kappa2 (bend3d: 10),
            plus psi (bend3d_twist: 15)
  then      task block: target position / L, plus target velocity / 0.5
            (follow_target), yaw / pi (ik4d), or the 8 obstacle
            descriptors [ax ay az bx by bz r] / L (obstacles3d_random)

Reward per control step: -(tip-to-target distance)/L, ik4d adds
-(|wrapped yaw error|)/pi. Holding inside 0.02 L (and 0.1 rad yaw for
ik4d) for 5 consecutive control steps pays +10 and terminates. A solver
failure terminates with reward -10. Episodes truncate at the horizon.
Touching obstacles is never penalized.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .contact import (Capsule, ContactConfig, max_penetration,
                      pack_obstacles)
from .control import (ActuationState, ControlConfig, apply_action,
                      control_node_indices, interp_targets)
from .dynamics import (ClampSpec, StepperConfig, explicit_step,
                       implicit_step)
from .errors import ConfigError, InvalidParameterError, SoftRodError
from .geometry import build_rod

TASK_NAMES = ("follow_target", "ik4d", "obstacles2d_tight",
              "obstacles3d_random")

_TASK_TABLE = {
    "follow_target": dict(mode="bend3d", control_frequency=10.0,
                          episode_length=100, contact=False),
    "ik4d": dict(mode="bend3d_twist", control_frequency=10.0,
                 episode_length=100, contact=False),
    "obstacles2d_tight": dict(mode="bend2d", control_frequency=2.0,
                              episode_length=40, contact=True),
    "obstacles3d_random": dict(mode="bend3d", control_frequency=2.0,
                               episode_length=40, contact=True),
}

SUCCESS_RADIUS_FRAC = 0.02
SUCCESS_YAW_TOL = 0.1
SUCCESS_HOLD = 5
SUCCESS_BONUS = 10.0
FAILURE_REWARD = -10.0
TARGET_SPEED = 0.5


def task_defaults(task: str) -> dict:
    """Control mode, rate, horizon, and contact flag for a named task."""
    if task not in _TASK_TABLE:
        raise ConfigError(
            f"unknown task {task!r}; choose from {TASK_NAMES}")
    return dict(_TASK_TABLE[task])


@dataclass
class TaskSpec:
    """Everything needed to build one environment deterministically."""

    task: str
    seed: int = 0
    scheme: str = "implicit"
    n_nodes: int = 21
    n_control_points: int = 5
    length: float = 1.0
    radius: float = 0.05
    density: float = 1000.0
    youngs_modulus: float = 1.0e7
    poisson_ratio: float = 0.5
    damping_coeff: float = 2.0
    newton_tol: float = 1e-6
    delta_limit: float = 0.1
    kappa_bound: float = 2.0
    contact_stiffness: float = 1.0e6
    contact_delta: float = 0.005
    contact_damping: float = 10.0
    penalty_stiffness: float = 1.6e5
    dt: float | None = None
    episode_length: int | None = None
    control_period: int | None = None
    max_newton_iters: int | None = None

    def __post_init__(self):
        if self.task not in _TASK_TABLE:
            raise ConfigError(
                f"unknown task {self.task!r}; choose from {TASK_NAMES}")
        if self.scheme not in ("implicit", "explicit"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        table = _TASK_TABLE[self.task]
        self.mode = table["mode"]
        self.control_frequency = table["control_frequency"]
        self.contact = table["contact"]
        if self.episode_length is None:
            self.episode_length = table["episode_length"]
        if self.dt is None:
            self.dt = 0.05 if self.scheme == "implicit" else 2e-4
        if self.max_newton_iters is None:
            self.max_newton_iters = 5 if self.contact else 2
        if self.control_period is None:
            period = 1.0 / (self.control_frequency * self.dt)
            self.control_period = int(round(period))
            if abs(period - self.control_period) > 1e-9:
                raise ConfigError(
                    f"dt {self.dt} does not divide the control period at "
                    f"{self.control_frequency} Hz")
        elif self.control_period < 1:
            raise ConfigError("control_period must be at least 1")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    info: dict


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _seg_seg_distance(a1, b1, a2, b2) -> float:
    """Closest distance between two segments (scene sampling helper)."""
    d1 = b1 - a1
    d2 = b2 - a2
    r = a1 - a2
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    if a <= 1e-12 and e <= 1e-12:
        return float(np.linalg.norm(r))
    if a <= 1e-12:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    elif e <= 1e-12:
        s, t = np.clip(-(d1 @ r) / a, 0.0, 1.0), 0.0
    else:
        c = d1 @ r
        b = d1 @ d2
        denom = a * e - b * b
        s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > 1e-12 else 0.0
        t = (b * s + f) / e
        if t < 0.0:
            t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
        elif t > 1.0:
            t, s = 1.0, np.clip((b - c) / a, 0.0, 1.0)
    return float(np.linalg.norm(a1 + s * d1 - (a2 + t * d2)))


def _sample_shell_point(rng, length: float) -> np.ndarray:
    """Random point in the forward reachable shell, |p| in [0.35, 0.85] L."""
    while True:
        v = rng.standard_normal(3)
        v[0] = abs(v[0]) + 0.5
        v /= np.linalg.norm(v)
        p = v * rng.uniform(0.35, 0.85) * length
        if p[0] > 0.15 * length:
            return p


class _MovingTarget:
    """Closed spline through random shell waypoints, traversed at 0.5 m/s."""

    def __init__(self, rng, length: float):
        wps = np.array([_sample_shell_point(rng, length) for _ in range(5)])
        wps = np.vstack([wps, wps[0]])
        spline = CubicSpline(np.arange(6.0), wps, bc_type="periodic", axis=0)
        u = np.linspace(0.0, 5.0, 600)
        pts = spline(u)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        self._spline = spline
        self._u = u
        self._arc = arc
        self._total = float(arc[-1])

    def at(self, t: float) -> np.ndarray:
        s = (TARGET_SPEED * t) % self._total
        u = float(np.interp(s, self._arc, self._u))
        return np.asarray(self._spline(u))

    def velocity(self, t: float, h: float = 1e-3) -> np.ndarray:
        return (self.at(t + h) - self.at(t - h)) / (2.0 * h)


def _fixed_gap_scene(length: float):
    """Two capsules across the x-z working plane leaving a 0.12 m slot.

    Slot spans z in [-0.31, -0.19]; the straight rod clears the upper
    capsule by 0.02 at reset and must bend down through the slot (0.01
    clearance per side at the rod's 0.1 diameter) to reach the target.
    """
    half = 0.5 * length
    upper = Capsule(point_a=np.array([0.55, -half, -0.13]),
                    point_b=np.array([0.55, half, -0.13]), radius=0.06)
    lower = Capsule(point_a=np.array([0.55, -half, -0.37]),
                    point_b=np.array([0.55, half, -0.37]), radius=0.06)
    target = np.array([0.8, 0.0, -0.25])
    return [upper, lower], target


def _sample_obstacle_scene(rng, length: float, rod_radius: float):
    """Eight random capsules between the rod and the target, contact-free."""
    while True:
        target = np.array([rng.uniform(0.6, 0.85),
                           rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)])
        if 0.35 * length <= np.linalg.norm(target) <= 0.9 * length:
            break
    rod_a = np.zeros(3)
    rod_b = np.array([length, 0.0, 0.0])
    obstacles = []
    attempts = 0
    while len(obstacles) < 8:
        attempts += 1
        if attempts > 10000:
            raise ConfigError("obstacle sampling failed to converge")
        center = np.array([rng.uniform(0.25, 0.6), rng.uniform(-0.4, 0.4),
                           rng.uniform(-0.4, 0.4)])
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        half = rng.uniform(0.05, 0.15)
        radius = rng.uniform(0.04, 0.08)
        a, b = center - half * axis, center + half * axis
        if _seg_seg_distance(a, b, rod_a, rod_b) < radius + rod_radius + 0.02:
            continue
        if _seg_seg_distance(a, b, target, target) < radius + 0.05:
            continue
        ok = True
        for other in obstacles:
            if _seg_seg_distance(a, b, other.point_a, other.point_b) \
                    < radius + other.radius + 0.01:
                ok = False
                break
        if ok:
            obstacles.append(Capsule(point_a=a, point_b=b, radius=radius))
    return obstacles, target


class Environment:
    """One episodic task instance. Build with make_env, drive with
    reset/step. Deterministic in (spec, reset seed, actions)."""

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        self.control_config = ControlConfig(
            n_control_points=spec.n_control_points, mode=spec.mode,
            delta_limit=spec.delta_limit, kappa_bound=spec.kappa_bound,
            control_period=spec.control_period)
        # contact tasks backtrack inside the Newton cap: a full step can
        # tunnel through the stiff contact wall and the cap would then
        # accept a penetrated iterate
        self.stepper_config = StepperConfig(
            dt=spec.dt, max_newton_iters=spec.max_newton_iters,
            newton_tol=spec.newton_tol, damping_coeff=spec.damping_coeff,
            scheme=spec.scheme, line_search=spec.contact)
        k = spec.penalty_stiffness if spec.scheme == "explicit" \
            else spec.contact_stiffness
        self.contact_config = ContactConfig(
            stiffness=k, delta=spec.contact_delta,
            damping=spec.contact_damping)
        self._ctrl_nodes = control_node_indices(spec.n_nodes,
                                                spec.n_control_points)
        self._obs_nodes = np.concatenate([self._ctrl_nodes,
                                          [spec.n_nodes - 1]])
        self._episode_ss = np.random.SeedSequence(spec.seed)
        self.reset(spec.seed)

    # -- public surface ---------------------------------------------------

    @property
    def action_dim(self) -> int:
        return self.control_config.action_dim

    @property
    def observation_dim(self) -> int:
        return self._observe().shape[0]

    @property
    def time(self) -> float:
        return self._control_steps * self.spec.control_period * self.spec.dt

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Restore the rod to rest and resample the task scene."""
        if seed is not None:
            self._episode_ss = np.random.SeedSequence(seed)
        rng = np.random.default_rng(self._episode_ss)
        self._episode_ss = self._episode_ss.spawn(1)[0]
        spec = self.spec
        self.state, self.rest, self.frames = build_rod(
            spec.length, spec.radius, spec.density, spec.youngs_modulus,
            spec.poisson_ratio, spec.n_nodes)
        self.clamps = ClampSpec.cantilever(self.state)
        self.actuation = ActuationState.zeros(spec.n_nodes)
        self._moving_target = None
        self._target_yaw = None
        if spec.task == "follow_target":
            self._moving_target = _MovingTarget(rng, spec.length)
            self.target = self._moving_target.at(0.0)
            self.obstacles = []
        elif spec.task == "ik4d":
            self.target = _sample_shell_point(rng, spec.length)
            self._target_yaw = float(rng.uniform(-math.pi, math.pi))
            self.obstacles = []
        elif spec.task == "obstacles2d_tight":
            self.obstacles, self.target = _fixed_gap_scene(spec.length)
        else:
            self.obstacles, self.target = _sample_obstacle_scene(
                rng, spec.length, spec.radius)
        self._packed_obs = pack_obstacles(self.obstacles) \
            if self.obstacles else None
        self._control_steps = 0
        self._success_count = 0
        self._done = False
        return self._observe()

    def step(self, action) -> StepResult:
        """Apply one action and advance control_period substeps."""
        if self._done:
            raise InvalidParameterError(
                "episode is over; call reset before stepping")
        spec = self.spec
        self.actuation, clipped = apply_action(action, self.actuation,
                                               self.control_config)
        failure = False
        stats = None
        max_pen = 0.0
        for sub in range(spec.control_period):
            kappa, psi = interp_targets(self.actuation, sub,
                                        self.control_config)
            self.rest.kappa_bar[:] = kappa
            self.rest.psi_bar[:] = psi
            try:
                if spec.scheme == "implicit":
                    self.state, self.frames, stats = implicit_step(
                        self.state, self.rest, self.frames,
                        self._packed_obs, self.stepper_config, self.clamps,
                        self.contact_config)
                else:
                    self.state, self.frames = explicit_step(
                        self.state, self.rest, self.frames,
                        self._packed_obs, self.stepper_config, self.clamps,
                        self.contact_config,
                        step_index=self._control_steps * spec.control_period
                        + sub)
            except SoftRodError:
                failure = True
                break
            if self._packed_obs is not None:
                max_pen = max(max_pen, max_penetration(
                    self.state.positions, self._packed_obs, spec.radius))
        self._control_steps += 1
        if self._moving_target is not None and not failure:
            self.target = self._moving_target.at(self.time)

        info = {
            "distance": float("nan"),
            "newton_iterations": stats.iterations if stats else 0,
            "newton_residual": stats.residual if stats else 0.0,
            "converged": stats.converged if stats else True,
            "max_penetration": max_pen,
            "success": False,
            "solver_failure": failure,
            "clipped_action": clipped,
            "time": self.time,
        }
        if failure:
            self._done = True
            return StepResult(self._observe(), FAILURE_REWARD, True, False,
                              info)

        tip = self.state.positions[-1]
        dist = float(np.linalg.norm(tip - self.target))
        info["distance"] = dist
        reward = -dist / spec.length
        on_target = dist <= SUCCESS_RADIUS_FRAC * spec.length
        if spec.task == "ik4d":
            m1_tip = self.frames.m1[-1]
            yaw = math.atan2(m1_tip[1], m1_tip[0])
            yaw_err = _wrap_angle(yaw - self._target_yaw)
            info["yaw_error"] = yaw_err
            reward += -abs(yaw_err) / math.pi
            on_target = on_target and abs(yaw_err) <= SUCCESS_YAW_TOL
        self._success_count = self._success_count + 1 if on_target else 0
        terminated = False
        if self._success_count >= SUCCESS_HOLD:
            reward += SUCCESS_BONUS
            terminated = True
            info["success"] = True
        truncated = (not terminated
                     and self._control_steps >= spec.episode_length)
        self._done = terminated or truncated
        return StepResult(self._observe(), float(reward), terminated,
                          truncated, info)

    def close(self):
        pass

    # -- internals ---------------------------------------------------------

    def _observe(self) -> np.ndarray:
        spec = self.spec
        L = spec.length
        pos = self.state.positions[self._obs_nodes].ravel() / L
        vel = self.state.velocities[self._obs_nodes].ravel()
        slots = self._ctrl_nodes - 1
        bound = self.control_config.kappa_bound
        blocks = [pos, vel,
                  self.actuation.kappa_targets[slots, 0] / bound]
        if spec.mode in ("bend3d", "bend3d_twist"):
            blocks.append(self.actuation.kappa_targets[slots, 1] / bound)
        if spec.mode == "bend3d_twist":
            blocks.append(self.actuation.psi_targets[slots] / bound)
        blocks.append(self.target / L)
        if spec.task == "follow_target":
            blocks.append(self._moving_target.velocity(self.time)
                          / TARGET_SPEED)
        elif spec.task == "ik4d":
            blocks.append(np.array([self._target_yaw / math.pi]))
        elif spec.task == "obstacles3d_random":
            blocks.append(self._packed_obs.ravel() / L)
        return np.concatenate(blocks)


def make_env(spec: TaskSpec) -> Environment:
    """Build an environment with its scene constructed from spec.seed."""
    return Environment(spec)


# ---------------------------------------------------------------------------
# trajectory export (shared record format; see README for field semantics)


def _json_safe(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def trajectory_record(env: Environment, action, result: StepResult,
                      episode: int = 0) -> dict:
    """One exported control-step record with the documented fields."""
    info = {k: _json_safe(v) for k, v in result.info.items()}
    info["episode"] = int(episode)
    return {
        "t": env.time,
        "node_positions": env.state.positions.tolist(),
        "kappa_bar": env.rest.kappa_bar.tolist(),
        "action": np.asarray(action, dtype=np.float64).ravel().tolist(),
        "reward": float(result.reward),
        "info": info,
    }


def record_to_json(record: dict) -> str:
    """Canonical single-line serialization used by rollouts and the bridge."""
    import json
    return json.dumps(record, separators=(",", ":"), sort_keys=True)
