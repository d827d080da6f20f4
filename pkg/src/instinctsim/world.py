"""Ground-truth 2D world, differential-drive kinematics, and device models.

All operations here are pure functions over value types; ``DeviceSim`` is a
thin stateful shell bundling the motor (wheel commands + acceleration limit),
lidar (ray-cast scan, optional seeded noise), and encoder (pose readout) so
the instinct layer has a single device interface.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .config import LidarParams, RobotParams

TWO_PI = 2.0 * math.pi
# Wheel-speed asymmetry below this yaw rate is integrated as straight-line
# motion; above it the exact arc form is used so results are dt-robust.
OMEGA_STRAIGHT_EPS = 1e-9
# Ray parameter floor: intersections at t <= this are treated as the origin
# sitting on a surface and skipped in favour of the next one.
RAY_T_EPS = 1e-12


def wrap_angle(angle: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.fmod(angle + math.pi, TWO_PI)
    if a <= 0.0:
        a += TWO_PI
    return a - math.pi


class Mode(Enum):
    NORMAL = "NORMAL"
    SAFE = "SAFE"


@dataclass(frozen=True)
class Pose2D:
    """Robot pose in world coordinates; theta kept in (-pi, pi]."""

    x: float
    y: float
    theta: float


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    radius: float


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, min corner (x0, y0) strictly below (x1, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True, eq=False)
class WorldModel:
    """Static obstacle map: solid circles and rects inside a bounding rect."""

    bounds: Rect
    circles: tuple[Circle, ...] = ()
    rects: tuple[Rect, ...] = ()
    # numpy mirrors, built once; excluded from comparisons/repr
    _circ: np.ndarray = field(init=False, repr=False)
    _rect: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        b = self.bounds
        if not (b.x0 < b.x1 and b.y0 < b.y1):
            raise ValueError(f"bounds min corner must be below max corner: {b}")
        for c in self.circles:
            if c.radius <= 0.0:
                raise ValueError(f"circle radius must be positive: {c}")
            inside = (
                b.x0 <= c.cx - c.radius
                and c.cx + c.radius <= b.x1
                and b.y0 <= c.cy - c.radius
                and c.cy + c.radius <= b.y1
            )
            if not inside:
                raise ValueError(f"circle must lie inside bounds: {c}")
        for r in self.rects:
            if not (r.x0 < r.x1 and r.y0 < r.y1):
                raise ValueError(f"rect min corner must be below max corner: {r}")
            if not (b.x0 <= r.x0 and r.x1 <= b.x1 and b.y0 <= r.y0 and r.y1 <= b.y1):
                raise ValueError(f"rect must lie inside bounds: {r}")
        circ = np.array([(c.cx, c.cy, c.radius) for c in self.circles], dtype=float)
        rect = np.array([(r.x0, r.y0, r.x1, r.y1) for r in self.rects], dtype=float)
        object.__setattr__(self, "_circ", circ.reshape(-1, 3))
        object.__setattr__(self, "_rect", rect.reshape(-1, 4))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorldModel):
            return NotImplemented
        return (
            self.bounds == other.bounds
            and self.circles == other.circles
            and self.rects == other.rects
        )

    def __hash__(self) -> int:
        return hash((self.bounds, self.circles, self.rects))


@dataclass(frozen=True)
class RobotState:
    """Physical robot state; ``collided`` is monotone within a run."""

    pose: Pose2D
    v_left: float = 0.0
    v_right: float = 0.0
    load: float = 0.0       # fraction of the acceleration budget used, [0, 1]
    mode: Mode = Mode.NORMAL
    collided: bool = False


@dataclass(frozen=True, eq=False)
class LidarScan:
    """One sweep: beam i points at ``angle_min + i * angle_increment`` (world
    frame); a beam that hits nothing reports exactly ``max_range``."""

    ranges: np.ndarray
    angle_min: float
    angle_increment: float
    max_range: float
    tick: int

    @property
    def n_beams(self) -> int:
        return len(self.ranges)


def step_kinematics(
    pose: Pose2D, v_left: float, v_right: float, axle: float, dt: float
) -> Pose2D:
    """Advance a differential-drive pose by dt at constant wheel speeds.

    Uses the exact circular-arc solution whenever the yaw rate is
    non-negligible, so the result does not depend on how a time interval is
    subdivided.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if axle <= 0.0:
        raise ValueError("axle must be positive")
    v = 0.5 * (v_left + v_right)
    omega = (v_right - v_left) / axle
    if abs(omega) > OMEGA_STRAIGHT_EPS:
        radius = v / omega
        theta_end = pose.theta + omega * dt
        x = pose.x + radius * (math.sin(theta_end) - math.sin(pose.theta))
        y = pose.y - radius * (math.cos(theta_end) - math.cos(pose.theta))
        return Pose2D(x, y, wrap_angle(theta_end))
    x = pose.x + v * math.cos(pose.theta) * dt
    y = pose.y + v * math.sin(pose.theta) * dt
    return Pose2D(x, y, wrap_angle(pose.theta))


def _slab_first_hit(
    ox: float,
    oy: float,
    dx: np.ndarray,
    dy: np.ndarray,
    rects: np.ndarray,
) -> np.ndarray:
    """First positive ray parameter against each rect (slab test), inf if none.

    rects has shape (R, 4); result has shape (n_beams, R). A ray starting
    inside a rect hits its exit face, so container rects (bounds) and solid
    rects share this routine.
    """
    tiny = 1e-300  # keeps 0-component directions finite without NaNs
    sdx = np.where(np.abs(dx) < tiny, np.copysign(tiny, dx), dx)[:, None]
    sdy = np.where(np.abs(dy) < tiny, np.copysign(tiny, dy), dy)[:, None]
    ta = (rects[None, :, 0] - ox) / sdx
    tb = (rects[None, :, 2] - ox) / sdx
    txmin = np.minimum(ta, tb)
    txmax = np.maximum(ta, tb)
    ta = (rects[None, :, 1] - oy) / sdy
    tb = (rects[None, :, 3] - oy) / sdy
    tymin = np.minimum(ta, tb)
    tymax = np.maximum(ta, tb)
    tmin = np.maximum(txmin, tymin)
    tmax = np.minimum(txmax, tymax)
    hit = tmax >= np.maximum(tmin, 0.0)
    t = np.where(tmin > RAY_T_EPS, tmin, np.where(tmax > RAY_T_EPS, tmax, np.inf))
    return np.where(hit, t, np.inf)


def beam_distances(
    world: WorldModel, ox: float, oy: float, angles: np.ndarray
) -> np.ndarray:
    """Uncapped distance to the first surface along each ray angle."""
    dx = np.cos(angles)
    dy = np.sin(angles)
    best = _slab_first_hit(
        ox, oy, dx, dy, np.array([[world.bounds.x0, world.bounds.y0,
                                   world.bounds.x1, world.bounds.y1]])
    )[:, 0]
    if world._circ.shape[0]:
        fx = world._circ[:, 0] - ox
        fy = world._circ[:, 1] - oy
        # p(t) = o + t*d hits the circle when t^2 - 2 t (d.f) + |f|^2 - r^2 = 0
        b = dx[:, None] * fx[None, :] + dy[:, None] * fy[None, :]
        c0 = fx * fx + fy * fy - world._circ[:, 2] ** 2
        disc = b * b - c0[None, :]
        sq = np.sqrt(np.maximum(disc, 0.0))
        t1 = b - sq
        t2 = b + sq
        t = np.where(t1 > RAY_T_EPS, t1, np.where(t2 > RAY_T_EPS, t2, np.inf))
        t = np.where(disc >= 0.0, t, np.inf)
        best = np.minimum(best, t.min(axis=1))
    if world._rect.shape[0]:
        t = _slab_first_hit(ox, oy, dx, dy, world._rect)
        best = np.minimum(best, t.min(axis=1))
    return best


def raycast(
    world: WorldModel,
    origin: tuple[float, float],
    angle: float,
    max_range: float,
) -> tuple[float, bool]:
    """Distance to the nearest obstacle surface or bounds edge along a ray.

    Returns ``(range, hit)`` where range is capped at max_range and hit is
    False exactly when the cap applied.
    """
    if max_range <= 0.0:
        raise ValueError("max_range must be positive")
    t = float(beam_distances(world, origin[0], origin[1], np.array([angle]))[0])
    if t <= max_range:
        return t, True
    return max_range, False


def scan(
    world: WorldModel,
    pose: Pose2D,
    n_beams: int,
    max_range: float,
    tick: int = 0,
    noise_std: float = 0.0,
    noise_rng: random.Random | None = None,
) -> LidarScan:
    """Full sweep: beam i at pose.theta + i * (2*pi / n_beams).

    Deterministic by default; optional Gaussian range noise draws from the
    supplied generator so runs stay replayable.
    """
    if n_beams < 4:
        raise ValueError("n_beams must be at least 4")
    increment = TWO_PI / n_beams
    angles = pose.theta + increment * np.arange(n_beams)
    dists = beam_distances(world, pose.x, pose.y, angles)
    ranges = np.where(dists <= max_range, dists, max_range)
    if noise_std > 0.0:
        if noise_rng is None:
            raise ValueError("noise_std > 0 requires a noise_rng")
        noise = np.array([noise_rng.gauss(0.0, noise_std) for _ in range(n_beams)])
        ranges = np.clip(ranges + noise, 1e-6, max_range)
    return LidarScan(
        ranges=ranges,
        angle_min=pose.theta,
        angle_increment=increment,
        max_range=max_range,
        tick=tick,
    )


def clearance(world: WorldModel, x: float, y: float) -> float:
    """Signed distance from a point to the nearest obstacle surface or bounds
    edge; negative values are penetration depth."""
    b = world.bounds
    inner = min(x - b.x0, b.x1 - x, y - b.y0, b.y1 - y)
    if inner >= 0.0:
        best = inner
    else:
        best = -math.hypot(
            max(b.x0 - x, x - b.x1, 0.0), max(b.y0 - y, y - b.y1, 0.0)
        )
    for c in world.circles:
        best = min(best, math.hypot(x - c.cx, y - c.cy) - c.radius)
    for r in world.rects:
        qx = max(r.x0 - x, x - r.x1)
        qy = max(r.y0 - y, y - r.y1)
        if qx > 0.0 or qy > 0.0:
            d = math.hypot(max(qx, 0.0), max(qy, 0.0))
        else:
            d = max(qx, qy)  # inside: negative, distance to closest face
        best = min(best, d)
    return best


def _clamp(value: float, lo: float, hi: float) -> float:
    return lo if value < lo else hi if value > hi else value


def step_world(
    state: RobotState,
    world: WorldModel,
    cmd_v_left: float,
    cmd_v_right: float,
    dt: float,
    robot: RobotParams,
) -> RobotState:
    """One physics tick: wheel speeds slew toward the command under the
    acceleration limit, the pose follows the exact arc, load reports the
    fraction of the acceleration budget consumed, and a collision latches
    once clearance drops below the body radius."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    cmd_v_left = _clamp(cmd_v_left, -robot.v_wheel_max, robot.v_wheel_max)
    cmd_v_right = _clamp(cmd_v_right, -robot.v_wheel_max, robot.v_wheel_max)
    dv_max = robot.a_max * dt
    dvl = _clamp(cmd_v_left - state.v_left, -dv_max, dv_max)
    dvr = _clamp(cmd_v_right - state.v_right, -dv_max, dv_max)
    v_left = state.v_left + dvl
    v_right = state.v_right + dvr
    load = _clamp(max(abs(dvl), abs(dvr)) / dv_max, 0.0, 1.0)
    pose = step_kinematics(state.pose, v_left, v_right, robot.axle, dt)
    collided = state.collided or clearance(world, pose.x, pose.y) < robot.radius
    return RobotState(
        pose=pose,
        v_left=v_left,
        v_right=v_right,
        load=load,
        mode=state.mode,
        collided=collided,
    )


class DeviceSim:
    """Device layer: motor with zero-order-hold commands, lidar, encoder."""

    def __init__(
        self,
        world: WorldModel,
        state: RobotState,
        robot: RobotParams,
        lidar: LidarParams,
        noise_rng: random.Random | None = None,
    ) -> None:
        self.world = world
        self.state = state
        self.robot = robot
        self.lidar = lidar
        self.noise_rng = noise_rng
        self.cmd_v_left = 0.0
        self.cmd_v_right = 0.0

    def set_wheel_command(self, v_left: float, v_right: float) -> None:
        self.cmd_v_left = v_left
        self.cmd_v_right = v_right

    def stop(self) -> None:
        self.set_wheel_command(0.0, 0.0)

    def step(self, dt: float) -> RobotState:
        self.state = step_world(
            self.state, self.world, self.cmd_v_left, self.cmd_v_right, dt, self.robot
        )
        return self.state

    def acquire_scan(self, tick: int) -> LidarScan:
        return scan(
            self.world,
            self.state.pose,
            self.lidar.beams,
            self.lidar.max_range,
            tick=tick,
            noise_std=self.lidar.noise_std,
            noise_rng=self.noise_rng,
        )

    def set_mode(self, mode: Mode) -> None:
        self.state = replace(self.state, mode=mode)

    def ground_truth_clearance(self) -> float:
        return clearance(self.world, self.state.pose.x, self.state.pose.y)
