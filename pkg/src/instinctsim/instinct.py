"""The always-on safety layer: survival tasks first, vetted commands second.

Every tick runs the same fixed sequence: acquire sensors, judge device
status, handle the unsafe case (safe mode) or run the survival governor and
roaming, then translate at most one active high command into a one-tick
device primitive that must pass the predictive safety check before the motor
sees it. Feedback and a summarized sensor view go back to the agent every
tick. The layer never blocks on the agent and keeps working if the agent is
gone entirely.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass

import numpy as np

from .bus import Channel, MemoryLog, MemoryRecord
from .config import InstinctParams, RobotParams
from .messages import (
    Feedback,
    FeedbackStatus,
    HighCommand,
    HighKind,
    LowCommand,
    LowKind,
    MalformedCommandError,
    SafetyVerdict,
    ScanSummary,
    VerdictReason,
    sector_angle,
)
from .trace import TraceRecorder
from .world import DeviceSim, LidarScan, Mode, Pose2D, Rect, RobotState, wrap_angle

N_SECTORS = 8

# Per-beam-count geometry shared by summarize/front checks: wrapped relative
# bearings, the 8-sector bucket of each beam, and the front (+-45 deg) mask.
_BEAM_CACHE: dict[int, tuple[np.ndarray, list[np.ndarray], np.ndarray]] = {}


def _beam_geometry(n_beams: int) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    cached = _BEAM_CACHE.get(n_beams)
    if cached is not None:
        return cached
    rel = np.arange(n_beams) * (2.0 * math.pi / n_beams)
    rel = np.mod(rel + math.pi, 2.0 * math.pi) - math.pi
    sectors = [
        np.flatnonzero(
            np.round(rel / (2.0 * math.pi / N_SECTORS)).astype(int) % N_SECTORS == k
        )
        for k in range(N_SECTORS)
    ]
    front = np.abs(rel) <= math.pi / 4.0 + 1e-12
    _BEAM_CACHE[n_beams] = (rel, sectors, front)
    return rel, sectors, front


def summarize(scan: LidarScan, state: RobotState) -> ScanSummary:
    """Reduce a scan to the eight-sector digest the agent plans from.

    Sector 0 is centered on the heading; a sector with no beams reports
    max_range (no information reads as no return).
    """
    rel, sectors, _ = _beam_geometry(scan.n_beams)
    mins = tuple(
        float(scan.ranges[idx].min()) if idx.size else scan.max_range
        for idx in sectors
    )
    nearest_idx = int(np.argmin(scan.ranges))
    return ScanSummary(
        sector_min=mins,
        nearest_bearing=float(rel[nearest_idx]),
        nearest_range=float(scan.ranges[nearest_idx]),
        pose=state.pose,
        load=state.load,
        mode=state.mode,
        tick=scan.tick,
    )


def front_min_range(scan: LidarScan) -> float:
    """Minimum return within +-45 degrees of the heading."""
    _, _, front = _beam_geometry(scan.n_beams)
    return float(scan.ranges[front].min())


@dataclass(frozen=True)
class ObstacleBelief:
    """World knowledge of the safety layer: the latest scan's hit endpoints.

    The layer never sees ground truth; these points (plus the configured
    bounds) are all the predictive check may consult. Memoryless per scan.
    """

    points: np.ndarray  # (K, 2) world-frame endpoints of beams that hit
    built_tick: int

    @classmethod
    def from_scan(cls, scan: LidarScan, origin_x: float, origin_y: float
                  ) -> "ObstacleBelief":
        hits = scan.ranges < scan.max_range
        angles = scan.angle_min + scan.angle_increment * np.flatnonzero(hits)
        r = scan.ranges[hits]
        points = np.column_stack(
            (origin_x + r * np.cos(angles), origin_y + r * np.sin(angles))
        )
        return cls(points=points, built_tick=scan.tick)


def predict_trajectory(
    pose: Pose2D,
    v_left: float,
    v_right: float,
    hold_s: float,
    robot: RobotParams,
    dt_pred: float,
) -> np.ndarray:
    """Sample (x, y) along "command held, then maximal braking".

    Wheel speeds are held for hold_s, then both decay toward zero at a_max.
    Each substep advances with the speeds at its start, so coarser steps
    brake later and predict slightly farther travel: discretization errs on
    the conservative side.
    """
    brake_s = max(abs(v_left), abs(v_right)) / robot.a_max
    horizon = hold_s + brake_s + 0.1
    x, y, th = pose.x, pose.y, pose.theta
    vl, vr = v_left, v_right
    pts = [(x, y)]
    t = 0.0
    while t < horizon - 1e-12:
        step = min(dt_pred, horizon - t)
        clipped = t < hold_s < t + step
        if clipped:
            step = hold_s - t  # land exactly on the phase boundary
        braking = t >= hold_s
        v = 0.5 * (vl + vr)
        omega = (vr - vl) / robot.axle
        if abs(omega) > 1e-9:
            th_end = th + omega * step
            radius = v / omega
            x += radius * (math.sin(th_end) - math.sin(th))
            y -= radius * (math.cos(th_end) - math.cos(th))
            th = th_end
        else:
            x += v * math.cos(th) * step
            y += v * math.sin(th) * step
        pts.append((x, y))
        if braking:
            dv = robot.a_max * step
            vl -= math.copysign(min(abs(vl), dv), vl) if vl else 0.0
            vr -= math.copysign(min(abs(vr), dv), vr) if vr else 0.0
        t = hold_s if clipped else t + step
    return np.array(pts)


def _trajectory_clearances(
    samples: np.ndarray, points: np.ndarray, bounds: Rect, radius: float
) -> tuple[float, float]:
    """Body clearance minima along a trajectory: to belief points (obstacle
    surfaces inflated by the robot radius) and to the bounds geofence."""
    if points.shape[0]:
        diff = samples[:, None, :] - points[None, :, :]
        obstacle_min = float(np.sqrt((diff * diff).sum(-1)).min()) - radius
    else:
        obstacle_min = math.inf
    xs = samples[:, 0]
    ys = samples[:, 1]
    inner = np.minimum(
        np.minimum(xs - bounds.x0, bounds.x1 - xs),
        np.minimum(ys - bounds.y0, bounds.y1 - ys),
    )
    bounds_min = float(inner.min()) - radius
    return obstacle_min, bounds_min


def safety_check(
    low: LowCommand,
    pose: Pose2D,
    belief: ObstacleBelief | None,
    bounds: Rect,
    robot: RobotParams,
    params: InstinctParams,
    now: int,
    physics_dt: float,
) -> SafetyVerdict:
    """Predictive vetting of a device primitive against the belief.

    STOP_ALL and ACQUIRE_SCAN introduce no motion and are always safe (their
    clearance reports +inf, keeping the safe <=> clearance >= d_min pairing
    intact). SET_WHEELS is forward-simulated for its duration plus
    worst-case braking plus a 0.1 s margin; it passes only when every sample
    keeps at least d_min of body clearance. A stale or missing belief makes
    every motion command unsafe, conservatively.
    """
    if low.kind is not LowKind.SET_WHEELS:
        return SafetyVerdict(True, math.inf, VerdictReason.OK)
    if belief is None or now - belief.built_tick > params.stale_limit:
        return SafetyVerdict(False, -math.inf, VerdictReason.LIMIT_EXCEEDED)
    if max(abs(low.v_left), abs(low.v_right)) > robot.v_wheel_max + 1e-9:
        return SafetyVerdict(False, -math.inf, VerdictReason.LIMIT_EXCEEDED)
    samples = predict_trajectory(
        pose, low.v_left, low.v_right, low.duration_ticks * physics_dt,
        robot, params.dt_pred,
    )
    obstacle_min, bounds_min = _trajectory_clearances(
        samples, belief.points, bounds, robot.radius
    )
    predicted = min(obstacle_min, bounds_min)
    if predicted >= params.d_min:
        return SafetyVerdict(True, predicted, VerdictReason.OK)
    reason = (
        VerdictReason.OBSTACLE_PREDICTED
        if obstacle_min <= bounds_min
        else VerdictReason.OUT_OF_BOUNDS
    )
    return SafetyVerdict(False, predicted, reason)


# Motion intents produced by command conversion.
_SET_WHEELS = "SET_WHEELS"
_STOP_ALL = "STOP_ALL"
_ACQUIRE_SCAN = "ACQUIRE_SCAN"


def _steer(pose: Pose2D, tx: float, ty: float, v_cap: float,
           robot: RobotParams, params: InstinctParams) -> tuple[float, float]:
    """Proportional heading/distance law -> wheel speeds, jointly scaled to
    the wheel limit. Translation only engages once roughly facing the goal."""
    heading_err = wrap_angle(math.atan2(ty - pose.y, tx - pose.x) - pose.theta)
    dist = math.hypot(tx - pose.x, ty - pose.y)
    omega = max(-params.omega_max, min(params.omega_max, params.k_theta * heading_err))
    if abs(heading_err) < math.pi / 4.0:
        v = max(0.0, min(params.k_d * dist, v_cap))
    else:
        v = 0.0
    v_left = v - omega * robot.axle / 2.0
    v_right = v + omega * robot.axle / 2.0
    peak = max(abs(v_left), abs(v_right))
    if peak > robot.v_wheel_max:
        scale = robot.v_wheel_max / peak
        v_left *= scale
        v_right *= scale
    return v_left, v_right


def convert(
    cmd: HighCommand,
    pose: Pose2D,
    robot: RobotParams,
    params: InstinctParams,
    waypoint_idx: int = 0,
) -> tuple[tuple | None, bool, int]:
    """Closed-loop per-tick translation of one high command.

    Returns (intent, done, next_waypoint_idx) where intent is one of
    ("SET_WHEELS", v_left, v_right), ("STOP_ALL",), ("ACQUIRE_SCAN",) or
    None. Called once per tick until done, so each emitted primitive covers
    a single tick and the safety horizon stays tight.
    """
    kind = cmd.kind
    if kind is HighKind.STOP:
        return (_STOP_ALL,), True, waypoint_idx
    if kind is HighKind.QUERY_STATUS:
        return (_ACQUIRE_SCAN,), True, waypoint_idx
    if kind is HighKind.ROTATE_TO:
        err = wrap_angle(cmd.theta - pose.theta)
        if abs(err) <= params.eps_heading:
            return None, True, waypoint_idx
        omega = max(-params.omega_max,
                    min(params.omega_max, params.k_theta * err))
        half = omega * robot.axle / 2.0
        if abs(half) > robot.v_wheel_max:
            half = math.copysign(robot.v_wheel_max, half)
        return (_SET_WHEELS, -half, half), False, waypoint_idx
    if kind is HighKind.MOVE_TO:
        if math.hypot(cmd.x - pose.x, cmd.y - pose.y) <= params.eps_pos:
            return None, True, waypoint_idx
        v_cap = cmd.speed if cmd.speed is not None else robot.v_wheel_max
        vl, vr = _steer(pose, cmd.x, cmd.y, v_cap, robot, params)
        return (_SET_WHEELS, vl, vr), False, waypoint_idx
    # FOLLOW_PATH: MOVE_TO each waypoint in order
    while waypoint_idx < len(cmd.waypoints):
        tx, ty = cmd.waypoints[waypoint_idx]
        if math.hypot(tx - pose.x, ty - pose.y) <= params.eps_pos:
            waypoint_idx += 1
            continue
        v_cap = cmd.speed if cmd.speed is not None else robot.v_wheel_max
        vl, vr = _steer(pose, tx, ty, v_cap, robot, params)
        return (_SET_WHEELS, vl, vr), False, waypoint_idx
    return None, True, waypoint_idx


def roam_intent(
    summary: ScanSummary,
    rng: random.Random,
    robot: RobotParams,
    params: InstinctParams,
    max_range: float,
) -> tuple[float, float]:
    """Seeded random arc biased away from the nearest occupied sector."""
    occupied = [k for k in range(N_SECTORS) if summary.sector_min[k] < max_range]
    if occupied:
        nearest = min(occupied, key=lambda k: summary.sector_min[k])
        away = wrap_angle(sector_angle(nearest) + math.pi)
        omega = params.k_theta * away + rng.uniform(-0.5, 0.5)
        v = rng.uniform(0.4, 0.8) * robot.v_wheel_max
        if abs(away) > math.pi / 2.0:
            v *= 0.25  # clear direction is behind: mostly turn in place
    else:
        omega = rng.uniform(-0.8, 0.8)
        v = 0.6 * robot.v_wheel_max
    omega = max(-params.omega_max, min(params.omega_max, omega))
    v_left = v - omega * robot.axle / 2.0
    v_right = v + omega * robot.axle / 2.0
    peak = max(abs(v_left), abs(v_right))
    if peak > robot.v_wheel_max:
        scale = robot.v_wheel_max / peak
        v_left *= scale
        v_right *= scale
    return v_left, v_right


@dataclass
class _ActiveCommand:
    cmd: HighCommand
    waypoint_idx: int = 0


class InstinctController:
    """Owner of the device interface; runs the fixed per-tick sequence."""

    def __init__(
        self,
        device: DeviceSim,
        command_channel: Channel,
        feedback_channel: Channel,
        data_channel: Channel,
        memory: MemoryLog,
        recorder: TraceRecorder,
        params: InstinctParams,
        physics_dt: float,
        roam_rng: random.Random | None = None,
    ) -> None:
        self.device = device
        self.command_channel = command_channel
        self.feedback_channel = feedback_channel
        self.data_channel = data_channel
        self.memory = memory
        self.recorder = recorder
        self.params = params
        self.physics_dt = physics_dt
        self.roam_rng = roam_rng or random.Random(0)
        self.belief: ObstacleBelief | None = None
        self.active: _ActiveCommand | None = None
        self.queue: deque[HighCommand] = deque()
        self.overload_ticks = 0
        self.safe_streak = 0
        self._low_id = 0
        self._scan: LidarScan | None = None

    # -- helpers ----------------------------------------------------------

    def _next_low_id(self) -> int:
        self._low_id += 1
        return self._low_id

    def _emit(self, layer: str, kind: str, payload: dict) -> None:
        self.recorder.emit(layer, kind, payload)

    def _send_feedback(self, fb: Feedback) -> None:
        self._emit("INSTINCT", "feedback", fb.to_payload())
        self.feedback_channel.transmit(fb, fb.tick)

    def _log_memory(self, now: int, payload: dict) -> None:
        self.memory.record(MemoryRecord(tick=now, origin_layer="INSTINCT",
                                        payload=payload))

    def device_status(self, state: RobotState, front_min: float
                      ) -> tuple[bool, str]:
        """Survival-level health: obstacle proximity, sustained overload, or
        a latched collision make the device unsafe."""
        if state.collided:
            return False, "COLLIDED"
        if front_min < self.params.d_stop:
            return False, "OBSTACLE_PROXIMITY"
        if self.overload_ticks >= self.params.overload_window:
            return False, "OVERLOAD"
        return True, "OK"

    def governor_scale(self, front_min: float) -> float:
        """Linear speed multiplier in the reactive band [d_stop, d_slow)."""
        p = self.params
        if front_min >= p.d_slow:
            return 1.0
        if front_min < p.d_stop:
            return 0.0
        return (front_min - p.d_stop) / (p.d_slow - p.d_stop)

    def safety_check(self, low: LowCommand, now: int) -> SafetyVerdict:
        return safety_check(
            low, self.device.state.pose, self.belief, self.device.world.bounds,
            self.device.robot, self.params, now, self.physics_dt,
        )

    # -- safe mode ---------------------------------------------------------

    def _cancel_pending(self, now: int) -> None:
        pending = []
        if self.active is not None:
            pending.append(self.active.cmd)
            self.active = None
        pending.extend(self.queue)
        self.queue.clear()
        for cmd in pending:
            self._send_feedback(Feedback(cmd.id, FeedbackStatus.SAFE_MODE,
                                         "SAFE_MODE", now))

    def enter_safe_mode(self, now: int, reason: str) -> None:
        """Zero the motors, terminate all pending commands, latch SAFE mode.

        Idempotent: re-entry on consecutive unsafe ticks only resets the
        exit hold timer.
        """
        if self.device.state.mode is not Mode.SAFE:
            self.device.set_mode(Mode.SAFE)
            self._emit("INSTINCT", "safe_mode_entered", {"reason": reason})
            self._log_memory(now, {"event": "safe_mode_entered", "reason": reason})
        self.safe_streak = 0
        self.device.stop()
        self._cancel_pending(now)

    # -- command intake ----------------------------------------------------

    def _poll_commands(self, now: int) -> None:
        for cmd in self.command_channel.poll(now):
            try:
                cmd.validate(self.device.robot.v_wheel_max)
            except MalformedCommandError as exc:
                self._emit("INSTINCT", "command_malformed",
                           {"id": cmd.id, "reason": str(exc)})
                verdict = SafetyVerdict(False, -math.inf,
                                        VerdictReason.LIMIT_EXCEEDED)
                self._send_feedback(Feedback(cmd.id, FeedbackStatus.REFUSED,
                                             "MALFORMED", now, verdict))
                continue
            self._emit("INSTINCT", "command_received", cmd.to_payload())
            self._log_memory(now, {"event": "command_received", "id": cmd.id,
                                   "kind": cmd.kind.value})
            self.queue.append(cmd)
            self._send_feedback(Feedback(cmd.id, FeedbackStatus.ACCEPTED,
                                         "QUEUED", now))

    def refuse(self, low: LowCommand, verdict: SafetyVerdict, now: int) -> None:
        """Reject an unsafe primitive: nothing reaches the device, the parent
        command terminates, and the verdict rides along in the feedback."""
        self._emit("INSTINCT", "refusal", {
            "low_id": low.id,
            "parent_id": "SURVIVAL" if low.parent_id is None else low.parent_id,
            "reason": verdict.reason.value,
            "predicted_min_clearance": verdict.predicted_min_clearance,
        })
        self._log_memory(now, {"event": "refusal", "low_id": low.id,
                               "parent_id": low.parent_id,
                               "reason": verdict.reason.value})
        if low.parent_id is not None:
            self._send_feedback(Feedback(low.parent_id, FeedbackStatus.REFUSED,
                                         verdict.reason.value, now, verdict))

    def _execute(self, low: LowCommand, now: int) -> None:
        parent = "SURVIVAL" if low.parent_id is None else low.parent_id
        if low.kind is LowKind.SET_WHEELS:
            self.device.set_wheel_command(low.v_left, low.v_right)
            self._emit("DEVICE", "exec_wheels", {
                "low_id": low.id, "parent_id": parent,
                "v_left": low.v_left, "v_right": low.v_right,
                "duration_ticks": low.duration_ticks,
            })
        elif low.kind is LowKind.STOP_ALL:
            self.device.stop()
            self._emit("DEVICE", "exec_stop", {"low_id": low.id,
                                               "parent_id": parent})
        else:  # ACQUIRE_SCAN: serve from this tick's sweep, summary now
            self._emit("DEVICE", "exec_scan", {"low_id": low.id,
                                               "parent_id": parent})
            summary = summarize(self._scan, self.device.state)
            self.data_channel.transmit(summary, now)

    # -- the tick ----------------------------------------------------------

    def tick(self, now: int) -> None:
        """One pass of the fixed loop; see the module docstring for order."""
        self.recorder.begin_tick(now)  # no-op when the runner already did
        # (1) acquire scan + state; rebuild the per-scan belief
        scan = self.device.acquire_scan(now)
        self._scan = scan
        state = self.device.state
        self.belief = ObstacleBelief.from_scan(scan, state.pose.x, state.pose.y)
        front_min = front_min_range(scan)
        if state.load >= self.params.overload_threshold:
            self.overload_ticks += 1
        else:
            self.overload_ticks = 0

        # (2) device status
        safe, reason = self.device_status(state, front_min)
        self._emit("INSTINCT", "status", {
            "safe": safe, "reason": reason, "mode": state.mode.value,
            "front_min": front_min,
        })

        if not safe:
            # (3) unsafe: safe mode, feedback, skip command handling
            self.enter_safe_mode(now, reason)
            self._send_feedback(Feedback(None, FeedbackStatus.SAFE_MODE,
                                         reason, now))
            self._send_data(scan, now)
            return

        if state.mode is Mode.SAFE:
            # holding period: stay stopped until safe long enough
            self.safe_streak += 1
            if self.safe_streak >= self.params.safe_hold_ticks:
                self.device.set_mode(Mode.NORMAL)
                self._emit("INSTINCT", "safe_mode_exited", {})
                self._log_memory(now, {"event": "safe_mode_exited"})
            else:
                self.device.stop()
            self._answer_while_safe_mode(now)
            self._send_data(scan, now)
            return

        # (4) survival tasks: speed governor and idle roaming
        scale = self.governor_scale(front_min)
        if scale < 1.0:
            self._emit("INSTINCT", "governor", {"scale": scale,
                                                "front_min": front_min})
        executed_motion = False
        if self.params.roaming and self.active is None and not self.queue:
            executed_motion = self._roam(scan, state, scale, now)

        # (5) poll high commands; adopt the next one FIFO
        self._poll_commands(now)
        if self.active is None and self.queue:
            self.active = _ActiveCommand(self.queue.popleft())

        # (6) convert + safety check + execute or refuse
        if self.active is not None:
            executed_motion = self._drive_active(state, scale, now) or executed_motion

        if not executed_motion:
            self.device.stop()

        # (7) summarized data every tick
        self._send_data(scan, now)

    def _answer_while_safe_mode(self, now: int) -> None:
        for cmd in self.command_channel.poll(now):
            self._emit("INSTINCT", "command_received", cmd.to_payload())
            self._send_feedback(Feedback(cmd.id, FeedbackStatus.SAFE_MODE,
                                         "SAFE_MODE", now))

    def _roam(self, scan: LidarScan, state: RobotState, scale: float,
              now: int) -> bool:
        summary = summarize(scan, state)
        vl, vr = roam_intent(summary, self.roam_rng, self.device.robot,
                             self.params, scan.max_range)
        low = LowCommand(self._next_low_id(), None, LowKind.SET_WHEELS,
                         vl * scale, vr * scale)
        verdict = self.safety_check(low, now)
        if verdict.safe:
            self._emit("INSTINCT", "roam", {"low_id": low.id,
                                            "v_left": low.v_left,
                                            "v_right": low.v_right})
            self._execute(low, now)
            return True
        self._emit("INSTINCT", "roam_refused",
                   {"low_id": low.id, "reason": verdict.reason.value})
        return False

    def _drive_active(self, state: RobotState, scale: float, now: int) -> bool:
        active = self.active
        intent, done, active.waypoint_idx = convert(
            active.cmd, state.pose, self.device.robot, self.params,
            active.waypoint_idx,
        )
        if intent is None:
            if done:
                self._send_feedback(Feedback(active.cmd.id,
                                             FeedbackStatus.COMPLETED,
                                             "DONE", now))
                self.active = None
            return False
        if intent[0] == _SET_WHEELS:
            low = LowCommand(self._next_low_id(), active.cmd.id,
                             LowKind.SET_WHEELS,
                             intent[1] * scale, intent[2] * scale)
        elif intent[0] == _STOP_ALL:
            low = LowCommand(self._next_low_id(), active.cmd.id, LowKind.STOP_ALL)
        else:
            low = LowCommand(self._next_low_id(), active.cmd.id,
                             LowKind.ACQUIRE_SCAN)
        verdict = self.safety_check(low, now)
        self._emit("INSTINCT", "verdict", {
            "low_id": low.id, "parent_id": active.cmd.id, "safe": verdict.safe,
            "predicted_min_clearance": verdict.predicted_min_clearance,
            "reason": verdict.reason.value,
        })
        if not verdict.safe:
            self.refuse(low, verdict, now)
            self.active = None
            return False
        self._execute(low, now)
        if done:
            self._send_feedback(Feedback(active.cmd.id, FeedbackStatus.COMPLETED,
                                         "DONE", now))
            self.active = None
        else:
            self._send_feedback(Feedback(active.cmd.id, FeedbackStatus.EXECUTING,
                                         "EXECUTING", now))
        return low.kind is LowKind.SET_WHEELS

    def _send_data(self, scan: LidarScan, now: int) -> None:
        summary = summarize(scan, self.device.state)
        self.data_channel.transmit(summary, now)
