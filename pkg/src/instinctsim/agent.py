"""The decision layer: task planning over summarized data and feedback.

One agent loop drives four stages per wake-up (interaction: poll tasks;
perception: poll feedback and summaries; self-reflection; planning). The
planner backend is pluggable: a deterministic rule planner, a fault injector
that replaces commands with plausible-but-hostile ones at a seeded rate, and
an optional adapter for a chat-completion HTTP endpoint. The agent talks to
the rest of the system only through channels and may die at any time without
affecting the safety layer.
"""

from __future__ import annotations

import json
import math
import os
import random
from dataclasses import dataclass, field
from enum import Enum

from .bus import Channel, MemoryLog, MemoryRecord
from .config import AgentParams, RobotParams
from .messages import (
    Feedback,
    FeedbackStatus,
    HighCommand,
    HighKind,
    MalformedCommandError,
    ScanSummary,
    sector_angle,
    sector_index,
)
from .trace import TraceRecorder
from .world import wrap_angle

N_SECTORS = 8


class GoalKind(Enum):
    GOTO = "GOTO"
    PATROL = "PATROL"
    HOLD = "HOLD"


class TaskState(Enum):
    PENDING = "PENDING"
    ACTIVE = "ACTIVE"
    COMPLETED = "COMPLETED"
    BLOCKED = "BLOCKED"


@dataclass
class Task:
    id: int
    kind: GoalKind
    x: float | None = None
    y: float | None = None
    waypoints: tuple[tuple[float, float], ...] = ()
    state: TaskState = TaskState.PENDING
    attempts: int = 0
    waypoint_idx: int = 0

    def goal_point(self) -> tuple[float, float] | None:
        if self.kind is GoalKind.GOTO:
            return (self.x, self.y)
        if self.kind is GoalKind.PATROL and self.waypoints:
            idx = min(self.waypoint_idx, len(self.waypoints) - 1)
            return self.waypoints[idx]
        return None

    def to_payload(self) -> dict:
        out: dict = {"id": self.id, "kind": self.kind.value,
                     "state": self.state.value}
        if self.kind is GoalKind.GOTO:
            out["x"] = self.x
            out["y"] = self.y
        elif self.kind is GoalKind.PATROL:
            out["waypoints"] = [list(w) for w in self.waypoints]
        return out


@dataclass
class ReflectionNote:
    """What the agent has learned from refusals since the last success."""

    blocked_bearings: dict[int, int] = field(default_factory=dict)  # sector -> expiry tick
    consecutive_failures: int = 0
    last_refusal_reason: str | None = None

    def expire(self, now: int) -> None:
        self.blocked_bearings = {
            k: t for k, t in self.blocked_bearings.items() if t > now
        }

    def clear(self) -> None:
        self.blocked_bearings.clear()
        self.consecutive_failures = 0
        self.last_refusal_reason = None


def self_reflection(
    notes: ReflectionNote,
    feedback: list[Feedback],
    summary: ScanSummary,
    sent_commands: dict[int, HighCommand],
    now: int,
    params: AgentParams,
) -> ReflectionNote:
    """Fold terminal feedback into the notes.

    A refusal for a predicted obstacle blocks the commanded bearing's sector
    until an expiry; any refusal counts toward the consecutive-failure cap;
    a completion wipes the slate.
    """
    for fb in feedback:
        if fb.status is FeedbackStatus.COMPLETED:
            notes.clear()
        elif fb.status is FeedbackStatus.REFUSED:
            notes.consecutive_failures += 1
            notes.last_refusal_reason = fb.reason
            cmd = sent_commands.get(fb.command_id)
            if fb.reason == "OBSTACLE_PREDICTED" and cmd is not None:
                target = _command_target(cmd)
                if target is not None:
                    bearing = wrap_angle(
                        math.atan2(target[1] - summary.pose.y,
                                   target[0] - summary.pose.x)
                        - summary.pose.theta
                    )
                    sector = sector_index(bearing)
                    notes.blocked_bearings[sector] = now + params.blocked_expiry_ticks
    return notes


def _command_target(cmd: HighCommand) -> tuple[float, float] | None:
    if cmd.kind is HighKind.MOVE_TO:
        return (cmd.x, cmd.y)
    if cmd.kind is HighKind.FOLLOW_PATH and cmd.waypoints:
        return cmd.waypoints[0]
    return None


def plan_rule(
    task: Task,
    notes: ReflectionNote,
    summary: ScanSummary,
    params: AgentParams,
    next_id,
    now: int,
) -> list[HighCommand]:
    """Deterministic planner: go straight at the goal unless that bearing is
    blocked, else detour one step along the nearest unblocked sector. At
    most one motion command is ever in flight.

    A sector only qualifies for a detour if its own returns leave room for
    the waypoint (no point planning a hop into a wall), and detours go out
    speed-capped: after a refusal the cautious retry is the whole point of
    the reflection loop.
    """
    if task.kind is GoalKind.HOLD:
        return [HighCommand(next_id(), HighKind.STOP, now)]
    goal = task.goal_point()
    if goal is None:
        return []
    pose = summary.pose
    bearing = wrap_angle(math.atan2(goal[1] - pose.y, goal[0] - pose.x)
                         - pose.theta)
    desired = sector_index(bearing)
    if desired not in notes.blocked_bearings:
        return [HighCommand(next_id(), HighKind.MOVE_TO, now,
                            x=goal[0], y=goal[1])]
    # detour: nearest fitting unblocked sector by angular distance, then index
    fit_range = params.detour_distance + params.detour_fit_margin
    candidates = sorted(
        (k for k in range(N_SECTORS)
         if k not in notes.blocked_bearings
         and summary.sector_min[k] >= fit_range),
        key=lambda k: (min((k - desired) % N_SECTORS,
                           (desired - k) % N_SECTORS), k),
    )
    if not candidates:
        return []  # fully boxed in: wait for expiries
    direction = pose.theta + sector_angle(candidates[0])
    wx = pose.x + params.detour_distance * math.cos(direction)
    wy = pose.y + params.detour_distance * math.sin(direction)
    return [HighCommand(next_id(), HighKind.MOVE_TO, now, x=wx, y=wy,
                        speed=params.detour_speed)]


def hallucinate_wrap(
    commands: list[HighCommand],
    probability: float,
    rng: random.Random,
    summary: ScanSummary | None,
    bounds_span: tuple[float, float, float, float],
    robot: RobotParams,
    now: int,
    lidar_max_range: float = 5.0,
) -> list[tuple[HighCommand, HighCommand | None]]:
    """Independently replace each command with an adversarial one at the
    given seeded rate. Returns (command, original-if-replaced) pairs.

    Replacements stay wire-valid (finite targets, legal speed) so only the
    safety layer can tell them apart from honest plans: a drive into an
    occupied direction, a target far outside the bounds, or a full-speed
    run at the nearest obstacle.
    """
    if not 0.0 <= probability <= 1.0:
        raise ValueError("probability must be in [0, 1]")
    out: list[tuple[HighCommand, HighCommand | None]] = []
    for cmd in commands:
        if probability <= 0.0 or rng.random() >= probability:
            out.append((cmd, None))
            continue
        replacement = _adversarial_command(cmd, rng, summary, bounds_span,
                                           robot, now, lidar_max_range)
        out.append((replacement, cmd))
    return out


def _adversarial_command(
    cmd: HighCommand,
    rng: random.Random,
    summary: ScanSummary | None,
    bounds_span: tuple[float, float, float, float],
    robot: RobotParams,
    now: int,
    lidar_max_range: float,
) -> HighCommand:
    x0, y0, x1, y1 = bounds_span
    occupied: list[int] = []
    if summary is not None:
        occupied = [k for k in range(N_SECTORS)
                    if summary.sector_min[k] < lidar_max_range - 1e-9]
    mode = rng.choice(("into_obstacle", "out_of_bounds", "flank_speed"))
    if mode != "out_of_bounds" and summary is not None and occupied:
        if mode == "into_obstacle":
            sector = rng.choice(occupied)
            speed = None
        else:  # flank_speed at the nearest occupied sector
            sector = min(occupied, key=lambda k: summary.sector_min[k])
            speed = robot.v_wheel_max
        reach = summary.sector_min[sector] + 0.5
        direction = summary.pose.theta + sector_angle(sector)
        return HighCommand(cmd.id, HighKind.MOVE_TO, now,
                           x=summary.pose.x + reach * math.cos(direction),
                           y=summary.pose.y + reach * math.sin(direction),
                           speed=speed)
    # far out of bounds but still finite
    span = max(x1 - x0, y1 - y0)
    angle = rng.uniform(-math.pi, math.pi)
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    return HighCommand(cmd.id, HighKind.MOVE_TO, now,
                       x=cx + 3.0 * span * math.cos(angle),
                       y=cy + 3.0 * span * math.sin(angle))


def parse_llm_commands(
    response_text: str, v_wheel_max: float, next_id, now: int
) -> list[HighCommand]:
    """Parse a structured command array out of model output.

    The first JSON array found is taken; every element must be an object
    with a known "kind" and in-range parameters. Any invalid element rejects
    the whole batch (raise, never silently clamp).
    """
    start = response_text.find("[")
    end = response_text.rfind("]")
    if start < 0 or end <= start:
        raise MalformedCommandError("no JSON array in response")
    try:
        raw = json.loads(response_text[start:end + 1])
    except json.JSONDecodeError as exc:
        raise MalformedCommandError(f"unparseable command array: {exc}") from exc
    if not isinstance(raw, list):
        raise MalformedCommandError("command payload is not an array")
    commands: list[HighCommand] = []
    for item in raw:
        if not isinstance(item, dict):
            raise MalformedCommandError(f"command entry is not an object: {item!r}")
        kind_name = item.get("kind")
        try:
            kind = HighKind(kind_name)
        except ValueError:
            raise MalformedCommandError(f"unknown command kind: {kind_name!r}")
        waypoints = item.get("waypoints")
        cmd = HighCommand(
            next_id(), kind, now,
            x=_num(item.get("x")), y=_num(item.get("y")),
            theta=_num(item.get("theta")), speed=_num(item.get("speed")),
            waypoints=tuple((float(a), float(b)) for a, b in waypoints)
            if waypoints else None,
        )
        cmd.validate(v_wheel_max)
        commands.append(cmd)
    return commands


def _num(value) -> float | None:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedCommandError(f"expected a number: {value!r}")
    return float(value)


_COMMAND_SCHEMA_PROMPT = """\
You control a differential-drive robot through a safety layer. Reply with a
JSON array of command objects only. Supported kinds:
  {"kind": "MOVE_TO", "x": <m>, "y": <m>, "speed": <optional m/s>}
  {"kind": "ROTATE_TO", "theta": <rad>}
  {"kind": "FOLLOW_PATH", "waypoints": [[x, y], ...]}
  {"kind": "STOP"}
  {"kind": "QUERY_STATUS"}
Speeds must lie in (0, %s]. Unsafe commands will be refused by the robot.
"""


class LlmBackend:
    """Adapter for a chat-completion style HTTP endpoint.

    Endpoint and key come from the environment (INSTINCTSIM_LLM_URL,
    INSTINCTSIM_LLM_KEY); the transport is injectable for tests. Strictly
    optional: never used by the acceptance suite.
    """

    def __init__(self, model: str = "default", url: str | None = None,
                 api_key: str | None = None, timeout: float = 10.0,
                 post=None) -> None:
        self.model = model
        self.url = url or os.environ.get("INSTINCTSIM_LLM_URL", "")
        self.api_key = api_key or os.environ.get("INSTINCTSIM_LLM_KEY", "")
        self.timeout = timeout
        if post is None:
            import requests

            post = requests.post
        self._post = post

    def complete(self, v_wheel_max: float, task: Task,
                 summary: ScanSummary) -> str:
        if not self.url:
            raise RuntimeError("INSTINCTSIM_LLM_URL is not configured")
        body = {
            "model": self.model,
            "messages": [
                {"role": "system",
                 "content": _COMMAND_SCHEMA_PROMPT % v_wheel_max},
                {"role": "user",
                 "content": json.dumps({"task": task.to_payload(),
                                        "summary": summary.to_payload()})},
            ],
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc: Exception | None = None
        for _ in range(2):  # single retry
            try:
                resp = self._post(self.url, json=body, headers=headers,
                                  timeout=self.timeout)
                resp.raise_for_status()
                data = resp.json()
                return data["choices"][0]["message"]["content"]
            except Exception as exc:  # noqa: BLE001 - adapter boundary
                last_exc = exc
        raise RuntimeError(f"LLM endpoint failed: {last_exc}")


class DecisionAgent:
    """Algorithm loop: tasks in, feedback/summaries in, high commands out."""

    def __init__(
        self,
        task_channel: Channel,
        command_channel: Channel,
        feedback_channel: Channel,
        data_channel: Channel,
        memory: MemoryLog,
        recorder: TraceRecorder,
        robot: RobotParams,
        params: AgentParams,
        bounds_span: tuple[float, float, float, float],
        backend: str = "rule",
        hallucination_probability: float = 0.0,
        hallucination_rng: random.Random | None = None,
        llm: LlmBackend | None = None,
        lidar_max_range: float = 5.0,
    ) -> None:
        if backend not in ("rule", "hallucinate", "llm"):
            raise ValueError(f"unknown backend: {backend}")
        self.task_channel = task_channel
        self.command_channel = command_channel
        self.feedback_channel = feedback_channel
        self.data_channel = data_channel
        self.memory = memory
        self.recorder = recorder
        self.robot = robot
        self.params = params
        self.bounds_span = bounds_span
        self.backend = backend
        self.hallucination_probability = hallucination_probability
        self.hallucination_rng = hallucination_rng or random.Random(0)
        self.llm = llm
        self.lidar_max_range = lidar_max_range
        self.tasks: list[Task] = []
        self.notes = ReflectionNote()
        self.summary: ScanSummary | None = None
        self.sent_commands: dict[int, HighCommand] = {}
        self.in_flight: int | None = None
        self._cmd_id = 0

    def _next_cmd_id(self) -> int:
        self._cmd_id += 1
        return self._cmd_id

    def all_tasks_terminal(self) -> bool:
        return bool(self.tasks) and all(
            t.state in (TaskState.COMPLETED, TaskState.BLOCKED)
            for t in self.tasks
        )

    def _current_task(self) -> Task | None:
        for task in self.tasks:
            if task.state in (TaskState.PENDING, TaskState.ACTIVE):
                return task
        return None

    def tick(self, now: int) -> None:
        # (1) interaction: new tasks from the external layer, FIFO
        for task in self.task_channel.poll(now):
            self.tasks.append(task)
        # (2) perception: feedback and the freshest summary
        feedback = self.feedback_channel.poll(now)
        for summary in self.data_channel.poll(now):
            self.summary = summary
        if self.summary is None:
            return  # nothing sensed yet: no blind planning
        # (3) self-reflection
        self.notes.expire(now)
        self_reflection(self.notes, feedback, self.summary,
                        self.sent_commands, now, self.params)
        task = self._current_task()
        self._apply_terminal_feedback(feedback, task, now)
        task = self._current_task()
        if task is None:
            return
        if task.state is TaskState.PENDING:
            task.state = TaskState.ACTIVE
            self.recorder.emit("DECISION", "task_activated", task.to_payload())
        # (4) plan — only with no motion command in flight
        if self.in_flight is not None:
            return
        commands = self._plan(task, now)
        # (5) transmit
        for cmd, original in commands:
            if original is not None:
                self.recorder.emit("DECISION", "hallucination", {
                    "command_id": cmd.id,
                    "original": original.to_payload(),
                    "replacement": cmd.to_payload(),
                })
            self.sent_commands[cmd.id] = cmd
            self.recorder.emit("DECISION", "command_sent", cmd.to_payload())
            self.memory.record(MemoryRecord(tick=now, origin_layer="DECISION",
                                            payload={"event": "command_sent",
                                                     "id": cmd.id}))
            if cmd.kind in (HighKind.MOVE_TO, HighKind.ROTATE_TO,
                            HighKind.FOLLOW_PATH, HighKind.STOP):
                self.in_flight = cmd.id
            task.attempts += 1
            self.command_channel.transmit(cmd, now)

    def _plan(self, task: Task, now: int
              ) -> list[tuple[HighCommand, HighCommand | None]]:
        if self.backend == "llm":
            planned = self._plan_llm(task, now)
        else:
            planned = plan_rule(task, self.notes, self.summary, self.params,
                                self._next_cmd_id, now)
        if self.backend == "hallucinate":
            return hallucinate_wrap(planned, self.hallucination_probability,
                                    self.hallucination_rng, self.summary,
                                    self.bounds_span, self.robot, now,
                                    self.lidar_max_range)
        return [(cmd, None) for cmd in planned]

    def _plan_llm(self, task: Task, now: int) -> list[HighCommand]:
        try:
            text = self.llm.complete(self.robot.v_wheel_max, task, self.summary)
            return parse_llm_commands(text, self.robot.v_wheel_max,
                                      self._next_cmd_id, now)
        except (MalformedCommandError, RuntimeError) as exc:
            self.recorder.emit("DECISION", "plan_rejected", {"reason": str(exc)})
            task.attempts += 1
            return []

    def _apply_terminal_feedback(self, feedback: list[Feedback],
                                 task: Task | None, now: int) -> None:
        for fb in feedback:
            if fb.command_id is None or not fb.terminal:
                continue
            if fb.command_id == self.in_flight:
                self.in_flight = None
            if task is None:
                continue
            if fb.status is FeedbackStatus.COMPLETED:
                self._advance_task(task, now)
            elif fb.status is FeedbackStatus.REFUSED:
                if self.notes.consecutive_failures >= \
                        self.params.max_consecutive_failures:
                    task.state = TaskState.BLOCKED
                    self.recorder.emit("DECISION", "task_blocked",
                                       task.to_payload())
                    self.memory.record(MemoryRecord(
                        tick=now, origin_layer="DECISION",
                        payload={"event": "task_blocked", "id": task.id}))

    def _advance_task(self, task: Task, now: int) -> None:
        pose = self.summary.pose
        if task.kind is GoalKind.HOLD:
            task.state = TaskState.COMPLETED
        elif task.kind is GoalKind.GOTO:
            if math.hypot(task.x - pose.x, task.y - pose.y) <= \
                    self.params.goal_tolerance:
                task.state = TaskState.COMPLETED
        elif task.kind is GoalKind.PATROL:
            goal = task.goal_point()
            if goal is not None and math.hypot(
                    goal[0] - pose.x, goal[1] - pose.y
            ) <= self.params.goal_tolerance:
                task.waypoint_idx += 1
                if task.waypoint_idx >= len(task.waypoints):
                    task.state = TaskState.COMPLETED  # single pass
        if task.state is TaskState.COMPLETED:
            self.recorder.emit("DECISION", "task_completed", task.to_payload())
            self.memory.record(MemoryRecord(tick=now, origin_layer="DECISION",
                                            payload={"event": "task_completed",
                                                     "id": task.id}))
