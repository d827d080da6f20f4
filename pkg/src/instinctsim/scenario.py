"""Scenario files: strict JSON schema, defaults, round-trippable objects.

A scenario pins everything a run needs: the world, the robot start, tasks
with issue ticks, agent backend and cadence, channel properties, seeds, and
run length. Unknown keys are rejected by name so typos cannot silently fall
back to defaults.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

from .config import (
    AgentParams,
    ChannelParams,
    InstinctParams,
    LidarParams,
    PHYSICS_DT,
    RobotParams,
)
from .world import Circle, Pose2D, Rect, WorldModel, clearance


class ScenarioError(ValueError):
    """Scenario file rejected; the message names the offending field."""


@dataclass(frozen=True)
class TaskSpec:
    issue_tick: int
    kind: str                       # GOTO | PATROL | HOLD
    x: float | None = None
    y: float | None = None
    waypoints: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class AgentSpec:
    backend: str = "rule"           # rule | hallucinate | llm
    period_ticks: int = 50
    hallucination_probability: float = 0.0
    kill_tick: int | None = None
    llm_model: str = "default"


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    seed: int = 0
    ticks: int = 6000
    dt: float = PHYSICS_DT
    world: WorldModel = field(
        default_factory=lambda: WorldModel(bounds=Rect(-4.0, -4.0, 4.0, 4.0))
    )
    start: Pose2D = Pose2D(0.0, 0.0, 0.0)
    robot: RobotParams = RobotParams()
    lidar: LidarParams = LidarParams()
    instinct: InstinctParams = InstinctParams()
    agent: AgentSpec = AgentSpec()
    channels: ChannelParams = ChannelParams()
    tasks: tuple[TaskSpec, ...] = ()

    def to_dict(self) -> dict:
        w = self.world
        return {
            "name": self.name,
            "seed": self.seed,
            "ticks": self.ticks,
            "dt": self.dt,
            "world": {
                "bounds": {"min": [w.bounds.x0, w.bounds.y0],
                           "max": [w.bounds.x1, w.bounds.y1]},
                "circles": [{"center": [c.cx, c.cy], "radius": c.radius}
                            for c in w.circles],
                "rects": [{"min": [r.x0, r.y0], "max": [r.x1, r.y1]}
                          for r in w.rects],
            },
            "start": {"x": self.start.x, "y": self.start.y,
                      "theta": self.start.theta},
            "robot": {"radius": self.robot.radius, "axle": self.robot.axle,
                      "v_wheel_max": self.robot.v_wheel_max,
                      "a_max": self.robot.a_max},
            "lidar": {"beams": self.lidar.beams,
                      "max_range": self.lidar.max_range,
                      "noise_std": self.lidar.noise_std},
            "instinct": {
                "d_min": self.instinct.d_min,
                "d_stop": self.instinct.d_stop,
                "d_slow": self.instinct.d_slow,
                "eps_pos": self.instinct.eps_pos,
                "eps_heading": self.instinct.eps_heading,
                "k_d": self.instinct.k_d,
                "k_theta": self.instinct.k_theta,
                "omega_max": self.instinct.omega_max,
                "dt_pred": self.instinct.dt_pred,
                "stale_limit": self.instinct.stale_limit,
                "safe_hold_ticks": self.instinct.safe_hold_ticks,
                "overload_threshold": self.instinct.overload_threshold,
                "overload_window": self.instinct.overload_window,
                "roaming": self.instinct.roaming,
            },
            "agent": {
                "backend": self.agent.backend,
                "period_ticks": self.agent.period_ticks,
                "hallucination_probability":
                    self.agent.hallucination_probability,
                "kill_tick": self.agent.kill_tick,
                "llm_model": self.agent.llm_model,
            },
            "channels": {
                "command_latency": self.channels.command_latency,
                "feedback_latency": self.channels.feedback_latency,
                "data_latency": self.channels.data_latency,
                "task_latency": self.channels.task_latency,
                "command_drop": self.channels.command_drop,
                "feedback_drop": self.channels.feedback_drop,
                "data_drop": self.channels.data_drop,
            },
            "tasks": [_task_to_dict(t) for t in self.tasks],
        }


def _task_to_dict(task: TaskSpec) -> dict:
    out: dict = {"issue_tick": task.issue_tick, "goal": {"kind": task.kind}}
    if task.kind == "GOTO":
        out["goal"]["x"] = task.x
        out["goal"]["y"] = task.y
    elif task.kind == "PATROL":
        out["goal"]["waypoints"] = [list(w) for w in task.waypoints]
    return out


def _require_keys(raw: dict, allowed: set[str], where: str) -> None:
    for key in raw:
        if key not in allowed:
            raise ScenarioError(f"unknown field {where}.{key!r}")


def _number(raw: dict, key: str, default: float, where: str) -> float:
    value = raw.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where}.{key} must be a number: {value!r}")
    if not math.isfinite(value):
        raise ScenarioError(f"{where}.{key} must be finite")
    return float(value)


def _integer(raw: dict, key: str, default: int, where: str) -> int:
    value = raw.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{where}.{key} must be an integer: {value!r}")
    return value


def _pair(value, where: str) -> tuple[float, float]:
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or any(isinstance(v, bool) or not isinstance(v, (int, float))
                   for v in value)):
        raise ScenarioError(f"{where} must be a [x, y] pair: {value!r}")
    return float(value[0]), float(value[1])


def _parse_world(raw: dict) -> WorldModel:
    _require_keys(raw, {"bounds", "circles", "rects"}, "world")
    if "bounds" not in raw:
        raise ScenarioError("missing required field world.bounds")
    braw = raw["bounds"]
    _require_keys(braw, {"min", "max"}, "world.bounds")
    if "min" not in braw or "max" not in braw:
        raise ScenarioError("world.bounds requires min and max")
    bmin = _pair(braw["min"], "world.bounds.min")
    bmax = _pair(braw["max"], "world.bounds.max")
    circles = []
    for i, craw in enumerate(raw.get("circles", [])):
        where = f"world.circles[{i}]"
        _require_keys(craw, {"center", "radius"}, where)
        if "center" not in craw or "radius" not in craw:
            raise ScenarioError(f"{where} requires center and radius")
        cx, cy = _pair(craw["center"], f"{where}.center")
        circles.append(Circle(cx, cy, _number(craw, "radius", 0.0, where)))
    rects = []
    for i, rraw in enumerate(raw.get("rects", [])):
        where = f"world.rects[{i}]"
        _require_keys(rraw, {"min", "max"}, where)
        if "min" not in rraw or "max" not in rraw:
            raise ScenarioError(f"{where} requires min and max")
        rmin = _pair(rraw["min"], f"{where}.min")
        rmax = _pair(rraw["max"], f"{where}.max")
        rects.append(Rect(rmin[0], rmin[1], rmax[0], rmax[1]))
    try:
        return WorldModel(
            bounds=Rect(bmin[0], bmin[1], bmax[0], bmax[1]),
            circles=tuple(circles),
            rects=tuple(rects),
        )
    except ValueError as exc:
        raise ScenarioError(f"world: {exc}") from exc


def _parse_tasks(raw: list) -> tuple[TaskSpec, ...]:
    tasks = []
    for i, traw in enumerate(raw):
        where = f"tasks[{i}]"
        _require_keys(traw, {"issue_tick", "goal"}, where)
        if "goal" not in traw:
            raise ScenarioError(f"missing required field {where}.goal")
        graw = traw["goal"]
        _require_keys(graw, {"kind", "x", "y", "waypoints"}, f"{where}.goal")
        kind = graw.get("kind")
        if kind not in ("GOTO", "PATROL", "HOLD"):
            raise ScenarioError(f"{where}.goal.kind unknown: {kind!r}")
        issue = _integer(traw, "issue_tick", 0, where)
        if issue < 0:
            raise ScenarioError(f"{where}.issue_tick must be >= 0")
        if kind == "GOTO":
            if "x" not in graw or "y" not in graw:
                raise ScenarioError(f"{where}.goal requires x and y")
            tasks.append(TaskSpec(issue, kind,
                                  x=_number(graw, "x", 0.0, f"{where}.goal"),
                                  y=_number(graw, "y", 0.0, f"{where}.goal")))
        elif kind == "PATROL":
            wps = graw.get("waypoints")
            if not wps:
                raise ScenarioError(f"{where}.goal requires waypoints")
            tasks.append(TaskSpec(
                issue, kind,
                waypoints=tuple(_pair(w, f"{where}.goal.waypoints[{j}]")
                                for j, w in enumerate(wps)),
            ))
        else:
            tasks.append(TaskSpec(issue, kind))
    return tuple(tasks)


_TOP_KEYS = {"name", "seed", "ticks", "dt", "world", "start", "robot",
             "lidar", "instinct", "agent", "channels", "tasks"}


def parse_scenario(raw: dict) -> Scenario:
    """Validate a raw scenario dict and fill every default."""
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object")
    _require_keys(raw, _TOP_KEYS, "scenario")
    if "world" not in raw:
        raise ScenarioError("missing required field scenario.world")
    world = _parse_world(raw["world"])

    sraw = raw.get("start", {})
    _require_keys(sraw, {"x", "y", "theta"}, "start")
    start = Pose2D(_number(sraw, "x", 0.0, "start"),
                   _number(sraw, "y", 0.0, "start"),
                   _number(sraw, "theta", 0.0, "start"))
    if not world.bounds.contains(start.x, start.y):
        raise ScenarioError("start must lie inside world.bounds")

    rraw = raw.get("robot", {})
    _require_keys(rraw, {"radius", "axle", "v_wheel_max", "a_max"}, "robot")
    d = RobotParams()
    robot = RobotParams(
        radius=_number(rraw, "radius", d.radius, "robot"),
        axle=_number(rraw, "axle", d.axle, "robot"),
        v_wheel_max=_number(rraw, "v_wheel_max", d.v_wheel_max, "robot"),
        a_max=_number(rraw, "a_max", d.a_max, "robot"),
    )
    for fname in ("radius", "axle", "v_wheel_max", "a_max"):
        if getattr(robot, fname) <= 0.0:
            raise ScenarioError(f"robot.{fname} must be positive")

    lraw = raw.get("lidar", {})
    _require_keys(lraw, {"beams", "max_range", "noise_std"}, "lidar")
    dl = LidarParams()
    lidar = LidarParams(
        beams=_integer(lraw, "beams", dl.beams, "lidar"),
        max_range=_number(lraw, "max_range", dl.max_range, "lidar"),
        noise_std=_number(lraw, "noise_std", dl.noise_std, "lidar"),
    )
    if lidar.beams < 4:
        raise ScenarioError("lidar.beams must be >= 4")
    if lidar.max_range <= 0.0:
        raise ScenarioError("lidar.max_range must be positive")
    if lidar.noise_std < 0.0:
        raise ScenarioError("lidar.noise_std must be >= 0")

    iraw = raw.get("instinct", {})
    ikeys = {"d_min", "d_stop", "d_slow", "eps_pos", "eps_heading", "k_d",
             "k_theta", "omega_max", "dt_pred", "stale_limit",
             "safe_hold_ticks", "overload_threshold", "overload_window",
             "roaming"}
    _require_keys(iraw, ikeys, "instinct")
    di = InstinctParams()
    roaming = iraw.get("roaming", di.roaming)
    if not isinstance(roaming, bool):
        raise ScenarioError("instinct.roaming must be a boolean")
    instinct = InstinctParams(
        d_min=_number(iraw, "d_min", di.d_min, "instinct"),
        d_stop=_number(iraw, "d_stop", di.d_stop, "instinct"),
        d_slow=_number(iraw, "d_slow", di.d_slow, "instinct"),
        eps_pos=_number(iraw, "eps_pos", di.eps_pos, "instinct"),
        eps_heading=_number(iraw, "eps_heading", di.eps_heading, "instinct"),
        k_d=_number(iraw, "k_d", di.k_d, "instinct"),
        k_theta=_number(iraw, "k_theta", di.k_theta, "instinct"),
        omega_max=_number(iraw, "omega_max", di.omega_max, "instinct"),
        dt_pred=_number(iraw, "dt_pred", di.dt_pred, "instinct"),
        stale_limit=_integer(iraw, "stale_limit", di.stale_limit, "instinct"),
        safe_hold_ticks=_integer(iraw, "safe_hold_ticks", di.safe_hold_ticks,
                                 "instinct"),
        overload_threshold=_number(iraw, "overload_threshold",
                                   di.overload_threshold, "instinct"),
        overload_window=_integer(iraw, "overload_window", di.overload_window,
                                 "instinct"),
        roaming=roaming,
    )
    if not instinct.d_min < instinct.d_stop < instinct.d_slow:
        raise ScenarioError("instinct requires d_min < d_stop < d_slow")
    if instinct.dt_pred <= 0.0:
        raise ScenarioError("instinct.dt_pred must be positive")

    araw = raw.get("agent", {})
    _require_keys(araw, {"backend", "period_ticks",
                         "hallucination_probability", "kill_tick",
                         "llm_model"}, "agent")
    da = AgentSpec()
    backend = araw.get("backend", da.backend)
    if backend not in ("rule", "hallucinate", "llm"):
        raise ScenarioError(f"agent.backend unknown: {backend!r}")
    kill_tick = araw.get("kill_tick", da.kill_tick)
    if kill_tick is not None and (isinstance(kill_tick, bool)
                                  or not isinstance(kill_tick, int)):
        raise ScenarioError("agent.kill_tick must be an integer or null")
    agent = AgentSpec(
        backend=backend,
        period_ticks=_integer(araw, "period_ticks", da.period_ticks, "agent"),
        hallucination_probability=_number(
            araw, "hallucination_probability",
            da.hallucination_probability, "agent"),
        kill_tick=kill_tick,
        llm_model=str(araw.get("llm_model", da.llm_model)),
    )
    if agent.period_ticks < 1:
        raise ScenarioError("agent.period_ticks must be >= 1")
    if not 0.0 <= agent.hallucination_probability <= 1.0:
        raise ScenarioError("agent.hallucination_probability must be in [0, 1]")

    craw = raw.get("channels", {})
    ckeys = {"command_latency", "feedback_latency", "data_latency",
             "task_latency", "command_drop", "feedback_drop", "data_drop"}
    _require_keys(craw, ckeys, "channels")
    dc = ChannelParams()
    channels = ChannelParams(
        command_latency=_integer(craw, "command_latency", dc.command_latency,
                                 "channels"),
        feedback_latency=_integer(craw, "feedback_latency",
                                  dc.feedback_latency, "channels"),
        data_latency=_integer(craw, "data_latency", dc.data_latency,
                              "channels"),
        task_latency=_integer(craw, "task_latency", dc.task_latency,
                              "channels"),
        command_drop=_number(craw, "command_drop", dc.command_drop,
                             "channels"),
        feedback_drop=_number(craw, "feedback_drop", dc.feedback_drop,
                              "channels"),
        data_drop=_number(craw, "data_drop", dc.data_drop, "channels"),
    )
    for fname in ("command_latency", "feedback_latency", "data_latency",
                  "task_latency"):
        if getattr(channels, fname) < 0:
            raise ScenarioError(f"channels.{fname} must be >= 0")
    for fname in ("command_drop", "feedback_drop", "data_drop"):
        if not 0.0 <= getattr(channels, fname) <= 1.0:
            raise ScenarioError(f"channels.{fname} must be in [0, 1]")

    tasks_raw = raw.get("tasks", [])
    if not isinstance(tasks_raw, list):
        raise ScenarioError("tasks must be a list")

    ticks = _integer(raw, "ticks", 6000, "scenario")
    if ticks < 0:
        raise ScenarioError("scenario.ticks must be >= 0")
    dt = _number(raw, "dt", PHYSICS_DT, "scenario")
    if dt <= 0.0:
        raise ScenarioError("scenario.dt must be positive")

    return Scenario(
        name=str(raw.get("name", "scenario")),
        seed=_integer(raw, "seed", 0, "scenario"),
        ticks=ticks,
        dt=dt,
        world=world,
        start=start,
        robot=robot,
        lidar=lidar,
        instinct=instinct,
        agent=agent,
        channels=channels,
        tasks=_parse_tasks(tasks_raw),
    )


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from exc
    return parse_scenario(raw)


def save_scenario(scenario: Scenario, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def random_scenario(
    seed: int,
    n_obstacles: tuple[int, int] = (3, 8),
    backend: str = "hallucinate",
    hallucination_probability: float = 0.3,
    ticks: int = 2000,
    roaming: bool = False,
    kill_tick: int | None = None,
    min_separation: float = 2.0,
) -> Scenario:
    """Seeded scenario: obstacles, a clear start, and one GOTO task.

    Start and goal keep at least 0.5 m of ground-truth clearance and at
    least ``min_separation`` between them, so every generated run begins in
    a legal state (and, with a large enough separation, cannot finish
    before a mid-run event such as an agent kill).
    """
    rng = random.Random(seed)
    bounds = Rect(-4.0, -4.0, 4.0, 4.0)
    circles: list[Circle] = []
    rects: list[Rect] = []
    for _ in range(rng.randint(*n_obstacles)):
        if rng.random() < 0.6:
            radius = rng.uniform(0.2, 0.6)
            circles.append(Circle(
                rng.uniform(bounds.x0 + radius, bounds.x1 - radius),
                rng.uniform(bounds.y0 + radius, bounds.y1 - radius),
                radius,
            ))
        else:
            w = rng.uniform(0.3, 1.2)
            h = rng.uniform(0.3, 1.2)
            x0 = rng.uniform(bounds.x0, bounds.x1 - w)
            y0 = rng.uniform(bounds.y0, bounds.y1 - h)
            rects.append(Rect(x0, y0, x0 + w, y0 + h))
    world = WorldModel(bounds=bounds, circles=tuple(circles),
                       rects=tuple(rects))

    def clear_point() -> tuple[float, float]:
        for _ in range(1000):
            x = rng.uniform(bounds.x0 + 0.6, bounds.x1 - 0.6)
            y = rng.uniform(bounds.y0 + 0.6, bounds.y1 - 0.6)
            if clearance(world, x, y) >= 0.5:
                return x, y
        raise RuntimeError(f"seed {seed}: no clear start found")

    sx, sy = clear_point()
    for _ in range(1000):
        gx, gy = clear_point()
        if math.hypot(gx - sx, gy - sy) >= min_separation:
            break
    else:
        raise RuntimeError(f"seed {seed}: no goal {min_separation} m out")
    return Scenario(
        name=f"random-{seed}",
        seed=seed,
        ticks=ticks,
        world=world,
        start=Pose2D(sx, sy, rng.uniform(-math.pi, math.pi)),
        instinct=InstinctParams(roaming=roaming),
        agent=AgentSpec(backend=backend,
                        hallucination_probability=hallucination_probability,
                        kill_tick=kill_tick),
        tasks=(TaskSpec(0, "GOTO", x=gx, y=gy),),
    )
