"""Command, feedback, and summary types exchanged between layers.

These are the wire contract: the agent only ever sees ``HighCommand`` /
``Feedback`` / ``ScanSummary``; devices only ever see ``LowCommand``. The
instinct layer bridges the two vocabularies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .world import Mode, Pose2D, wrap_angle


class MalformedCommandError(ValueError):
    """A command failed validation; the whole batch it came in is rejected."""


class HighKind(Enum):
    MOVE_TO = "MOVE_TO"
    ROTATE_TO = "ROTATE_TO"
    FOLLOW_PATH = "FOLLOW_PATH"
    STOP = "STOP"
    QUERY_STATUS = "QUERY_STATUS"


class LowKind(Enum):
    SET_WHEELS = "SET_WHEELS"
    STOP_ALL = "STOP_ALL"
    ACQUIRE_SCAN = "ACQUIRE_SCAN"


class VerdictReason(Enum):
    OK = "OK"
    OBSTACLE_PREDICTED = "OBSTACLE_PREDICTED"
    OUT_OF_BOUNDS = "OUT_OF_BOUNDS"
    LIMIT_EXCEEDED = "LIMIT_EXCEEDED"


class FeedbackStatus(Enum):
    ACCEPTED = "ACCEPTED"
    EXECUTING = "EXECUTING"
    COMPLETED = "COMPLETED"
    REFUSED = "REFUSED"
    SAFE_MODE = "SAFE_MODE"
    DEVICE_ERROR = "DEVICE_ERROR"


TERMINAL_STATUSES = frozenset(
    {FeedbackStatus.COMPLETED, FeedbackStatus.REFUSED, FeedbackStatus.SAFE_MODE}
)


@dataclass(frozen=True)
class HighCommand:
    """Agent-level symbolic command; parameters depend on ``kind``."""

    id: int
    kind: HighKind
    issued_tick: int
    x: float | None = None
    y: float | None = None
    theta: float | None = None
    speed: float | None = None
    waypoints: tuple[tuple[float, float], ...] | None = None

    def validate(self, v_wheel_max: float) -> None:
        """Raise MalformedCommandError unless the parameters are usable."""
        if self.kind is HighKind.MOVE_TO:
            if self.x is None or self.y is None:
                raise MalformedCommandError("MOVE_TO requires x and y")
            if not (math.isfinite(self.x) and math.isfinite(self.y)):
                raise MalformedCommandError("MOVE_TO target must be finite")
        elif self.kind is HighKind.ROTATE_TO:
            if self.theta is None or not math.isfinite(self.theta):
                raise MalformedCommandError("ROTATE_TO requires finite theta")
        elif self.kind is HighKind.FOLLOW_PATH:
            if not self.waypoints:
                raise MalformedCommandError("FOLLOW_PATH requires waypoints")
            for wp in self.waypoints:
                if len(wp) != 2 or not all(math.isfinite(v) for v in wp):
                    raise MalformedCommandError(f"bad waypoint: {wp!r}")
        if self.speed is not None:
            if not math.isfinite(self.speed) or not 0.0 < self.speed <= v_wheel_max:
                raise MalformedCommandError(
                    f"speed must be in (0, {v_wheel_max}]: {self.speed}"
                )

    def to_payload(self) -> dict:
        out: dict = {"id": self.id, "kind": self.kind.value,
                     "issued_tick": self.issued_tick}
        for key in ("x", "y", "theta", "speed"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        if self.waypoints is not None:
            out["waypoints"] = [list(wp) for wp in self.waypoints]
        return out


@dataclass(frozen=True)
class LowCommand:
    """Device-level primitive; ``parent_id`` is None for survival-task
    commands that have no originating high command."""

    id: int
    parent_id: int | None
    kind: LowKind
    v_left: float = 0.0
    v_right: float = 0.0
    duration_ticks: int = 1

    def __post_init__(self) -> None:
        if self.duration_ticks < 1:
            raise ValueError("duration_ticks must be >= 1")

    def to_payload(self) -> dict:
        out: dict = {
            "id": self.id,
            "parent_id": "SURVIVAL" if self.parent_id is None else self.parent_id,
            "kind": self.kind.value,
        }
        if self.kind is LowKind.SET_WHEELS:
            out["v_left"] = self.v_left
            out["v_right"] = self.v_right
            out["duration_ticks"] = self.duration_ticks
        return out


@dataclass(frozen=True)
class SafetyVerdict:
    """Outcome of the predictive check; safe iff reason is OK iff the
    predicted minimum clearance stays at or above d_min."""

    safe: bool
    predicted_min_clearance: float
    reason: VerdictReason

    def to_payload(self) -> dict:
        return {
            "safe": self.safe,
            "predicted_min_clearance": self.predicted_min_clearance,
            "reason": self.reason.value,
        }


@dataclass(frozen=True)
class Feedback:
    """Status message for one command (or system-level when command_id is
    None, e.g. the per-tick safe-mode notice)."""

    command_id: int | None
    status: FeedbackStatus
    reason: str
    tick: int
    verdict: SafetyVerdict | None = None

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL_STATUSES

    def to_payload(self) -> dict:
        out: dict = {
            "command_id": self.command_id,
            "status": self.status.value,
            "reason": self.reason,
            "tick": self.tick,
        }
        if self.verdict is not None:
            out["verdict"] = self.verdict.to_payload()
        return out


@dataclass(frozen=True)
class ScanSummary:
    """The simplified sensor view the agent receives: eight 45-degree sector
    minima in the robot frame (sector 0 centered on the heading), the
    nearest return, and the robot's own estimate of its state."""

    sector_min: tuple[float, ...]
    nearest_bearing: float
    nearest_range: float
    pose: Pose2D
    load: float
    mode: Mode
    tick: int

    def to_payload(self) -> dict:
        return {
            "sector_min": list(self.sector_min),
            "nearest_bearing": self.nearest_bearing,
            "nearest_range": self.nearest_range,
            "pose": [self.pose.x, self.pose.y, self.pose.theta],
            "load": self.load,
            "mode": self.mode.value,
            "tick": self.tick,
        }


def sector_index(bearing: float, n_sectors: int = 8) -> int:
    """Sector of a robot-frame bearing; sector k is centered at k * (2pi/n)."""
    width = 2.0 * math.pi / n_sectors
    return int(round(bearing / width)) % n_sectors


def sector_angle(index: int, n_sectors: int = 8) -> float:
    """Robot-frame bearing of a sector center, wrapped to (-pi, pi]."""
    return wrap_angle(index * 2.0 * math.pi / n_sectors)
