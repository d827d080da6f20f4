"""Trace events, run metrics, replay recomputation, and invariant auditing.

A run emits one stream of ``TraceEvent`` records strictly ordered by
``(tick, seq)``. Everything in the metrics document except the timing block
is recomputable from that stream; timing is deliberately kept out of the
trace so trace bytes stay identical across repeated runs.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Callable, Iterable

LAYERS = ("EXTERNAL", "DECISION", "INSTINCT", "DEVICE", "BUS")

# Instinct-tick phases for the ordering audit. Survival work (status check,
# safe mode, governor, roaming) must precede command handling within a tick.
_SURVIVAL_KINDS = {"status", "safe_mode_entered", "safe_mode_exited",
                   "governor", "roam", "roam_refused"}
_COMMAND_KINDS = {"command_received", "command_malformed", "verdict", "refusal"}
_EXEC_KINDS = {"exec_wheels", "exec_stop", "exec_scan"}


@dataclass(frozen=True)
class TraceEvent:
    tick: int
    seq: int
    layer: str
    kind: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {"tick": self.tick, "seq": self.seq, "layer": self.layer,
             "kind": self.kind, "payload": self.payload},
            sort_keys=True,
        )


class TraceRecorder:
    """Assigns (tick, seq) to events and fans them out to sinks.

    ``store=False`` keeps long runs out of memory; sinks still see every
    event. Thread-safe so live mode can share one recorder across layers.
    """

    def __init__(self, store: bool = True,
                 sinks: list[Callable[[TraceEvent], None]] | None = None) -> None:
        self.store = store
        self.events: list[TraceEvent] = []
        self.sinks = list(sinks or [])
        self._tick = 0
        self._seq = 0
        self._started = False
        self._lock = threading.Lock()

    def begin_tick(self, tick: int) -> None:
        """Start (or re-enter) a tick; seq resets only on a tick change, so
        several layers can call this for the same tick safely."""
        with self._lock:
            if tick != self._tick or not self._started:
                self._tick = tick
                self._seq = 0
                self._started = True

    def emit(self, layer: str, kind: str, payload: dict) -> TraceEvent:
        with self._lock:
            event = TraceEvent(self._tick, self._seq, layer, kind, payload)
            self._seq += 1
            if self.store:
                self.events.append(event)
        for sink in self.sinks:
            sink(event)
        return event


def write_trace(events: Iterable[TraceEvent], path: str) -> int:
    """Write events as JSONL (one event per line); returns the line count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_json())
            fh.write("\n")
            count += 1
    return count


def read_trace(path: str) -> list[TraceEvent]:
    out: list[TraceEvent] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            out.append(TraceEvent(raw["tick"], raw["seq"], raw["layer"],
                                  raw["kind"], raw["payload"]))
    return out


@dataclass
class RunMetrics:
    ticks: int = 0
    min_ground_truth_clearance: float | None = None
    collisions: int = 0
    refusals: int = 0
    hallucinated_commands: int = 0
    tasks_completed: int = 0
    tasks_blocked: int = 0
    timing: dict | None = None

    def to_dict(self) -> dict:
        return {
            "ticks": self.ticks,
            "min_ground_truth_clearance": self.min_ground_truth_clearance,
            "collisions": self.collisions,
            "refusals": self.refusals,
            "hallucinated_commands": self.hallucinated_commands,
            "tasks_completed": self.tasks_completed,
            "tasks_blocked": self.tasks_blocked,
            "timing": self.timing,
        }

    def replay_dict(self) -> dict:
        """The trace-recomputable portion (everything but timing)."""
        out = self.to_dict()
        out.pop("timing")
        return out


def write_metrics(metrics: RunMetrics, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


class MetricsAccumulator:
    """Streaming metrics builder; feed it every trace event in order."""

    def __init__(self) -> None:
        self.metrics = RunMetrics()

    def __call__(self, event: TraceEvent) -> None:
        kind = event.kind
        if event.layer == "INSTINCT":
            if kind == "status":
                self.metrics.ticks += 1
            elif kind == "refusal":
                self.metrics.refusals += 1
        elif event.layer == "DEVICE":
            if kind == "state":
                c = event.payload["clearance"]
                best = self.metrics.min_ground_truth_clearance
                if best is None or c < best:
                    self.metrics.min_ground_truth_clearance = c
            elif kind == "collision":
                self.metrics.collisions += 1
        elif event.layer == "DECISION":
            if kind == "hallucination":
                self.metrics.hallucinated_commands += 1
            elif kind == "task_completed":
                self.metrics.tasks_completed += 1
            elif kind == "task_blocked":
                self.metrics.tasks_blocked += 1


def recompute_metrics(events: Iterable[TraceEvent]) -> RunMetrics:
    """Rebuild the replayable metrics purely from a trace."""
    acc = MetricsAccumulator()
    for event in events:
        acc(event)
    return acc.metrics


def _is_command_event(event: TraceEvent, unsafe_tick: bool) -> bool:
    if event.layer == "INSTINCT":
        if event.kind in _COMMAND_KINDS:
            return True
        if event.kind == "feedback":
            # SAFE_MODE feedback during an unsafe tick is part of entering
            # safe mode; on a safe (holding) tick it answers a fresh command
            # and counts as command handling.
            if event.payload.get("status") == "SAFE_MODE":
                return not unsafe_tick
            return True
        return False
    if event.layer == "DEVICE" and event.kind in _EXEC_KINDS:
        return event.payload.get("parent_id") != "SURVIVAL"
    return False


def _is_survival_event(event: TraceEvent, unsafe_tick: bool) -> bool:
    if event.layer == "INSTINCT":
        if event.kind in _SURVIVAL_KINDS:
            return True
        if event.kind == "feedback":
            return event.payload.get("status") == "SAFE_MODE" and unsafe_tick
        return False
    if event.layer == "DEVICE" and event.kind in _EXEC_KINDS:
        return event.payload.get("parent_id") == "SURVIVAL"
    return False


class TraceAuditor:
    """Online checker for the run-level trace invariants.

    Violations are collected rather than raised so a whole batch of runs can
    be audited and reported at once:

    * events strictly ordered by (tick, seq);
    * within a tick every survival/safe-mode event precedes every
      command-handling event, and an unsafe-status tick has no
      command-handling events at all;
    * no refused low command is ever executed by a device;
    * every device execution of an agent command has a same-tick prior
      approval verdict from the instinct layer;
    * at most one terminal feedback per high command, none after terminal.
    """

    def __init__(self) -> None:
        self.violations: list[str] = []
        self._last_key: tuple[int, int] | None = None
        self._tick: int | None = None
        self._tick_unsafe = False
        self._max_survival_seq = -1
        self._min_command_seq: int | None = None
        self._tick_approved: dict[int, bool] = {}
        self._refused_low_ids: set[int] = set()
        self._received_cmds: set[int] = set()
        self._terminal_counts: dict[int, int] = {}

    def __call__(self, event: TraceEvent) -> None:
        key = (event.tick, event.seq)
        if self._last_key is not None and key <= self._last_key:
            self.violations.append(f"ordering broken at {key} after {self._last_key}")
        self._last_key = key
        if event.tick != self._tick:
            self._tick = event.tick
            self._tick_unsafe = False
            self._max_survival_seq = -1
            self._min_command_seq = None
            self._tick_approved = {}

        if event.layer == "INSTINCT" and event.kind == "status":
            self._tick_unsafe = not event.payload["safe"]

        if _is_survival_event(event, self._tick_unsafe):
            self._max_survival_seq = max(self._max_survival_seq, event.seq)
            if self._min_command_seq is not None:
                self.violations.append(
                    f"tick {event.tick}: survival event seq {event.seq} after "
                    f"command event seq {self._min_command_seq}"
                )
        elif _is_command_event(event, self._tick_unsafe):
            if self._min_command_seq is None:
                self._min_command_seq = event.seq
            if self._tick_unsafe:
                self.violations.append(
                    f"tick {event.tick}: command event {event.kind} on unsafe tick"
                )

        if event.layer == "INSTINCT":
            if event.kind == "refusal":
                self._refused_low_ids.add(event.payload["low_id"])
            elif event.kind == "verdict" and event.payload["safe"]:
                self._tick_approved[event.payload["low_id"]] = True
            elif event.kind in ("command_received", "command_malformed"):
                self._received_cmds.add(event.payload["id"])
            elif event.kind == "feedback":
                cid = event.payload.get("command_id")
                status = event.payload.get("status")
                if cid is not None:
                    seen = self._terminal_counts.get(cid, 0)
                    if seen:
                        self.violations.append(
                            f"tick {event.tick}: feedback for command {cid} "
                            f"after terminal status"
                        )
                    if status in ("COMPLETED", "REFUSED", "SAFE_MODE"):
                        self._terminal_counts[cid] = seen + 1
        elif event.layer == "DEVICE" and event.kind in _EXEC_KINDS:
            low_id = event.payload.get("low_id")
            if low_id in self._refused_low_ids:
                self.violations.append(
                    f"tick {event.tick}: refused low command {low_id} executed"
                )
            if event.payload.get("parent_id") != "SURVIVAL":
                if not self._tick_approved.get(low_id):
                    self.violations.append(
                        f"tick {event.tick}: device execution of low {low_id} "
                        f"without same-tick instinct approval"
                    )

    def finish(self, allow_in_flight: bool = True) -> list[str]:
        """Final whole-run checks; returns all collected violations."""
        for cid in sorted(self._received_cmds):
            count = self._terminal_counts.get(cid, 0)
            if count > 1:
                self.violations.append(f"command {cid}: {count} terminal feedbacks")
            elif count == 0 and not allow_in_flight:
                self.violations.append(f"command {cid}: no terminal feedback")
        return self.violations
