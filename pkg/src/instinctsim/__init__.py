"""Layered robot-control runtime and simulator.

Four layers talk only through typed channels: an external task source, a
decision agent (pluggable planner backends, including a fault injector), an
always-on instinct controller that safety-checks every command before it can
reach the devices, and a deterministic 2D differential-drive world.
"""

__version__ = "0.1.0"

from .world import Pose2D, WorldModel, RobotState, LidarScan  # noqa: F401
from .messages import (  # noqa: F401
    HighCommand,
    LowCommand,
    SafetyVerdict,
    Feedback,
    ScanSummary,
)
