"""Master-to-slave command generation.

Translation is incremental and scaled: each commanded position adds the
scaled master increment to a reference.  By default the reference is the
previously commanded position, seeded from delayed slave feedback when the
operator engages; this keeps the commanded path independent of the delay.
A strict-literal mode instead adds the increment to the latest delayed
slave position every step, for experimentation.  Orientation passes
through unscaled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from telelens.errors import NotEngagedError
from telelens.se3 import Pose


@dataclass(frozen=True)
class TeleopParams:
    scale: float = 0.2
    strict_literal: bool = False

    def __post_init__(self):
        if not 0 < self.scale <= 1:
            raise ValueError(f"translation scale must be in (0, 1], got {self.scale}")


class TeleopState:
    """One master arm's command generator; single-threaded."""

    def __init__(self, params: TeleopParams):
        self.params = params
        self.engaged = False
        self.prev_master: Pose | None = None
        self.reference = np.zeros(3)

    def engage(self, latest_feedback_slave_pose: Pose, master: Pose) -> None:
        """Couple master motion to the slave: the first command equals the
        latest delayed feedback position, so (re)engaging never jumps."""
        self.reference = np.array(latest_feedback_slave_pose.translation)
        self.prev_master = master
        self.engaged = True

    def disengage(self) -> None:
        self.engaged = False

    def step(self, master: Pose, delayed_slave_position=None) -> Pose:
        """Commanded slave target for this sample."""
        if not self.engaged or self.prev_master is None:
            raise NotEngagedError("teleop step before engage")
        if self.params.strict_literal:
            if delayed_slave_position is None:
                raise ValueError("strict-literal mode needs the delayed slave position")
            base = np.asarray(delayed_slave_position, dtype=float)
        else:
            base = self.reference
        command = self.params.scale * (master.translation - self.prev_master.translation) + base
        self.reference = command
        self.prev_master = master
        return Pose(master.rotation, command)
