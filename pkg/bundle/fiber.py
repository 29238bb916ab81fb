from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from group_core.elements import GroupElement, compose


@dataclass(frozen=True, eq=False)
class FiberPoint:
    """A frame over a base point, given relative to the reference frame of `chart`."""

    point: np.ndarray
    frame: GroupElement
    chart: str = "global"

    def __post_init__(self):
        point = np.atleast_1d(np.asarray(self.point, dtype=float)).copy()
        point.setflags(write=False)
        object.__setattr__(self, "point", point)

    def act(self, g: GroupElement) -> "FiberPoint":
        """Right action p -> p . g."""
        return FiberPoint(self.point, compose(self.frame, g), self.chart)
