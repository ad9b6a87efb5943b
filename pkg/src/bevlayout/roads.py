"""Analytic road geometry on the ground plane (x lateral, z forward)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mapgen import ROAD, SIDEWALK, VOID

FAR = 1.0e4


@dataclass(frozen=True)
class Strip:
    """A road strip around a centerline.

    ``kind == "line"``: the segment from ``a`` to ``b``.
    ``kind == "arc"``: the full circle centred at ``a`` with radius ``b[0]``.
    """

    kind: str
    a: tuple[float, float]
    b: tuple[float, float]
    half_width: float

    def distance(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        ax, az = self.a
        if self.kind == "arc":
            return np.abs(np.hypot(x - ax, z - az) - self.b[0])
        bx, bz = self.b
        dx, dz = bx - ax, bz - az
        t = np.clip(((x - ax) * dx + (z - az) * dz) / (dx * dx + dz * dz), 0.0, 1.0)
        return np.hypot(x - (ax + t * dx), z - (az + t * dz))


@dataclass(frozen=True)
class RoadLayout:
    strips: tuple[Strip, ...]
    sidewalk_width: float = 2.0

    def classify(self, x, z) -> np.ndarray:
        """Class id (ROAD, SIDEWALK or VOID) of every ground point."""
        x = np.asarray(x, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        road = np.zeros(np.broadcast(x, z).shape, bool)
        walk = np.zeros_like(road)
        for s in self.strips:
            d = s.distance(x, z)
            road |= d <= s.half_width
            walk |= d <= s.half_width + self.sidewalk_width
        out = np.full(road.shape, VOID, np.int64)
        out[walk] = SIDEWALK
        out[road] = ROAD
        return out


def make_road(kind: str, width: float = 8.0, curvature: float = 0.0, sidewalk_width: float = 2.0,
              center_x: float = 0.0, junction_z: float = 25.0, branch_side: int = 1,
              branch_width: float | None = None) -> RoadLayout:
    """Road of the given kind, running along +z through ``x = center_x``.

    Curved roads bend towards +x for positive curvature; the centerline
    passes through ``(center_x, 0)`` heading +z.
    """
    hw = width / 2
    bhw = (branch_width or width) / 2
    main = Strip("line", (center_x, -FAR), (center_x, FAR), hw)
    if kind == "straight":
        strips = (main,)
    elif kind == "curved":
        if curvature == 0:
            strips = (main,)
        else:
            r = 1.0 / curvature
            strips = (Strip("arc", (center_x + r, 0.0), (abs(r), 0.0), hw),)
    elif kind == "t_junction":
        end = FAR if branch_side > 0 else -FAR
        strips = (main, Strip("line", (center_x, junction_z), (end, junction_z), bhw))
    elif kind == "crossroads":
        strips = (main, Strip("line", (-FAR, junction_z), (FAR, junction_z), bhw))
    else:
        raise ValueError(f"unknown road kind {kind!r}")
    return RoadLayout(strips, sidewalk_width)


ROAD_KINDS = ("straight", "curved", "t_junction", "crossroads")
