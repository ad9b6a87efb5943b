"""Unpaired layout priors for the discriminators' "real" samples."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import Box2D, GridSpec, LayoutGrid, rasterize_boxes, read_bevg
from .mapgen import ROAD
from .roads import ROAD_KINDS, make_road

TEMPLATES = ROAD_KINDS


def _road_template(rng: np.random.Generator, spec: GridSpec, template: str | None = None):
    template = template or TEMPLATES[rng.integers(len(TEMPLATES))]
    width = float(rng.uniform(5.0, 12.0))
    center = float(rng.uniform(-6.0, 6.0))
    curvature = 0.0
    if template == "curved":
        curvature = float(rng.choice([-1, 1]) * rng.uniform(1 / 60, 1 / 20))
    road = make_road(template, width=width, curvature=curvature, sidewalk_width=0.0, center_x=center,
                     junction_z=float(rng.uniform(10, 32)), branch_side=int(rng.choice([-1, 1])),
                     branch_width=float(rng.uniform(5.0, 12.0)))
    # small heading change so straight templates are not all axis-aligned
    yaw = float(rng.normal(0, 0.08))
    x, z = spec.cell_centers()
    c, s = np.cos(yaw), np.sin(yaw)
    rx, rz = c * x - s * z, s * x + c * z
    return road, road.classify(rx, rz) == ROAD, (c, s)


def sample_static_prior(rng: np.random.Generator, spec: GridSpec | None = None,
                        template: str | None = None) -> LayoutGrid:
    spec = spec or GridSpec()
    _, mask, _ = _road_template(rng, spec, template)
    return LayoutGrid(mask.astype(np.float32), spec, ("road",))


def sample_dynamic_prior(rng: np.random.Generator, spec: GridSpec | None = None,
                         max_vehicles: int = 4) -> LayoutGrid:
    """Vehicle boxes dropped onto the road cells of a sampled road template."""
    spec = spec or GridSpec()
    _, mask, _ = _road_template(rng, spec)
    x, z = spec.cell_centers()
    road_cells = np.flatnonzero(mask)
    boxes: list[Box2D] = []
    n = int(rng.integers(1, max_vehicles + 1))
    for _ in range(n * 10):
        if len(boxes) == n or road_cells.size == 0:
            break
        k = road_cells[rng.integers(road_cells.size)]
        cx, cz = float(x.flat[k]), float(z.flat[k])
        if any(np.hypot(cx - b.x, cz - b.z) < 6.0 for b in boxes):
            continue
        boxes.append(Box2D(cx, cz, float(rng.uniform(3.8, 5.0)), float(rng.uniform(1.7, 2.1)),
                           float(rng.normal(0, 0.1)) + float(rng.choice([0.0, np.pi]))))
    return LayoutGrid(rasterize_boxes(boxes, spec).values, spec, ("vehicle",))


def sample_prior_layout(kind: str, rng: np.random.Generator, source: str = "template_bank",
                        spec: GridSpec | None = None, raster_dir: str | Path | None = None,
                        template: str | None = None) -> LayoutGrid:
    """Draw one binary prior layout, independent of any training image.

    ``source="raster_files"`` picks a stored ``.bevg`` grid from
    ``raster_dir`` and binarizes its first channel at 0.5.
    """
    if kind not in ("static", "dynamic"):
        raise ValueError(f"kind must be 'static' or 'dynamic', got {kind!r}")
    if source == "raster_files":
        files = sorted(Path(raster_dir).glob("*.bevg")) if raster_dir else []
        if not files:
            raise FileNotFoundError(f"no .bevg prior grids found in {raster_dir}")
        grid = read_bevg(files[rng.integers(len(files))])
        return LayoutGrid((grid.values[:, :, :1] >= 0.5).astype(np.float32), grid.spec)
    if source != "template_bank":
        raise ValueError(f"unknown prior source {source!r}")
    if kind == "static":
        return sample_static_prior(rng, spec, template)
    return sample_dynamic_prior(rng, spec)
