"""Multi-object tracking over per-frame vehicle occupancy grids.

Blobs are detected as connected components and associated across frames by
greedy maximum-IoU matching. There is no motion model.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import GridSpec, LayoutGrid, connected_components


class TrackingError(ValueError):
    pass


@dataclass
class Detection:
    frame_index: int
    cells: np.ndarray  # (n, 2) rows/cols
    bbox: tuple[int, int, int, int]  # inclusive (row_min, col_min, row_max, col_max)
    center_world: tuple[float, float]  # (x, z) metres

    def __post_init__(self):
        if len(self.cells) == 0:
            raise ValueError("a detection needs at least one cell")


@dataclass
class Track:
    id: int
    states: list[tuple[int, Detection]] = field(default_factory=list)
    status: str = "active"
    misses: int = 0

    @property
    def last(self) -> Detection:
        return self.states[-1][1]

    @property
    def last_frame(self) -> int:
        return self.states[-1][0]


def detect_vehicles(g: LayoutGrid, frame_index: int = 0, threshold: float = 0.5,
                    min_blob_cells: int = 1) -> list[Detection]:
    return [Detection(frame_index, b.cells, b.bbox, b.centroid)
            for b in connected_components(g, threshold) if b.size >= min_blob_cells]


def bbox_iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    """IoU of inclusive cell rectangles."""
    r0, c0 = max(a[0], b[0]), max(a[1], b[1])
    r1, c1 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0, r1 - r0 + 1) * max(0, c1 - c0 + 1)
    area = lambda r: (r[2] - r[0] + 1) * (r[3] - r[1] + 1)
    union = area(a) + area(b) - inter
    return inter / union if union else 0.0


def cell_iou(a: Detection, b: Detection) -> float:
    sa, sb = set(map(tuple, a.cells)), set(map(tuple, b.cells))
    return len(sa & sb) / len(sa | sb)


def update_tracks(tracks: list[Track], detections: Sequence[Detection], iou_min: float = 0.1,
                  max_misses: int = 1, frame_index: int | None = None, exact_cells: bool = False) -> list[Track]:
    """Associate one frame of detections with the active tracks (in place; returns ``tracks``).

    Matching is greedy in descending IoU; ties go to the smaller track id and
    then to the detection with the smaller bounding box tuple, so the result
    does not depend on the order of ``detections``.
    """
    frames = {d.frame_index for d in detections}
    if len(frames) > 1:
        raise TrackingError("detections must all come from one frame")
    frame = frames.pop() if frames else frame_index
    if frame is not None:
        for t in tracks:
            if t.states and t.last_frame >= frame:
                raise TrackingError(f"frame {frame} is not later than track {t.id}'s last frame {t.last_frame}")
    overlap = cell_iou if exact_cells else (lambda a, b: bbox_iou(a.bbox, b.bbox))
    dets = sorted(detections, key=lambda d: (d.bbox, d.center_world))
    active = [t for t in tracks if t.status == "active"]
    pairs = []
    for t in active:
        for j, d in enumerate(dets):
            iou = overlap(t.last, d)
            if iou >= iou_min:
                pairs.append((-iou, t.id, j, t))
    pairs.sort(key=lambda p: p[:3])
    matched_t, matched_d = set(), set()
    for _, tid, j, t in pairs:
        if tid in matched_t or j in matched_d:
            continue
        matched_t.add(tid)
        matched_d.add(j)
        t.states.append((dets[j].frame_index, dets[j]))
        t.misses = 0
    for t in active:
        if t.id not in matched_t:
            t.misses += 1
            if t.misses > max_misses:
                t.status = "terminated"
    next_id = max((t.id for t in tracks), default=-1) + 1
    for j, d in enumerate(dets):
        if j not in matched_d:
            tracks.append(Track(next_id, [(d.frame_index, d)]))
            next_id += 1
    return tracks


class Tracker:
    """Convenience wrapper holding tracker state for one stream."""

    def __init__(self, iou_min: float = 0.1, max_misses: int = 1, threshold: float = 0.5,
                 min_blob_cells: int = 1, exact_cells: bool = False):
        self.iou_min = iou_min
        self.max_misses = max_misses
        self.threshold = threshold
        self.min_blob_cells = min_blob_cells
        self.exact_cells = exact_cells
        self.tracks: list[Track] = []

    def step(self, grid: LayoutGrid, frame_index: int) -> list[Track]:
        dets = detect_vehicles(grid, frame_index, self.threshold, self.min_blob_cells)
        return update_tracks(self.tracks, dets, self.iou_min, self.max_misses, frame_index, self.exact_cells)

    def run(self, grids: Iterable[LayoutGrid]) -> list[Track]:
        for i, g in enumerate(grids):
            self.step(g, i)
        return self.tracks


# --- evaluation -------------------------------------------------------------

GtCenters = dict[int, list[tuple[int, float, float]]]  # frame -> [(gt_id, x, z)]


def _in_footprint(x, z, spec: GridSpec | None):
    if spec is None:
        return True
    return 0 <= z < spec.extent_forward and -spec.extent_lateral / 2 <= x < spec.extent_lateral / 2


def _frame_assignments(tracks, gt_centers: GtCenters, gate: float, spec):
    """Nearest in-footprint GT id (within ``gate`` metres) for every (track, frame) state."""
    out = {}
    for t in tracks:
        for frame, d in t.states:
            cands = [(np.hypot(d.center_world[0] - x, d.center_world[1] - z), gid, x, z)
                     for gid, x, z in gt_centers.get(frame, []) if _in_footprint(x, z, spec)]
            if cands:
                dist, gid, x, z = min(cands)
                if dist <= gate:
                    out[(t.id, frame)] = (gid, x, z)
    return out


def match_tracks_to_gt(tracks, gt_centers: GtCenters, gate: float = 2.0, spec: GridSpec | None = None) -> dict[int, int]:
    """Track id -> GT id by majority over the track's frames."""
    assign = _frame_assignments(tracks, gt_centers, gate, spec)
    votes: dict[int, Counter] = defaultdict(Counter)
    for (tid, _), (gid, _, _) in assign.items():
        votes[tid][gid] += 1
    return {tid: min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0] for tid, c in votes.items()}


def tracking_error(tracks: Sequence[Track], gt_centers: GtCenters, gate: float = 2.0,
                   spec: GridSpec | None = None) -> tuple[float, float, float]:
    """Mean absolute forward error, lateral error and Euclidean error in metres.

    GT centres outside the grid footprint are ignored when ``spec`` is given.
    """
    identity = match_tracks_to_gt(tracks, gt_centers, gate, spec)
    ez, ex, el2 = [], [], []
    for t in tracks:
        gid = identity.get(t.id)
        if gid is None:
            continue
        for frame, d in t.states:
            for g, x, z in gt_centers.get(frame, []):
                if g == gid and _in_footprint(x, z, spec):
                    dx, dz = d.center_world[0] - x, d.center_world[1] - z
                    ex.append(abs(dx))
                    ez.append(abs(dz))
                    el2.append(float(np.hypot(dx, dz)))
    if not el2:
        raise TrackingError("no track could be matched to ground truth")
    return float(np.mean(ez)), float(np.mean(ex)), float(np.mean(el2))


def identity_switches(tracks: Sequence[Track], gt_centers: GtCenters, gate: float = 2.0,
                      spec: GridSpec | None = None) -> tuple[int, int]:
    """``(id_switches, fragmentations)`` counted per GT trajectory.

    A switch is a change of covering track id between consecutive covered
    frames; a fragmentation is a gap in coverage between covered frames.
    """
    assign = _frame_assignments(tracks, gt_centers, gate, spec)
    per_gt: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for (tid, frame), (gid, _, _) in assign.items():
        per_gt[gid].append((frame, tid))
    switches = frags = 0
    for gid, seq in per_gt.items():
        seq.sort()
        present = {f for f, _ in seq}
        gt_frames = sorted(f for f, items in gt_centers.items()
                           for g, x, z in items if g == gid and _in_footprint(x, z, spec))
        for (f0, t0), (f1, t1) in zip(seq, seq[1:]):
            if t0 != t1:
                switches += 1
            if any(f0 < f < f1 for f in gt_frames if f not in present):
                frags += 1
    return switches, frags


# --- text format --------------------------------------------------------------

def write_tracks(path: str | Path, tracks: Sequence[Track]) -> None:
    """One line per state: ``frame id x z row_min col_min row_max col_max``."""
    rows = sorted((f, t.id, d) for t in tracks for f, d in t.states)
    with open(path, "w") as fh:
        for f, tid, d in rows:
            fh.write(f"{f} {tid} {d.center_world[0]:.4f} {d.center_world[1]:.4f} {' '.join(map(str, d.bbox))}\n")


def read_track_centers(path: str | Path) -> GtCenters:
    """Read ``frame id x z [bbox...]`` lines into per-frame centre lists."""
    out: GtCenters = defaultdict(list)
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if len(parts) < 4:
            continue
        out[int(parts[0])].append((int(parts[1]), float(parts[2]), float(parts[3])))
    return dict(out)
