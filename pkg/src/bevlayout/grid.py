"""Bird's-eye-view grid geometry.

Conventions used throughout the package:

* the ground-plane frame is the camera frame projected onto the ground:
  ``x`` is lateral (positive to the right) and ``z`` is forward;
* row 0 is the band farthest from the camera, the camera sits at the
  midpoint of the bottom edge;
* grid values are stored channel-last, ``(rows, cols, channels)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

BEVG_MAGIC = b"BEVG"
BEVG_VERSION = 1
_BEVG_HEADER = struct.Struct("<4sBIII4d")


class GridMismatchError(ValueError):
    """Raised when two grids that must share geometry do not."""


@dataclass(frozen=True)
class GridSpec:
    extent_forward: float = 40.0
    extent_lateral: float = 40.0
    rows: int = 128
    cols: int = 128
    camera_height: float = 1.65

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must have at least one cell, got {self.rows}x{self.cols}")
        if self.extent_forward <= 0 or self.extent_lateral <= 0:
            raise ValueError("grid extents must be positive")

    @property
    def cell_size_forward(self) -> float:
        return self.extent_forward / self.rows

    @property
    def cell_size_lateral(self) -> float:
        return self.extent_lateral / self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(x, z)`` arrays of shape ``(rows, cols)`` holding every cell center."""
        rows = np.arange(self.rows, dtype=np.float64)
        cols = np.arange(self.cols, dtype=np.float64)
        z = self.extent_forward - (rows + 0.5) * self.cell_size_forward
        x = -self.extent_lateral / 2 + (cols + 0.5) * self.cell_size_lateral
        return np.broadcast_to(x[None, :], self.shape), np.broadcast_to(z[:, None], self.shape)


class CellIndex(NamedTuple):
    row: int
    col: int


@dataclass
class LayoutGrid:
    """Per-channel occupancy over a :class:`GridSpec` footprint.

    ``values`` has shape ``(rows, cols, channels)`` and lies in [0, 1].
    """

    values: np.ndarray
    spec: GridSpec = field(default_factory=GridSpec)
    channel_names: tuple[str, ...] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3 or values.shape[:2] != self.spec.shape:
            raise GridMismatchError(
                f"values of shape {values.shape} do not match grid {self.spec.shape}")
        if values.size and (np.isnan(values).any() or values.min() < 0 or values.max() > 1):
            raise ValueError("grid values must lie in [0, 1]")
        self.values = values
        if self.channel_names is not None and len(self.channel_names) != values.shape[2]:
            raise ValueError("one channel name per channel is required")

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0) | (self.values == 1)))

    def channel(self, index: int) -> "LayoutGrid":
        names = None if self.channel_names is None else (self.channel_names[index],)
        return LayoutGrid(self.values[:, :, index:index + 1], self.spec, names)

    def binarize(self, threshold: float = 0.5) -> "LayoutGrid":
        return LayoutGrid((self.values >= threshold).astype(np.float32), self.spec, self.channel_names)

    def flip_lateral(self) -> "LayoutGrid":
        return LayoutGrid(self.values[:, ::-1, :].copy(), self.spec, self.channel_names)

    @classmethod
    def zeros(cls, spec: GridSpec, channels: int = 1, channel_names=None) -> "LayoutGrid":
        return cls(np.zeros((spec.rows, spec.cols, channels), np.float32), spec, channel_names)


def world_to_cell(x: float, z: float, spec: GridSpec) -> CellIndex | None:
    """Map a ground-plane point to its cell, or ``None`` when outside the footprint.

    The near edge ``z == 0`` belongs to the last row; ``z == extent_forward``
    is outside.
    """
    half = spec.extent_lateral / 2
    if not (0.0 <= z < spec.extent_forward and -half <= x < half):
        return None
    row = min(int(np.floor((spec.extent_forward - z) / spec.cell_size_forward)), spec.rows - 1)
    col = min(int(np.floor((x + half) / spec.cell_size_lateral)), spec.cols - 1)
    return CellIndex(row, col)


def world_to_cell_array(x: np.ndarray, z: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`world_to_cell`: returns ``(rows, cols, in_range)``."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    half = spec.extent_lateral / 2
    ok = (z >= 0) & (z < spec.extent_forward) & (x >= -half) & (x < half)
    rows = np.floor((spec.extent_forward - z) / spec.cell_size_forward)
    cols = np.floor((x + half) / spec.cell_size_lateral)
    rows = np.clip(np.where(ok, rows, 0), 0, spec.rows - 1).astype(np.int64)
    cols = np.clip(np.where(ok, cols, 0), 0, spec.cols - 1).astype(np.int64)
    return rows, cols, ok


def cell_center(cell: CellIndex | tuple[int, int], spec: GridSpec) -> tuple[float, float]:
    """Ground-plane ``(x, z)`` of a cell center."""
    row, col = cell
    z = spec.extent_forward - (row + 0.5) * spec.cell_size_forward
    x = -spec.extent_lateral / 2 + (col + 0.5) * spec.cell_size_lateral
    return x, z


@dataclass(frozen=True)
class Box2D:
    """Oriented rectangle on the ground plane.

    ``yaw`` is the heading angle measured from the forward (+z) axis towards
    +x; ``length`` runs along the heading, ``width`` across it.
    """

    x: float
    z: float
    length: float
    width: float
    yaw: float = 0.0

    def corners(self) -> np.ndarray:
        """4x2 array of ``(x, z)`` corners."""
        fwd = np.array([np.sin(self.yaw), np.cos(self.yaw)])
        side = np.array([np.cos(self.yaw), -np.sin(self.yaw)])
        hl, hw = self.length / 2, self.width / 2
        c = np.array([self.x, self.z])
        return np.stack([c + hl * fwd + hw * side, c + hl * fwd - hw * side,
                         c - hl * fwd - hw * side, c - hl * fwd + hw * side])

    def contains(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Strict containment test for arrays of ground-plane points."""
        dx = np.asarray(x, dtype=np.float64) - self.x
        dz = np.asarray(z, dtype=np.float64) - self.z
        s, c = np.sin(self.yaw), np.cos(self.yaw)
        along = dx * s + dz * c
        across = dx * c - dz * s
        return (np.abs(along) < self.length / 2) & (np.abs(across) < self.width / 2)


def rasterize_box(box: Box2D, spec: GridSpec) -> LayoutGrid:
    """Binary single-channel grid of the cells whose centers lie inside ``box``."""
    if box.length < 0 or box.width < 0:
        raise ValueError("box dimensions must be non-negative")
    x, z = spec.cell_centers()
    return LayoutGrid(box.contains(x, z).astype(np.float32), spec)


def rasterize_boxes(boxes: Sequence[Box2D], spec: GridSpec) -> LayoutGrid:
    x, z = spec.cell_centers()
    occ = np.zeros(spec.shape, dtype=bool)
    for box in boxes:
        occ |= box.contains(x, z)
    return LayoutGrid(occ.astype(np.float32), spec)


def _check_same(a: LayoutGrid, b: LayoutGrid, what: str = "grids"):
    if a.spec != b.spec:
        raise GridMismatchError(f"{what} have different grid specs: {a.spec} vs {b.spec}")


def grid_iou(a: LayoutGrid, b: LayoutGrid, threshold: float = 0.5,
             mask: LayoutGrid | None = None) -> np.ndarray:
    """Per-channel IoU of the binarized grids, optionally restricted to ``mask``.

    An empty union scores 1.0.
    """
    _check_same(a, b)
    if a.channels != b.channels:
        raise GridMismatchError(f"channel counts differ: {a.channels} vs {b.channels}")
    A = a.values >= threshold
    B = b.values >= threshold
    if mask is not None:
        _check_same(a, mask, "grid and mask")
        m = mask.values >= 0.5
        if m.shape[2] not in (1, a.channels):
            raise GridMismatchError("mask must have one channel or match the grid channels")
        A = A & m
        B = B & m
    inter = (A & B).sum(axis=(0, 1)).astype(np.float64)
    union = (A | B).sum(axis=(0, 1)).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.maximum(union, 1), 1.0)


@dataclass
class Blob:
    cells: np.ndarray  # (n, 2) array of (row, col)
    bbox: tuple[int, int, int, int]  # (row_min, col_min, row_max, col_max), inclusive
    centroid: tuple[float, float]  # world (x, z)
    score: float = 1.0

    @property
    def size(self) -> int:
        return len(self.cells)


EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def connected_components(g: LayoutGrid | np.ndarray, threshold: float = 0.5,
                         spec: GridSpec | None = None) -> list[Blob]:
    """8-connected components of a single-channel grid binarized at ``threshold``.

    Blobs are ordered by their first cell in row-major order. Each blob's
    ``score`` is the mean input value over its cells.
    """
    if isinstance(g, LayoutGrid):
        if g.channels != 1:
            raise GridMismatchError("connected_components needs a single-channel grid")
        spec = g.spec
        values = g.values[:, :, 0]
    else:
        values = np.asarray(g)
        spec = spec or GridSpec(rows=values.shape[0], cols=values.shape[1])
    labels, n = ndimage.label(values >= threshold, structure=EIGHT_CONNECTED)
    blobs = []
    for k in range(1, n + 1):
        rows, cols = np.nonzero(labels == k)
        x = -spec.extent_lateral / 2 + (cols + 0.5) * spec.cell_size_lateral
        z = spec.extent_forward - (rows + 0.5) * spec.cell_size_forward
        blobs.append(Blob(
            cells=np.stack([rows, cols], axis=1),
            bbox=(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())),
            centroid=(float(x.mean()), float(z.mean())),
            score=float(values[rows, cols].mean()),
        ))
    return blobs


def occlusion_mask(visible: LayoutGrid, fused_gt: LayoutGrid) -> LayoutGrid:
    """Cells occupied in the fused ground truth but absent from the single-frame view."""
    _check_same(visible, fused_gt)
    if visible.channels != fused_gt.channels:
        raise GridMismatchError("visible and fused grids need the same channels")
    occluded = (fused_gt.values >= 0.5) & ~(visible.values >= 0.5)
    return LayoutGrid(occluded.astype(np.float32), fused_gt.spec)


def union_channels(g: LayoutGrid) -> LayoutGrid:
    """Collapse all channels into one by cell-wise maximum."""
    return LayoutGrid(g.values.max(axis=2, keepdims=True), g.spec)


# --- file formats ---------------------------------------------------------

def write_bevg(path: str | Path, grid: LayoutGrid) -> None:
    spec = grid.spec
    header = _BEVG_HEADER.pack(BEVG_MAGIC, BEVG_VERSION, spec.rows, spec.cols, grid.channels,
                               spec.extent_forward, spec.extent_lateral, spec.camera_height, 0.0)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def read_bevg(path: str | Path) -> LayoutGrid:
    data = Path(path).read_bytes()
    if len(data) < _BEVG_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, rows, cols, channels, ef, el, h, _ = _BEVG_HEADER.unpack_from(data)
    if magic != BEVG_MAGIC:
        raise ValueError(f"{path}: not a BEVG file")
    if version != BEVG_VERSION:
        raise ValueError(f"{path}: unsupported BEVG version {version}")
    n = rows * cols * channels
    payload = data[_BEVG_HEADER.size:]
    if len(payload) != 4 * n:
        raise ValueError(f"{path}: expected {n} values, found {len(payload) // 4}")
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, cols, channels).astype(np.float32)
    return LayoutGrid(values, GridSpec(ef, el, rows, cols, h))


def grid_to_images(grid: LayoutGrid) -> list[Image.Image]:
    """One 8-bit grayscale image per channel, value = round(255 v)."""
    return [Image.fromarray(np.round(grid.values[:, :, k] * 255).astype(np.uint8), mode="L")
            for k in range(grid.channels)]


def grid_from_images(images: Sequence[Image.Image | str | Path], spec: GridSpec | None = None) -> LayoutGrid:
    chans = []
    for im in images:
        if not isinstance(im, Image.Image):
            im = Image.open(im)
        chans.append(np.asarray(im.convert("L"), dtype=np.float32) / 255.0)
    values = np.stack(chans, axis=-1)
    spec = spec or GridSpec(rows=values.shape[0], cols=values.shape[1])
    return LayoutGrid(values, spec)
