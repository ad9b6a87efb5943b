"""Ground-truth layout generation by temporal fusion of depth or lidar.

Point clouds live in the camera frame: ``x`` right, ``y`` down, ``z``
forward. The ground plane is ``y = camera_height``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .grid import GridSpec, LayoutGrid, world_to_cell_array

# Class ids shared by the synthetic generator and the default class map.
VOID, ROAD, SIDEWALK, VEHICLE, SKY = 0, 1, 2, 3, 4
DEFAULT_CLASS_MAP = {ROAD: 0, SIDEWALK: 1}


@dataclass(frozen=True)
class PoseSE3:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant +1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_matrix(cls, m) -> "PoseSE3":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_yaw(cls, yaw: float, x: float = 0.0, z: float = 0.0, y: float = 0.0) -> "PoseSE3":
        """Rotation about the (downward) y axis; ``yaw`` turns +z towards +x."""
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
        return cls(R, np.array([x, y, z]))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "PoseSE3":
        Rt = self.rotation.T
        return PoseSE3(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        return PoseSE3(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


# Velodyne axes (x forward, y left, z up) to camera axes (x right, y down, z forward).
LIDAR_TO_CAMERA = PoseSE3(np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]))


@dataclass
class SemanticPointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).reshape(-1).astype(np.int64)
            if len(self.labels) != len(self.points):
                raise ValueError(f"{len(self.labels)} labels for {len(self.points)} points")

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls, labelled: bool = True) -> "SemanticPointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0, np.int64) if labelled else None)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


@dataclass
class FusionConfig:
    window_size: int = 1
    modality: str = "lidar"  # "lidar" or "monocular_depth"
    max_mono_depth: float = 5.0
    min_points_per_cell: int = 1
    semantic_vote: str = "ground_truth_labels"  # or "predicted_labels"; both are per-pixel/point labels
    # Points farther than this from the ground plane are ignored; None keeps everything.
    ground_tolerance: float | None = 0.5

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be at least 1")
        if self.max_mono_depth <= 0:
            raise ValueError("max_mono_depth must be positive")
        if self.modality not in ("lidar", "monocular_depth"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.semantic_vote not in ("ground_truth_labels", "predicted_labels"):
            raise ValueError(f"unknown semantic_vote {self.semantic_vote!r}")


def depth_to_points(depth_map: np.ndarray, intrinsics: CameraIntrinsics, labels: np.ndarray | None = None,
                    config: FusionConfig | None = None) -> SemanticPointCloud:
    """Back-project valid (positive) depths through a pinhole camera.

    Pixel ``(u, v)`` is taken at its integer coordinates; in monocular mode
    depths beyond ``max_mono_depth`` are discarded.
    """
    config = config or FusionConfig()
    depth = np.asarray(depth_map, dtype=np.float64)
    if labels is not None and np.shape(labels) != depth.shape:
        raise ValueError(f"label map {np.shape(labels)} does not match depth map {depth.shape}")
    v, u = np.nonzero(depth > 0)
    d = depth[v, u]
    keep = np.isfinite(d)
    if config.modality == "monocular_depth":
        keep &= d <= config.max_mono_depth
    v, u, d = v[keep], u[keep], d[keep]
    pts = np.stack([(u - intrinsics.cx) * d / intrinsics.fx, (v - intrinsics.cy) * d / intrinsics.fy, d], axis=1)
    lab = None if labels is None else np.asarray(labels)[v, u]
    return SemanticPointCloud(pts, lab)


def lidar_to_cloud(scan: np.ndarray, labels: np.ndarray | None = None,
                   extrinsic: PoseSE3 = LIDAR_TO_CAMERA) -> SemanticPointCloud:
    """Convert an ``(N, 4)`` velodyne scan into a camera-frame cloud."""
    scan = np.asarray(scan, dtype=np.float64).reshape(-1, 4)
    return SemanticPointCloud(extrinsic.apply(scan[:, :3]), labels)


def fuse_frames(clouds: Sequence[SemanticPointCloud], poses: Sequence[PoseSE3],
                config: FusionConfig | None = None) -> SemanticPointCloud:
    """Transform each cloud by its frame-to-reference pose and concatenate."""
    config = config or FusionConfig()
    if len(clouds) != len(poses):
        raise ValueError(f"{len(clouds)} clouds but {len(poses)} poses")
    if len(clouds) > config.window_size:
        raise ValueError(f"{len(clouds)} frames exceed the window size {config.window_size}")
    if not clouds:
        return SemanticPointCloud.empty()
    pts = [pose.apply(c.points) for c, pose in zip(clouds, poses)]
    labelled = [c.labels is not None for c in clouds]
    if any(labelled) and not all(labelled):
        raise ValueError("cannot fuse labelled and unlabelled clouds")
    labels = np.concatenate([c.labels for c in clouds]) if all(labelled) else None
    return SemanticPointCloud(np.concatenate(pts), labels)


def project_to_grid(cloud: SemanticPointCloud, spec: GridSpec, config: FusionConfig | None = None,
                    class_map: dict[int, int] | None = None) -> LayoutGrid:
    """Majority-vote occupancy grid of a labelled cloud.

    Points with labels outside ``class_map`` are dropped before voting; an
    unlabelled cloud votes entirely for channel 0. Ties go to the lowest
    class id.
    """
    config = config or FusionConfig()
    class_map = DEFAULT_CLASS_MAP if class_map is None else class_map
    n_channels = max(class_map.values()) + 1 if class_map else 1
    out = np.zeros((spec.rows, spec.cols, n_channels), np.float32)
    if len(cloud) == 0:
        return LayoutGrid(out, spec)

    pts = cloud.points
    if cloud.labels is None:
        labels = np.full(len(pts), min(class_map) if class_map else 0, np.int64)
    else:
        labels = cloud.labels
    keep = np.isin(labels, np.fromiter(class_map, np.int64, len(class_map))) if cloud.labels is not None \
        else np.ones(len(pts), bool)
    if config.ground_tolerance is not None:
        keep &= np.abs(spec.camera_height - pts[:, 1]) <= config.ground_tolerance
    rows, cols, ok = world_to_cell_array(pts[:, 0], pts[:, 2], spec)
    keep &= ok
    if not keep.any():
        return LayoutGrid(out, spec)

    cell = rows[keep] * spec.cols + cols[keep]
    lab = labels[keep]
    pairs, counts = np.unique(np.stack([cell, lab], axis=1), axis=0, return_counts=True)
    # sort by cell, then descending count, then ascending class id
    order = np.lexsort((pairs[:, 1], -counts, pairs[:, 0]))
    pairs, counts = pairs[order], counts[order]
    first = np.ones(len(pairs), bool)
    first[1:] = pairs[1:, 0] != pairs[:-1, 0]
    totals = np.bincount(cell, minlength=spec.rows * spec.cols)
    winners = pairs[first]
    dense = winners[totals[winners[:, 0]] >= config.min_points_per_cell]
    if cloud.labels is None:
        channels = np.zeros(len(dense), np.int64)
    else:
        channels = np.array([class_map[int(c)] for c in dense[:, 1]], np.int64)
    out[dense[:, 0] // spec.cols, dense[:, 0] % spec.cols, channels] = 1.0
    return LayoutGrid(out, spec)


@dataclass
class FrameRecord:
    """One time step of sensor data.

    Exactly one of ``depth`` (with ``intrinsics``) or ``scan`` is used,
    according to the fusion modality. ``pose`` maps this frame's camera
    coordinates into a common world frame.
    """

    pose: PoseSE3 | None
    depth: np.ndarray | None = None
    intrinsics: CameraIntrinsics | None = None
    labels: np.ndarray | None = None
    scan: np.ndarray | None = None
    scan_labels: np.ndarray | None = None

    def cloud(self, config: FusionConfig) -> SemanticPointCloud:
        if self.scan is not None and (config.modality == "lidar" or self.depth is None):
            return lidar_to_cloud(self.scan, self.scan_labels)
        if self.depth is None or self.intrinsics is None:
            raise ValueError("frame has neither a lidar scan nor a depth map with intrinsics")
        return depth_to_points(self.depth, self.intrinsics, self.labels, config)


def window_indices(t: int, n: int, window: int) -> range:
    """Frames fused for frame ``t``: centred on ``t``, truncated at the sequence ends."""
    lo = max(0, t - (window - 1) // 2)
    hi = min(n, t + window // 2 + 1)
    return range(lo, hi)


def generate_ground_truth(sequence: Sequence[FrameRecord], spec: GridSpec, config: FusionConfig | None = None,
                          class_map: dict[int, int] | None = None) -> tuple[list[LayoutGrid], list[LayoutGrid]]:
    """Fused and single-frame (visible) static grids for every frame."""
    config = config or FusionConfig()
    for i, rec in enumerate(sequence):
        if rec.pose is None:
            raise ValueError(f"frame {i} has no pose")
    clouds = [rec.cloud(config) for rec in sequence]
    fused, visible = [], []
    for t, rec in enumerate(sequence):
        idx = window_indices(t, len(sequence), config.window_size)
        to_t = rec.pose.inverse()
        merged = fuse_frames([clouds[j] for j in idx], [to_t @ sequence[j].pose for j in idx], config)
        fused.append(project_to_grid(merged, spec, config, class_map))
        visible.append(project_to_grid(clouds[t], spec, config, class_map))
    return fused, visible


# --- file formats ---------------------------------------------------------

def read_poses(path: str | Path) -> list[PoseSE3]:
    """One row-major 3x4 transform (12 numbers) per non-empty line."""
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        vals = np.array(line.split(), dtype=np.float64)
        if vals.size != 12:
            raise ValueError(f"{path}:{lineno}: expected 12 numbers, found {vals.size}")
        poses.append(PoseSE3.from_matrix(vals.reshape(3, 4)))
    return poses


def write_poses(path: str | Path, poses: Sequence[PoseSE3]) -> None:
    with open(path, "w") as f:
        for p in poses:
            f.write(" ".join(f"{v:.9e}" for v in p.matrix()[:3].reshape(-1)) + "\n")


def read_velodyne(path: str | Path) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(-1, 4)


def write_velodyne(path: str | Path, scan: np.ndarray) -> None:
    np.asarray(scan, dtype="<f4").reshape(-1, 4).tofile(path)


def read_depth_png(path: str | Path) -> np.ndarray:
    """16-bit depth image in millimetres to metres (0 stays invalid)."""
    return np.asarray(Image.open(path), dtype=np.float64) / 1000.0


def write_depth_png(path: str | Path, depth: np.ndarray) -> None:
    mm = np.clip(np.round(np.nan_to_num(depth) * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path)


def read_depth_bin(path: str | Path, shape: tuple[int, int]) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(shape).astype(np.float64)


def write_depth_bin(path: str | Path, depth: np.ndarray) -> None:
    np.asarray(depth, dtype="<f4").tofile(path)


def read_label_image(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.int64)


def write_label_image(path: str | Path, labels: np.ndarray) -> None:
    Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="L").save(path)


def read_point_labels(path: str | Path) -> np.ndarray:
    return np.fromfile(path, dtype=np.uint8).astype(np.int64)


def write_point_labels(path: str | Path, labels: np.ndarray) -> None:
    np.asarray(labels, dtype=np.uint8).tofile(path)
