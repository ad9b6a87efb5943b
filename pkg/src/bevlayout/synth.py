"""Deterministic synthetic driving sequences with exact ground truth.

The world frame is the first camera frame: ``x`` right, ``y`` down, ``z``
forward, with the ground plane at ``y = camera_height``. Every frame
carries a schematic RGB render, a z-depth map, a per-pixel label map, a
dense synthetic lidar sweep with per-point labels, and analytic amodal,
visible and vehicle grids.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid import Box2D, GridSpec, LayoutGrid, rasterize_boxes, write_bevg
from .mapgen import (LIDAR_TO_CAMERA, ROAD, SIDEWALK, SKY, VEHICLE, VOID, CameraIntrinsics, FrameRecord,
                     PoseSE3, write_depth_png, write_label_image, write_point_labels, write_poses,
                     write_velodyne)
from .roads import ROAD_KINDS, RoadLayout, make_road


class SceneError(ValueError):
    """Raised for inconsistent scene specifications."""


@dataclass(frozen=True)
class VehicleSpec:
    x: float
    z: float
    yaw: float = 0.0
    speed: float = 0.0  # m/s along the heading
    length: float = 4.5
    width: float = 2.0
    height: float = 1.5

    def at(self, time: float) -> "VehicleSpec":
        return replace(self, x=self.x + self.speed * time * np.sin(self.yaw),
                       z=self.z + self.speed * time * np.cos(self.yaw))


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "straight"
    road_width: float = 8.0
    curvature: float = 0.0
    sidewalk_width: float = 2.0
    lane_offset: float = 2.0  # camera sits this far right of the road centre
    junction_z: float = 25.0
    branch_side: int = 1
    vehicles: tuple[VehicleSpec, ...] = ()
    camera_speed: float = 8.0  # m/s
    frame_rate: float = 10.0
    camera_height: float = 1.65
    render_size: int = 512
    focal: float = 128.0
    max_range: float = 60.0
    lidar_spacing: float = 0.1
    lidar_forward: tuple[float, float] = (-20.0, 45.0)
    lidar_lateral: float = 25.0
    seed: int = 0

    def road(self) -> RoadLayout:
        return make_road(self.kind, self.road_width, self.curvature, self.sidewalk_width,
                         center_x=-self.lane_offset, junction_z=self.junction_z, branch_side=self.branch_side)

    def intrinsics(self) -> CameraIntrinsics:
        c = self.render_size / 2
        return CameraIntrinsics(self.focal, self.focal, c, c)

    def camera_pose(self, frame: int) -> PoseSE3:
        s = self.camera_speed * frame / self.frame_rate
        if self.kind == "curved" and self.curvature != 0:
            k = self.curvature
            theta = s * k
            return PoseSE3.from_yaw(theta, x=(1 - np.cos(theta)) / k, z=np.sin(theta) / k)
        return PoseSE3.from_yaw(0.0, x=0.0, z=s)


@dataclass
class SceneFrame:
    index: int
    image: np.ndarray  # (3, S, S) in [0, 1]
    static: LayoutGrid  # amodal road/sidewalk
    dynamic: LayoutGrid  # vehicle occupancy
    visible: LayoutGrid  # static cells not shadowed by vehicles
    pose: PoseSE3  # camera -> world
    depth: np.ndarray  # (S, S) z-depth in metres, 0 = no return
    labels: np.ndarray  # (S, S) class ids
    scan: np.ndarray | None  # (N, 4) velodyne-frame points + reflectance
    scan_labels: np.ndarray | None
    vehicles: list[tuple[int, Box2D]] = field(default_factory=list)  # camera-frame boxes with ids

    def record(self, intrinsics: CameraIntrinsics) -> FrameRecord:
        return FrameRecord(pose=self.pose, depth=self.depth, intrinsics=intrinsics, labels=self.labels,
                           scan=self.scan, scan_labels=self.scan_labels)


@dataclass
class SceneSequence:
    spec: SceneSpec
    grid_spec: GridSpec
    frames: list[SceneFrame]

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.spec.intrinsics()

    def records(self) -> list[FrameRecord]:
        return [f.record(self.intrinsics) for f in self.frames]

    def samples(self):
        from .training import TrainingSample
        return [TrainingSample(f.image, f.static, f.dynamic) for f in self.frames]

    def __len__(self):
        return len(self.frames)


# --- geometry helpers -----------------------------------------------------

def _vehicle_in_camera(v: VehicleSpec, pose_inv: PoseSE3, cam_yaw: float) -> Box2D:
    c = pose_inv.apply(np.array([v.x, 0.0, v.z]))
    return Box2D(float(c[0]), float(c[2]), v.length, v.width, v.yaw - cam_yaw)


def _segment_hits(px, py, pz, box: Box2D, top: float, bottom: float, ray: bool = False):
    """Slab test of the segments (or rays) ``s * (px, py, pz)`` from the origin against a box.

    ``s`` ranges over [0, 1] for segments and [0, inf) for rays. Returns
    ``(hit, s_entry, axis)`` where ``axis`` (0 along, 1 across, 2 vertical)
    is the slab that determined the entry point.
    """
    sn, cs = np.sin(box.yaw), np.cos(box.yaw)
    # box-local coordinates along the segment: u(s) = u0 + s du, etc.
    u0 = -(box.x * sn + box.z * cs)
    w0 = -(box.x * cs - box.z * sn)
    du = px * sn + pz * cs
    dw = px * cs - pz * sn
    lo = np.zeros(np.shape(px))
    hi = np.full(np.shape(px), np.inf if ray else 1.0)
    axis = np.full(np.shape(px), -1)
    for k, (o, d, lim_lo, lim_hi) in enumerate(((u0, du, -box.length / 2, box.length / 2),
                                                (w0, dw, -box.width / 2, box.width / 2),
                                                (0.0, py, top, bottom))):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lim_lo - o) / d
            t2 = (lim_hi - o) / d
        parallel = d == 0
        inside = (o >= lim_lo) & (o <= lim_hi)
        enter = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        leave = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        axis = np.where(enter > lo, k, axis)
        lo = np.maximum(lo, enter)
        hi = np.minimum(hi, leave)
    return lo <= hi, lo, axis


def shadow_mask(boxes: list[Box2D], heights: list[float], grid_spec: GridSpec) -> np.ndarray:
    """Cells whose centre is hidden from the camera (at height H over the origin) by a vehicle."""
    x, z = grid_spec.cell_centers()
    H = grid_spec.camera_height
    shadow = np.zeros(grid_spec.shape, bool)
    for box, h in zip(boxes, heights):
        hit, _, _ = _segment_hits(x, np.full_like(x, H), z, box, H - h, H)
        shadow |= hit
    return shadow


# --- rendering -------------------------------------------------------------

_CLASS_COLORS = {
    VOID: (0.28, 0.45, 0.22),
    ROAD: (0.36, 0.36, 0.39),
    SIDEWALK: (0.68, 0.62, 0.55),
    SKY: (0.60, 0.74, 0.92),
}
_VEHICLE_PALETTE = np.array([(0.75, 0.15, 0.12), (0.15, 0.30, 0.70), (0.85, 0.75, 0.20),
                             (0.90, 0.90, 0.90), (0.10, 0.10, 0.12), (0.20, 0.60, 0.35)])
_FACE_SHADE = np.array([0.85, 0.65, 1.0, 0.75])  # along-faces, across-faces, top, origin-inside


def _render(spec: SceneSpec, road: RoadLayout, pose: PoseSE3, boxes: list[Box2D], heights: list[float],
            colors: list[int]):
    S = spec.render_size
    K = spec.intrinsics()
    H = spec.camera_height
    v, u = np.mgrid[0:S, 0:S].astype(np.float64)
    dx = (u - K.cx) / K.fx
    dy = (v - K.cy) / K.fy
    with np.errstate(divide="ignore"):
        s_ground = np.where(dy > 0, H / np.where(dy > 0, dy, 1.0), np.inf)
    depth = s_ground.copy()
    which = np.full((S, S), -1)
    face = np.full((S, S), -1)
    for i, (box, h) in enumerate(zip(boxes, heights)):
        hit, s_in, axis = _segment_hits(dx, dy, np.ones_like(dx), box, H - h, H, ray=True)
        closer = hit & (s_in < depth) & (s_in > 0)
        depth = np.where(closer, s_in, depth)
        which = np.where(closer, i, which)
        face = np.where(closer, axis, face)
    # world coordinates of ground hits, for road classification
    finite = np.isfinite(depth)
    gz = np.where(finite, depth, 0.0)
    gx = gz * dx
    R, t = pose.rotation, pose.translation
    wx = R[0, 0] * gx + R[0, 2] * gz + t[0]
    wz = R[2, 0] * gx + R[2, 2] * gz + t[2]
    labels = np.full((S, S), SKY, np.int64)
    ground = finite & (which < 0)
    labels[ground] = road.classify(wx[ground], wz[ground])
    labels[which >= 0] = VEHICLE

    image = np.empty((S, S, 3))
    for cls, col in _CLASS_COLORS.items():
        image[labels == cls] = col
    # dashed centre marking helps the image carry road orientation
    on_road = labels == ROAD
    if on_road.any():
        dist = np.full((S, S), np.inf)
        dist[on_road] = road.strips[0].distance(wx[on_road], wz[on_road])
        dash = on_road & (dist < 0.15) & (np.mod(wz if spec.kind != "curved" else np.hypot(wx, wz), 6.0) < 3.0)
        image[dash] = (0.92, 0.92, 0.85)
    for i in range(len(boxes)):
        m = which == i
        shade = _FACE_SHADE[np.clip(face[m], 0, 3)]
        image[m] = _VEHICLE_PALETTE[colors[i] % len(_VEHICLE_PALETTE)] * shade[:, None]
    fog = np.clip(np.where(finite, depth, spec.max_range * 2) / (spec.max_range * 2), 0, 1)[..., None] * 0.6
    image = image * (1 - fog) + np.array(_CLASS_COLORS[SKY]) * fog

    depth = np.where(finite & (depth <= spec.max_range), depth, 0.0)
    return np.clip(image, 0, 1).transpose(2, 0, 1).astype(np.float32), depth, labels


def _lidar(spec: SceneSpec, road: RoadLayout, pose: PoseSE3, boxes: list[Box2D], heights: list[float]):
    H = spec.camera_height
    step = spec.lidar_spacing
    xs = np.arange(-spec.lidar_lateral, spec.lidar_lateral, step) + step / 2
    zs = np.arange(spec.lidar_forward[0], spec.lidar_forward[1], step) + step / 2
    gz, gx = np.meshgrid(zs, xs, indexing="ij")
    gx, gz = gx.ravel(), gz.ravel()
    keep = np.hypot(gx, gz) <= spec.max_range
    gx, gz = gx[keep], gz[keep]
    gy = np.full_like(gx, H)
    s_hit = np.full(gx.shape, np.inf)
    for box, h in zip(boxes, heights):
        hit, s_in, _ = _segment_hits(gx, gy, gz, box, H - h, H)
        s_hit = np.where(hit & (s_in < s_hit), s_in, s_hit)
    occluded = np.isfinite(s_hit)
    scale = np.where(occluded, s_hit, 1.0)
    pts = np.stack([gx * scale, gy * scale, gz * scale], axis=1)
    w = pose.apply(np.stack([gx, gy, gz], axis=1))
    labels = road.classify(w[:, 0], w[:, 2])
    labels[occluded] = VEHICLE
    refl = np.where(labels == ROAD, 0.2, np.where(labels == VEHICLE, 0.8, 0.4))
    velo = LIDAR_TO_CAMERA.inverse().apply(pts)
    return np.concatenate([velo, refl[:, None]], axis=1).astype(np.float32), labels.astype(np.int64)


def validate_scene(spec: SceneSpec) -> None:
    if spec.kind not in ROAD_KINDS:
        raise SceneError(f"unknown road kind {spec.kind!r}")
    road = spec.road()
    for i, v in enumerate(spec.vehicles):
        if road.classify(v.x, v.z) != ROAD:
            raise SceneError(f"vehicle {i} at ({v.x:.2f}, {v.z:.2f}) is off the road")


def generate_scene(spec: SceneSpec, n_frames: int, grid_spec: GridSpec | None = None,
                   with_lidar: bool = True) -> SceneSequence:
    if n_frames < 1:
        raise ValueError("n_frames must be at least 1")
    validate_scene(spec)
    grid_spec = grid_spec or GridSpec(camera_height=spec.camera_height)
    if grid_spec.camera_height != spec.camera_height:
        grid_spec = replace(grid_spec, camera_height=spec.camera_height)
    road = spec.road()
    cx, cz = grid_spec.cell_centers()
    frames = []
    for i in range(n_frames):
        pose = spec.camera_pose(i)
        inv = pose.inverse()
        cam_yaw = float(np.arctan2(pose.rotation[0, 2], pose.rotation[2, 2]))
        time = i / spec.frame_rate
        movers = [v.at(time) for v in spec.vehicles]
        boxes = [_vehicle_in_camera(v, inv, cam_yaw) for v in movers]
        heights = [v.height for v in movers]

        R, t = pose.rotation, pose.translation
        wx = R[0, 0] * cx + R[0, 2] * cz + t[0]
        wz = R[2, 0] * cx + R[2, 2] * cz + t[2]
        cls = road.classify(wx, wz)
        static = np.stack([cls == ROAD, cls == SIDEWALK], axis=-1).astype(np.float32)
        shadow = shadow_mask(boxes, heights, grid_spec)
        visible = static * ~shadow[..., None]
        dynamic = rasterize_boxes(boxes, grid_spec)

        image, depth, labels = _render(spec, road, pose, boxes, heights, list(range(len(boxes))))
        scan = scan_labels = None
        if with_lidar:
            scan, scan_labels = _lidar(spec, road, pose, boxes, heights)
        names = ("road", "sidewalk")
        frames.append(SceneFrame(
            index=i, image=image,
            static=LayoutGrid(static, grid_spec, names),
            dynamic=LayoutGrid(dynamic.values, grid_spec, ("vehicle",)),
            visible=LayoutGrid(visible, grid_spec, names),
            pose=pose, depth=depth, labels=labels, scan=scan, scan_labels=scan_labels,
            vehicles=list(enumerate(boxes)),
        ))
    return SceneSequence(spec, grid_spec, frames)


def random_scene(seed: int, kind: str | None = None, n_vehicles: int | None = None,
                 moving: bool = True) -> SceneSpec:
    """Sample a plausible scene; every random choice derives from ``seed``."""
    rng = np.random.default_rng(seed)
    kind = kind or ROAD_KINDS[rng.integers(len(ROAD_KINDS))]
    width = float(rng.uniform(7.0, 10.0))
    curvature = 0.0
    if kind == "curved":
        curvature = float(rng.choice([-1, 1]) * rng.uniform(1 / 80, 1 / 35))
    lane = width / 4
    spec = SceneSpec(kind=kind, road_width=width, curvature=curvature,
                     sidewalk_width=float(rng.uniform(1.5, 3.0)), lane_offset=lane,
                     junction_z=float(rng.uniform(15, 30)), branch_side=int(rng.choice([-1, 1])),
                     camera_speed=float(rng.uniform(5, 10)), seed=seed)
    n = int(rng.integers(1, 4)) if n_vehicles is None else n_vehicles
    road = spec.road()
    vehicles: list[VehicleSpec] = []
    attempts = 0
    while len(vehicles) < n and attempts < 200:
        attempts += 1
        z = float(rng.uniform(7, 35))
        lane_x = float(rng.choice([0.0, -2 * lane]))  # own lane or the oncoming one
        if kind == "curved":
            # place on the arc followed by the camera's lane, shifted to lane_x
            k = curvature
            theta = z * k
            r = 1 / k
            x = r - (r - lane_x) * np.cos(theta)
            zz = (r - lane_x) * np.sin(theta)
            v = VehicleSpec(float(x), float(zz), yaw=float(theta))
        else:
            oncoming = lane_x < 0
            speed = float(rng.uniform(2, 9)) if moving else 0.0
            v = VehicleSpec(lane_x, z, yaw=float(np.pi) if oncoming else 0.0, speed=speed)
        if road.classify(v.x, v.z) != ROAD:
            continue
        if any(np.hypot(v.x - o.x, v.z - o.z) < 7.0 for o in vehicles):
            continue
        vehicles.append(v)
    return replace(spec, vehicles=tuple(vehicles))


def straight_trajectory(n_frames: int, start: tuple[float, float] = (-2.0, 6.0), velocity: tuple[float, float] = (0.0, 6.0),
                        frame_rate: float = 10.0, size: tuple[float, float] = (4.5, 2.0),
                        grid_spec: GridSpec | None = None) -> tuple[list[LayoutGrid], np.ndarray]:
    """Occupancy grids of one vehicle moving at constant velocity (m/s) in the camera frame.

    Returns the per-frame grids and the ``(n_frames, 2)`` box centres.
    """
    grid_spec = grid_spec or GridSpec()
    t = np.arange(n_frames) / frame_rate
    centers = np.stack([start[0] + velocity[0] * t, start[1] + velocity[1] * t], axis=1)
    yaw = float(np.arctan2(velocity[0], velocity[1])) if any(velocity) else 0.0
    grids = [LayoutGrid(rasterize_boxes([Box2D(float(x), float(z), size[0], size[1], yaw)], grid_spec).values,
                        grid_spec, ("vehicle",)) for x, z in centers]
    return grids, centers


# --- dataset files ---------------------------------------------------------

def write_sequence(seq: SceneSequence, out: str | Path) -> Path:
    """Write a sequence in the on-disk layout read by ``generate-gt`` and ``train``."""
    from PIL import Image

    out = Path(out)
    for sub in ("images", "depth", "labels", "velodyne", "static", "dynamic", "visible"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    write_poses(out / "poses.txt", [f.pose for f in seq.frames])
    K = seq.intrinsics
    gs = seq.grid_spec
    (out / "calib.txt").write_text(
        f"fx {K.fx}\nfy {K.fy}\ncx {K.cx}\ncy {K.cy}\ncamera_height {gs.camera_height}\n"
        f"extent_forward {gs.extent_forward}\nextent_lateral {gs.extent_lateral}\n"
        f"rows {gs.rows}\ncols {gs.cols}\n")
    with open(out / "gt_tracks.txt", "w") as tracks:
        for f in seq.frames:
            name = f"{f.index:06d}"
            Image.fromarray(np.round(f.image.transpose(1, 2, 0) * 255).astype(np.uint8)).save(out / "images" / f"{name}.png")
            write_depth_png(out / "depth" / f"{name}.png", f.depth)
            write_label_image(out / "labels" / f"{name}.png", f.labels)
            if f.scan is not None:
                write_velodyne(out / "velodyne" / f"{name}.bin", f.scan)
                write_point_labels(out / "velodyne" / f"{name}.label", f.scan_labels)
            write_bevg(out / "static" / f"{name}.bevg", f.static)
            write_bevg(out / "dynamic" / f"{name}.bevg", f.dynamic)
            write_bevg(out / "visible" / f"{name}.bevg", f.visible)
            for vid, box in f.vehicles:
                if 0 <= box.z < gs.extent_forward and abs(box.x) < gs.extent_lateral / 2:
                    tracks.write(f"{f.index} {vid} {box.x:.4f} {box.z:.4f}\n")
    return out


def read_calib(path: str | Path) -> tuple[CameraIntrinsics, GridSpec]:
    vals = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, v = line.split()
            vals[k] = float(v)
    K = CameraIntrinsics(vals["fx"], vals["fy"], vals["cx"], vals["cy"])
    gs = GridSpec(vals.get("extent_forward", 40.0), vals.get("extent_lateral", 40.0),
                  int(vals.get("rows", 128)), int(vals.get("cols", 128)), vals.get("camera_height", 1.65))
    return K, gs
