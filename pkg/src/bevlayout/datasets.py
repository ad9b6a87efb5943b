"""Reading the on-disk sequence layout written by :func:`bevlayout.synth.write_sequence`.

::

    DIR/poses.txt            one 3x4 camera->world transform per line
    DIR/calib.txt            intrinsics and grid geometry, ``key value`` lines
    DIR/images/NNNNNN.png    RGB input
    DIR/depth/NNNNNN.png     16-bit depth in millimetres
    DIR/labels/NNNNNN.png    8-bit class ids
    DIR/velodyne/NNNNNN.bin  float32 (x, y, z, reflectance); .label holds uint8 classes
    DIR/{static,dynamic,visible}/NNNNNN.bevg
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .grid import LayoutGrid, read_bevg
from .mapgen import (FrameRecord, read_depth_png, read_label_image, read_point_labels, read_poses,
                     read_velodyne)
from .model import IMAGE_SIZE
from .synth import read_calib


def frame_names(directory: str | Path, suffix: str) -> list[str]:
    return sorted(p.stem for p in Path(directory).glob(f"*{suffix}"))


def load_grids(directory: str | Path) -> tuple[list[str], list[LayoutGrid]]:
    names = frame_names(directory, ".bevg")
    return names, [read_bevg(Path(directory) / f"{n}.bevg") for n in names]


def load_image(path: str | Path, size: int = IMAGE_SIZE) -> np.ndarray:
    im = Image.open(path).convert("RGB")
    if im.size != (size, size):
        im = im.resize((size, size), Image.BILINEAR)
    return np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0


def load_samples(root: str | Path, static_dir: str | Path | None = None):
    from .training import TrainingSample

    root = Path(root)
    static_dir = Path(static_dir) if static_dir else root / "static"
    names = frame_names(root / "images", ".png")
    if not names:
        raise FileNotFoundError(f"no images found under {root / 'images'}")
    return [TrainingSample(load_image(root / "images" / f"{n}.png"),
                           read_bevg(static_dir / f"{n}.bevg"),
                           read_bevg(root / "dynamic" / f"{n}.bevg")) for n in names]


def load_records(root: str | Path, modality: str) -> tuple[list[str], list[FrameRecord]]:
    """Frame records for ground-truth generation; ``modality`` is ``lidar`` or ``monocular_depth``."""
    root = Path(root)
    K, _ = read_calib(root / "calib.txt")
    poses = read_poses(root / "poses.txt")
    if modality == "lidar":
        names = frame_names(root / "velodyne", ".bin")
    else:
        names = frame_names(root / "depth", ".png")
    if not names:
        raise FileNotFoundError(f"no {modality} frames under {root}")
    records = []
    for i, n in enumerate(names):
        pose = poses[i] if i < len(poses) else None
        if modality == "lidar":
            lab = root / "velodyne" / f"{n}.label"
            records.append(FrameRecord(pose=pose, scan=read_velodyne(root / "velodyne" / f"{n}.bin"),
                                       scan_labels=read_point_labels(lab) if lab.exists() else None))
        else:
            lab = root / "labels" / f"{n}.png"
            records.append(FrameRecord(pose=pose, depth=read_depth_png(root / "depth" / f"{n}.png"), intrinsics=K,
                                       labels=read_label_image(lab) if lab.exists() else None))
    return names, records
