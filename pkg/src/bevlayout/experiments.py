"""Desk-scale experiments shared by the acceptance tests and ``scripts/``.

Each function is deterministic given its arguments and returns plain
numbers (plus, where useful, the fitted model) so reruns can be compared
for exact equality.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .evaluation import evaluate_static
from .forecast import ForecastConfig, fit_forecaster, precondition, rollout
from .grid import Box2D, GridSpec, LayoutGrid, grid_iou, rasterize_boxes
from .mapgen import FusionConfig, generate_ground_truth
from .synth import generate_scene, random_scene, straight_trajectory
from .tracker import Tracker, identity_switches, tracking_error
from .training import TrainConfig, Trainer, predict


@dataclass
class OverfitResult:
    static_miou: list[float]
    vehicle_miou: float
    final_losses: dict[str, float]
    seconds: float


def overfit_samples(n_samples: int = 20, n_scenes: int = 10, frames_per_scene: int = 12):
    """First and last frame of ``n_scenes`` random scenes (parked and moving traffic mixed)."""
    samples = []
    for seed in range(n_scenes):
        seq = generate_scene(random_scene(seed), frames_per_scene, with_lidar=False)
        s = seq.samples()
        samples += [s[0], s[-1]]
    return samples[:n_samples]


def overfit_layout(samples=None, steps: int = 2000, width_divisor: int = 8, learning_rate: float = 1e-3,
                   batch_size: int = 4, adversarial_weight: float = 0.02, seed: int = 0) -> OverfitResult:
    """Adversarial training on a small synthetic set, scored on that same set."""
    samples = samples if samples is not None else overfit_samples()
    cfg = TrainConfig(batch_size=batch_size, learning_rate=learning_rate, width_divisor=width_divisor,
                      adversarial_enabled=True, adversarial_weight=adversarial_weight,
                      prior_source="template_bank", augment=False, log_every=0, seed=seed)
    start = time.perf_counter()
    trainer = Trainer(cfg)
    history = trainer.fit(samples, steps=steps)
    ps, pd = predict(trainer.model, np.stack([s.image for s in samples]))
    spec = samples[0].static_gt.spec
    static = np.mean([grid_iou(LayoutGrid(p.transpose(1, 2, 0), spec), s.static_gt)
                      for p, s in zip(ps, samples)], axis=0)
    vehicle = np.mean([grid_iou(LayoutGrid(p.transpose(1, 2, 0), spec), s.dynamic_gt)[0]
                       for p, s in zip(pd, samples)])
    return OverfitResult([float(v) for v in static], float(vehicle), history[-1], time.perf_counter() - start)


def fusion_ablation(seed: int = 1, n_frames: int = 40, windows=(1, 40), kind: str = "straight",
                    n_vehicles: int = 3) -> dict[int, float]:
    """Occluded-region mIoU of fused ground truth against the amodal synthetic grid, per window size.

    The occluded region of each frame is where the amodal road+sidewalk is
    hidden behind vehicles in that frame's own view.
    """
    seq = generate_scene(random_scene(seed, kind, n_vehicles=n_vehicles, moving=False), n_frames)
    records = seq.records()
    amodal = [f.static for f in seq.frames]
    visible = [f.visible for f in seq.frames]
    out = {}
    for w in windows:
        fused, _ = generate_ground_truth(records, seq.grid_spec, FusionConfig(window_size=w))
        _, occl = evaluate_static(fused, amodal, visible)
        out[w] = float(occl)
    return out


def constant_velocity_tracks(n_frames: int = 50, spec: GridSpec | None = None):
    """Three vehicles in separate lanes at constant, different speeds.

    Returns per-frame vehicle grids and GT centres ``{frame: [(id, x, z)]}``.
    """
    spec = spec or GridSpec()
    starts = [(-8.0, 5.0, 2.5), (0.0, 30.0, -1.5), (8.0, 10.0, 2.0)]  # x, z, m/s forward at 10 fps
    grids, gt = [], {}
    for f in range(n_frames):
        boxes = [Box2D(x, z + v * f / 10.0, 4.0, 1.8) for x, z, v in starts]
        grids.append(rasterize_boxes(boxes, spec))
        gt[f] = [(i, b.x, b.z) for i, b in enumerate(boxes)]
    return grids, gt


def tracking_run(n_frames: int = 50) -> dict[str, float]:
    grids, gt = constant_velocity_tracks(n_frames)
    spec = grids[0].spec
    tracks = Tracker().run(grids)
    ez, ex, l2 = tracking_error(tracks, gt, spec=spec)
    switches, frags = identity_switches(tracks, gt, spec=spec)
    return {"tracks": len(tracks), "error_forward": ez, "error_lateral": ex, "error_l2": l2,
            "identity_switches": switches, "fragmentations": frags}


@dataclass
class ForecastResult:
    ious: list[float]
    seconds: float
    model: torch.nn.Module = field(repr=False)
    trajectory: list[LayoutGrid] = field(repr=False)


def forecast_overfit(steps: int = 400, lr: float = 3e-3, pos_weight: float = 5.0, seed: int = 0) -> ForecastResult:
    """Fit the forecaster to one straight-line trajectory and score its own rollout."""
    config = ForecastConfig()
    grids, _ = straight_trajectory(config.precondition_frames + config.horizon_frames)
    start = time.perf_counter()
    model, _ = fit_forecaster(grids, config, steps=steps, lr=lr, seed=seed, pos_weight=pos_weight)
    P = config.precondition_frames
    with torch.no_grad():
        pred = rollout(precondition(grids[:P], model, config), model, config)[0, :, 0].numpy()
    ious = [float(grid_iou(LayoutGrid(p[..., None], config.grid_spec), g)[0]) for p, g in zip(pred, grids[P:])]
    return ForecastResult(ious, time.perf_counter() - start, model, grids)
