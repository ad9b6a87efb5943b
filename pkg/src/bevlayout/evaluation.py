"""Layout metrics: static/occluded mIoU, vehicle mIoU and two flavours of AP."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .grid import GridMismatchError, LayoutGrid, connected_components, grid_iou, occlusion_mask, union_channels

DEFAULT_AP_THRESHOLDS = tuple(np.round(np.arange(0.95, 0.0, -0.05), 2))


@dataclass
class EvalReport:
    road_miou: float | None = None
    sidewalk_miou: float | None = None
    combined_occluded_miou: float | None = None
    vehicle_miou: float | None = None
    vehicle_map_cell: float | None = None
    vehicle_map_instance: float | None = None
    frames_per_second: float | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if f.name == "frames_per_second":
                if not v > 0:
                    raise ValueError("frames_per_second must be positive")
            elif not 0.0 <= v <= 1.0:
                raise ValueError(f"{f.name}={v} outside [0, 1]")

    def to_text(self) -> str:
        return "".join(f"{k} = {'none' if v is None else f'{v:.6f}'}\n" for k, v in asdict(self).items())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def save(self, stem: str | Path) -> None:
        stem = Path(stem)
        stem.with_suffix(".txt").write_text(self.to_text())
        stem.with_suffix(".json").write_text(self.to_json())

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        vals = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                vals[k] = None if v == "none" else float(v)
        return cls(**vals)


def _check_lists(preds, gts):
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions but {len(gts)} ground-truth grids")
    for p, g in zip(preds, gts):
        if p.spec != g.spec:
            raise GridMismatchError("prediction and ground truth specs differ")


def evaluate_static(preds: Sequence[LayoutGrid], gts: Sequence[LayoutGrid],
                    visibles: Sequence[LayoutGrid] | None = None, threshold: float = 0.5):
    """Per-channel mIoU over frames, plus occluded-region mIoU of the channel union.

    The occluded region of a frame is ``occlusion_mask(visible, gt)`` on
    the road+sidewalk union. Without ``visibles`` the occluded score is
    ``None``.
    """
    _check_lists(preds, gts)
    if not preds:
        raise ValueError("nothing to evaluate")
    per_frame = np.stack([grid_iou(p, g, threshold) for p, g in zip(preds, gts)])
    occluded = None
    if visibles is not None:
        if len(visibles) != len(gts):
            raise ValueError("one visible grid per frame is required")
        scores = []
        for p, g, v in zip(preds, gts, visibles):
            gu = union_channels(g.binarize(threshold))
            mask = occlusion_mask(union_channels(v.binarize(0.5)), gu)
            scores.append(grid_iou(union_channels(p.binarize(threshold)), gu, 0.5, mask)[0])
        occluded = float(np.mean(scores))
    return per_frame.mean(axis=0), occluded


def average_precision_cells(scores: np.ndarray, truth: np.ndarray) -> float | None:
    """Area under the step precision-recall curve swept over every distinct score.

    Returns ``None`` when there are no positive cells.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    npos = int(truth.sum())
    if npos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], truth[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    # last index of each run of equal scores: the operating point "score >= value"
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / npos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def _blob_iou(a, b) -> float:
    sa = set(map(tuple, a.cells))
    sb = set(map(tuple, b.cells))
    return len(sa & sb) / len(sa | sb)


def match_blobs(pred_blobs, gt_blobs, iou_min: float = 0.5) -> list[tuple[int, int, float]]:
    """Greedy one-to-one matching in descending IoU order."""
    pairs = []
    for i, p in enumerate(pred_blobs):
        for j, g in enumerate(gt_blobs):
            iou = _blob_iou(p, g)
            if iou >= iou_min:
                pairs.append((iou, i, j))
    pairs.sort(key=lambda x: (-x[0], x[1], x[2]))
    used_p, used_g, out = set(), set(), []
    for iou, i, j in pairs:
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
            out.append((i, j, iou))
    return out


def average_precision_instances(preds: Sequence[LayoutGrid], gts: Sequence[LayoutGrid],
                                thresholds: Sequence[float] = DEFAULT_AP_THRESHOLDS,
                                iou_min: float = 0.5) -> float | None:
    """Blob-level AP: at each confidence threshold, predicted blobs are matched
    to ground-truth blobs at IoU >= ``iou_min``; the resulting
    precision-recall points are integrated under their precision envelope.
    """
    gt_blobs = [connected_components(g, 0.5) for g in gts]
    npos = sum(len(b) for b in gt_blobs)
    if npos == 0:
        return None
    points = []
    for tau in sorted(thresholds, reverse=True):
        tp = fp = 0
        for p, gb in zip(preds, gt_blobs):
            pb = connected_components(p, tau)
            m = len(match_blobs(pb, gb, iou_min))
            tp += m
            fp += len(pb) - m
        precision = tp / (tp + fp) if tp + fp else 1.0
        points.append((tp / npos, precision))
    recall = np.array([0.0] + [r for r, _ in points])
    precision = np.array([1.0] + [p for _, p in points])
    order = np.argsort(recall, kind="stable")
    recall, precision = recall[order], precision[order]
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(np.diff(recall) * envelope[1:]))


def evaluate_dynamic(preds: Sequence[LayoutGrid], gts: Sequence[LayoutGrid], threshold: float = 0.5,
                     ap_thresholds: Sequence[float] = DEFAULT_AP_THRESHOLDS):
    """Vehicle mIoU, cell-level AP and instance-level AP."""
    _check_lists(preds, gts)
    if not preds:
        raise ValueError("nothing to evaluate")
    miou = float(np.mean([grid_iou(p, g, threshold)[0] for p, g in zip(preds, gts)]))
    scores = np.concatenate([p.values[:, :, 0].ravel() for p in preds])
    truth = np.concatenate([g.values[:, :, 0].ravel() >= 0.5 for g in gts])
    return miou, average_precision_cells(scores, truth), average_precision_instances(preds, gts, ap_thresholds)


def evaluate(static_preds=None, static_gts=None, visibles=None, dynamic_preds=None, dynamic_gts=None) -> EvalReport:
    report = EvalReport()
    if static_preds is not None:
        miou, occl = evaluate_static(static_preds, static_gts, visibles)
        report.road_miou = float(miou[0])
        report.sidewalk_miou = float(miou[1]) if len(miou) > 1 else None
        report.combined_occluded_miou = occl
    if dynamic_preds is not None:
        report.vehicle_miou, report.vehicle_map_cell, report.vehicle_map_instance = \
            evaluate_dynamic(dynamic_preds, dynamic_gts)
    return report


@torch.no_grad()
def throughput_report(model, n_warmup: int = 2, n_timed: int = 5, image_size: int = 512) -> float:
    """Frames per second of single-image encoder + decoder passes (no discriminators)."""
    if n_timed < 1:
        raise ValueError("n_timed must be at least 1")
    model.eval()
    x = torch.rand(1, 3, image_size, image_size)
    for _ in range(n_warmup):
        model(x)
    start = time.perf_counter()
    for _ in range(n_timed):
        model(x)
    elapsed = time.perf_counter() - start
    return n_timed / max(elapsed, 1e-12)
