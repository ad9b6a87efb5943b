"""Brute-force reference implementations used to check the vectorised code.

Everything here is written with plain loops and scalar arithmetic so it
shares no code path with the package.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from bevlayout.grid import cell_center


def raster(box, spec):
    """Point-in-rectangle over every cell centre."""
    out = np.zeros(spec.shape, np.float32)
    s, c = math.sin(box.yaw), math.cos(box.yaw)
    for r in range(spec.rows):
        for k in range(spec.cols):
            x, z = cell_center((r, k), spec)
            dx, dz = x - box.x, z - box.z
            if abs(dx * s + dz * c) < box.length / 2 and abs(dx * c - dz * s) < box.width / 2:
                out[r, k] = 1
    return out


def iou(a, b, mask=None):
    inter = union = 0
    for r, c in itertools.product(range(a.shape[0]), range(a.shape[1])):
        if mask is not None and not mask[r, c]:
            continue
        inter += bool(a[r, c] and b[r, c])
        union += bool(a[r, c] or b[r, c])
    return 1.0 if union == 0 else inter / union


def components(a):
    """8-connected flood fill with an explicit stack; sorted lists of cells."""
    seen = np.zeros(a.shape, bool)
    comps = []
    for r, c in itertools.product(range(a.shape[0]), range(a.shape[1])):
        if a[r, c] and not seen[r, c]:
            stack, cells = [(r, c)], []
            seen[r, c] = True
            while stack:
                i, j = stack.pop()
                cells.append((i, j))
                for di, dj in itertools.product((-1, 0, 1), repeat=2):
                    u, v = i + di, j + dj
                    if 0 <= u < a.shape[0] and 0 <= v < a.shape[1] and a[u, v] and not seen[u, v]:
                        seen[u, v] = True
                        stack.append((u, v))
            comps.append(sorted(cells))
    return sorted(comps)


def average_precision(scores, truth):
    """Step-wise PR integration, one operating point per distinct score."""
    scores = [float(s) for s in np.ravel(scores)]
    truth = [bool(t) for t in np.ravel(truth)]
    npos = sum(truth)
    if npos == 0:
        return None
    ap, prev_recall = 0.0, 0.0
    for tau in sorted(set(scores), reverse=True):
        tp = sum(1 for s, t in zip(scores, truth) if s >= tau and t)
        fp = sum(1 for s, t in zip(scores, truth) if s >= tau and not t)
        recall = tp / npos
        ap += (recall - prev_recall) * tp / (tp + fp)
        prev_recall = recall
    return ap


def registered_union(records, t, window, spec, class_map, ground_tolerance=0.5):
    """Fused grid for frame ``t``: every lidar point of every frame in the window,
    moved into frame ``t`` with a 4x4 homogeneous matrix and counted per
    (cell, class) in a dense array; the winning class is the first maximum."""
    n = len(records)
    lo, hi = max(0, t - (window - 1) // 2), min(n, t + window // 2 + 1)
    to_t = np.linalg.inv(records[t].pose.matrix())
    classes = sorted(class_map)
    counts = np.zeros((spec.rows, spec.cols, len(classes)), np.int64)
    for j in range(lo, hi):
        m = to_t @ records[j].pose.matrix()
        p = np.asarray(records[j].scan, np.float64)
        # velodyne (x fwd, y left, z up) -> camera (x right, y down, z fwd)
        cam = np.stack([-p[:, 1], -p[:, 2], p[:, 0], np.ones(len(p))])
        q = m @ cam
        labels = np.asarray(records[j].scan_labels)
        for k, c in enumerate(classes):
            sel = (labels == c) & (np.abs(q[1] - spec.camera_height) <= ground_tolerance)
            x, z = q[0, sel], q[2, sel]
            inside = (z >= 0) & (z < spec.extent_forward) & (x >= -spec.extent_lateral / 2) & (x < spec.extent_lateral / 2)
            x, z = x[inside], z[inside]
            rows = np.minimum(np.floor((spec.extent_forward - z) / spec.cell_size_forward).astype(int), spec.rows - 1)
            cols = np.minimum(np.floor((x + spec.extent_lateral / 2) / spec.cell_size_lateral).astype(int), spec.cols - 1)
            np.add.at(counts, (rows, cols, k), 1)
    out = np.zeros((spec.rows, spec.cols, max(class_map.values()) + 1), np.float32)
    total = counts.sum(axis=2)
    winner = counts.argmax(axis=2)
    for r in range(spec.rows):
        for c in range(spec.cols):
            if total[r, c]:
                out[r, c, class_map[classes[winner[r, c]]]] = 1
    return out


def segment_blocked(cam, target, box, top, bottom):
    """Does the straight segment from ``cam`` to ``target`` (3-vectors in the
    camera frame, y down) pass through the oriented vehicle box?

    Scalar slab test in the box's own axes.
    """
    s, c = math.sin(box.yaw), math.cos(box.yaw)
    d = [target[i] - cam[i] for i in range(3)]

    def local(v, origin):
        dx, dz = v[0] - (box.x if origin else 0.0), v[2] - (box.z if origin else 0.0)
        return dx * s + dz * c, dx * c - dz * s, v[1]

    p_along, p_across, p_y = local(cam, True)
    d_along, d_across, d_y = local(d, False)
    t0, t1 = 0.0, 1.0
    for p, dv, lo, hi in ((p_along, d_along, -box.length / 2, box.length / 2),
                          (p_across, d_across, -box.width / 2, box.width / 2),
                          (p_y, d_y, top, bottom)):
        if abs(dv) < 1e-15:
            if not lo <= p <= hi:
                return False
            continue
        a, b = (lo - p) / dv, (hi - p) / dv
        if a > b:
            a, b = b, a
        t0, t1 = max(t0, a), min(t1, b)
        if t0 > t1:
            return False
    return True


def ray_cast_shadow(boxes, heights, spec):
    """Cells whose centre cannot be seen from the camera at height H above the grid origin."""
    H = spec.camera_height
    out = np.zeros(spec.shape, bool)
    for r in range(spec.rows):
        for k in range(spec.cols):
            x, z = cell_center((r, k), spec)
            for box, h in zip(boxes, heights):
                if segment_blocked((0.0, 0.0, 0.0), (x, H, z), box, H - h, H):
                    out[r, k] = True
                    break
    return out


def central_difference(f, x, index, eps=1e-6):
    """d f / d x[index] by central differences, restoring ``x`` afterwards."""
    old = x[index].item()
    x[index] = old + eps
    up = float(f())
    x[index] = old - eps
    down = float(f())
    x[index] = old
    return (up - down) / (2 * eps)


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def parameter_gradient_errors(model, loss, n_instances, seed=0, eps=1e-7, floor=1e-5):
    """Relative errors between analytic and central-difference derivatives at
    ``n_instances`` random parameter coordinates.

    Coordinates whose analytic derivative is below ``floor`` are skipped: there
    the float64 roundoff of the loss, not the gradient, dominates the
    difference quotient.
    """
    import torch

    model.zero_grad()
    loss().backward()
    params = [p for p in model.parameters() if p.grad is not None]
    g = torch.Generator().manual_seed(seed)
    errors = []
    while len(errors) < n_instances:
        p = params[int(torch.randint(len(params), (1,), generator=g))]
        idx = tuple(int(torch.randint(n, (1,), generator=g)) for n in p.shape)
        analytic = p.grad[idx].item()
        if abs(analytic) < floor:
            continue
        with torch.no_grad():
            errors.append(relative_error(analytic, central_difference(loss, p.data, idx, eps)))
    return errors
