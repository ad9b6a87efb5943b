"""Least-squares supervised and adversarial objectives.

All reductions are means over cells (or patches) and batch, so magnitudes do
not depend on grid resolution. Inputs may be torch tensors or numpy arrays;
torch inputs keep their autograd graph.
"""
from __future__ import annotations

import torch


def _t(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def _mse(pred, target):
    pred, target = _t(pred), _t(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def supervised_loss(pred_static, gt_static, pred_dynamic, gt_dynamic, static_weight=1.0, dynamic_weight=1.0):
    return static_weight * _mse(pred_static, gt_static) + dynamic_weight * _mse(pred_dynamic, gt_dynamic)


def generator_adversarial_loss(fake_scores_static, fake_scores_dynamic):
    """Pushes the discriminators' scores on generated layouts towards 1."""
    s, d = _t(fake_scores_static), _t(fake_scores_dynamic)
    return ((s - 1) ** 2).mean() + ((d - 1) ** 2).mean()


def discriminator_loss(real_scores, fake_scores):
    """Real patches are pushed to 1, generated ones to 0."""
    r, f = _t(real_scores), _t(fake_scores)
    return ((r - 1) ** 2).mean() + (f ** 2).mean()
