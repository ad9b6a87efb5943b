"""Fit the forecaster to one straight-line trajectory and report per-step rollout IoU.

    python scripts/forecast_overfit.py --steps 400
"""
import argparse

import numpy as np

from bevlayout.experiments import forecast_overfit


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--pos-weight", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    res = forecast_overfit(args.steps, args.lr, args.pos_weight, args.seed)
    for k, iou in enumerate(res.ious, 1):
        print(f"step {k:2d}  IoU {iou:.3f}")
    print(f"min {min(res.ious):.3f}  mean {np.mean(res.ious):.3f}  fit time {res.seconds:.0f}s")


if __name__ == "__main__":
    main()
