"""Train-set IoU over training for several adversarial loss weights.

Each weight gets its own run; IoU is measured every ``--every`` steps. The
same 20 samples and narrow model are used throughout.

    python scripts/adversarial_weight_sweep.py --weights 0 0.02 1.0 --steps 2000
"""
import argparse
import time

import numpy as np

from bevlayout.experiments import overfit_samples
from bevlayout.grid import LayoutGrid, grid_iou
from bevlayout.training import TrainConfig, Trainer, predict


def score(model, samples):
    ps, pd = predict(model, np.stack([s.image for s in samples]))
    spec = samples[0].static_gt.spec
    static = np.mean([grid_iou(LayoutGrid(p.transpose(1, 2, 0), spec), s.static_gt) for p, s in zip(ps, samples)], 0)
    vehicle = np.mean([grid_iou(LayoutGrid(p.transpose(1, 2, 0), spec), s.dynamic_gt)[0] for p, s in zip(pd, samples)])
    return static, vehicle


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--weights", type=float, nargs="+", default=[0.0, 0.02, 1.0])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--every", type=int, default=250)
    args = p.parse_args()
    samples = overfit_samples()
    print("weight step seconds road sidewalk vehicle L_sup L_adv")
    for w in args.weights:
        cfg = TrainConfig(batch_size=4, learning_rate=1e-3, width_divisor=8, augment=False, log_every=0,
                          adversarial_enabled=w > 0, adversarial_weight=w)
        trainer = Trainer(cfg)
        start = time.perf_counter()
        while trainer.step < args.steps:
            trainer.fit(samples, steps=args.every)
            static, vehicle = score(trainer.model, samples)
            h = trainer.history[-1]
            print(f"{w:g} {trainer.step} {time.perf_counter() - start:.0f} {static[0]:.3f} {static[1]:.3f} "
                  f"{vehicle:.3f} {h['L_sup']:.4f} {h['L_adv']:.4f}", flush=True)


if __name__ == "__main__":
    main()
