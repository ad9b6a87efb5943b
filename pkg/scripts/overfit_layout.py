"""Adversarial overfit on 20 synthetic samples with the narrow model.

    python scripts/overfit_layout.py --steps 2000 --adversarial-weight 0.02
"""
import argparse
import json

from bevlayout.experiments import overfit_layout, overfit_samples


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--width-divisor", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--adversarial-weight", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    res = overfit_layout(overfit_samples(), steps=args.steps, width_divisor=args.width_divisor,
                         learning_rate=args.learning_rate, batch_size=args.batch_size,
                         adversarial_weight=args.adversarial_weight, seed=args.seed)
    print(json.dumps({"static_miou": res.static_miou, "vehicle_miou": res.vehicle_miou,
                      "final_losses": res.final_losses, "seconds": round(res.seconds, 1)}, indent=2))


if __name__ == "__main__":
    main()
