"""Occluded-region mIoU of fused ground truth for several window sizes.

    python scripts/fusion_ablation.py --windows 1 5 10 20 40 --seeds 1 2
"""
import argparse

from bevlayout.experiments import fusion_ablation


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--windows", type=int, nargs="+", default=[1, 40])
    p.add_argument("--seeds", type=int, nargs="+", default=[1])
    p.add_argument("--kind", default="straight", choices=("straight", "curved", "t_junction", "crossroads"))
    p.add_argument("--frames", type=int, default=40)
    args = p.parse_args()
    print("seed " + " ".join(f"W={w}" for w in args.windows))
    for seed in args.seeds:
        scores = fusion_ablation(seed, args.frames, tuple(args.windows), args.kind)
        print(f"{seed} " + " ".join(f"{scores[w]:.3f}" for w in args.windows), flush=True)


if __name__ == "__main__":
    main()
