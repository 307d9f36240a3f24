"""Top-N feature ablation over every encoder layer of a checkpoint.

    python scripts/ablation_study.py --ckpt runs/desk/run/checkpoint.sgnw \
        --data runs/desk/data/test.txt --out runs/desk/ablation [--topn 1 2 4]
"""

import argparse

from segkit import model as M
from segkit.ablation import ablation_panel
from segkit.data import load_dataset
from segkit.training import preprocess


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ckpt", required=True)
    ap.add_argument("--data", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--topn", type=int, nargs="+", default=[1, 2, 4])
    ap.add_argument("--limit", type=int, default=6, help="samples to render")
    args = ap.parse_args()
    net = M.load_checkpoint(args.ckpt)
    samples = load_dataset(args.data, num_classes=net.config.num_classes, multiple=net.config.multiple)
    samples = preprocess(samples[:args.limit], net.preprocess)
    layers = list(range(1, net.config.depth + 1))
    fractions = ablation_panel(net, samples, layers, args.topn, args.out)
    print("layer  " + "  ".join(f"top-{n:<3d}" for n in args.topn))
    for layer in layers:
        print(f"{layer:5d}  " + "  ".join(f"{100 * fractions[(layer, n)]:6.1f}%" for n in args.topn))


if __name__ == "__main__":
    main()
