"""Paired runs with and without inverse-frequency class weights on an
imbalanced synthetic set (one thin, low-contrast pole per image).

    python scripts/weighting_study.py [--seeds 0 1 2]
"""

import argparse
import time

import numpy as np

from segkit import model as M
from segkit.data import POLE, SYNTH_CLASSES, SynthConfig, synth_generate
from segkit.metrics import class_frequencies
from segkit.training import TrainSchedule, default_lcn, evaluate, preprocess, train_modular


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--features", type=int, default=8)
    args = ap.parse_args()
    cfg = M.NetworkConfig(depth=2, features=args.features, kernel_size=7, num_classes=4)
    print("seed weighting  global  class-avg  " + "  ".join(f"{c:>10s}" for c in SYNTH_CLASSES))
    for seed in args.seeds:
        synth = SynthConfig(num_train=40, num_test=20, poles=(1, 1), pole_width=(1, 1),
                            pole_color=(0.45, 0.45, 0.55), seed=seed)
        train, test = synth_generate(synth)
        f = class_frequencies([s.labels for s in train], 4)
        lc = default_lcn(3)
        train, test = preprocess(train, lc), preprocess(test, lc)
        for weighting in (True, False):
            t0 = time.time()
            sched = TrainSchedule(epochs_per_stage=1, iterations=10, batch_size=10,
                                  weighting=weighting, seed=seed)
            m = evaluate(train_modular(M.init(cfg, seed), train, sched).net, test)
            cells = "  ".join(f"{v:10.1f}" for v in m.per_class)
            print(f"{seed:4d} {str(weighting):9s} {m.global_avg:7.1f} {m.class_avg:10.1f}  {cells}"
                  f"   ({time.time() - t0:.0f}s, pole freq {100 * f[POLE]:.2f}%)")


if __name__ == "__main__":
    np.set_printoptions(precision=1)
    main()
