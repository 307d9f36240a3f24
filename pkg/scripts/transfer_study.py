"""Transfer from synthetic set A to an illumination-shifted set B:
source checkpoint as-is, then variants L4, SM and R trained on B.

    python scripts/transfer_study.py [--seed 0] [--variants L4 SM R]
"""

import argparse
import time

from segkit import model as M
from segkit.data import SynthConfig, synth_generate
from segkit.training import TrainSchedule, default_lcn, evaluate, preprocess, train_modular, train_variant


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--features", type=int, default=8)
    ap.add_argument("--variants", nargs="+", default=["L4", "SM", "R"])
    args = ap.parse_args()
    lc = default_lcn(3)
    a_train, a_test = synth_generate(SynthConfig(num_train=40, seed=10 * args.seed))
    b_train, b_test = synth_generate(SynthConfig(num_train=40, seed=10 * args.seed + 1,
                                                 tint=(1.5, 0.8, 0.5), gradient=1.5))
    a_train, a_test, b_train, b_test = (preprocess(s, lc) for s in (a_train, a_test, b_train, b_test))
    cfg = M.NetworkConfig(depth=4, features=args.features, kernel_size=7, num_classes=4)
    sched = TrainSchedule(epochs_per_stage=2, iterations=15, batch_size=10, seed=args.seed)

    t0 = time.time()
    source = train_modular(M.init(cfg, args.seed), a_train, sched).net
    print(f"source trained on A in {time.time() - t0:.0f}s")
    for name, test in (("A", a_test), ("B", b_test)):
        m = evaluate(source, test)
        print(f"  source on {name}: global {m.global_avg:5.1f}  class avg {m.class_avg:5.1f}")
    for v in args.variants:
        t0 = time.time()
        res = train_variant(source if v != "R" else cfg, b_train, v, sched, seed=args.seed)
        m = evaluate(res.net, b_test)
        print(f"  {v:2s} on B: global {m.global_avg:5.1f}  class avg {m.class_avg:5.1f}  ({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
