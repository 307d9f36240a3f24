"""Synthesise the desk dataset, train the desk config and evaluate it.

    python scripts/desk_run.py [--config configs/desk.json] [--out runs/desk]
"""

import argparse
import json
import shutil
import sys
from pathlib import Path

from segkit.cli import main as cli


def run(*argv):
    code = cli(list(argv))
    if code:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(Path(__file__).parents[1] / "configs" / "desk.json"))
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--threads", default="1")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "config.json"
    shutil.copy(args.config, cfg)
    run("synth", "--config", str(cfg), "--out", str(out / "data"))
    run("--threads", args.threads, "train", "--config", str(cfg), "--out", str(out / "run"))
    ckpt = str(out / "run" / "checkpoint.sgnw")
    for split in ("train", "test"):
        run("eval", "--ckpt", ckpt, "--data", str(out / "data" / f"{split}.txt"),
            "--out", str(out / f"eval_{split}"))
        m = json.loads((out / f"eval_{split}" / "metrics.json").read_text())
        print(f"{split:5s} global {m['global_avg']:6.2f}  class avg {m['class_avg']:6.2f}  {m['per_class']}")


if __name__ == "__main__":
    main()
