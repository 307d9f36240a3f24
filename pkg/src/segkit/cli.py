"""Command-line entry point: ``segkit {synth,train,eval,predict,ablate}``.

Exit codes: 0 success, 2 configuration error, 3 I/O or data error,
4 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import model as M
from . import pnm
from .ablation import ablation_panel, topn_histogram
from .config import load_config
from .data import Palette, Sample, dataset_hash, load_dataset, render_labels, synth_generate, write_dataset
from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .training import evaluate, preprocess, train_modular, train_variant, write_curve

log = logging.getLogger("segkit")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _threads(args):
    n = args.threads
    if n is None and os.environ.get("SEGKIT_THREADS"):
        try:
            n = int(os.environ["SEGKIT_THREADS"])
        except ValueError:
            raise ConfigError(f"SEGKIT_THREADS must be an integer, got {os.environ['SEGKIT_THREADS']!r}")
    if n is None:
        return nullcontext()
    if n < 1:
        raise ConfigError(f"--threads must be >= 1, got {n}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _palette(path, num_classes):
    if path is None:
        return Palette.default(num_classes)
    pal = Palette.load(path)
    if len(pal.names) < num_classes:
        raise ConfigError(f"palette {path} defines {len(pal.names)} classes, network has {num_classes}")
    return pal


def _load_net(path):
    try:
        return M.load_checkpoint(path)
    except FileNotFoundError as exc:
        raise OSError(f"checkpoint not found: {path}") from exc


def _prepared(net, manifest):
    samples = load_dataset(manifest, num_classes=net.config.num_classes, multiple=net.config.multiple)
    if samples and samples[0].image.shape[1] != net.config.in_channels:
        raise ConfigError(
            f"data has {samples[0].image.shape[1]} channels but checkpoint config is "
            f"{asdict(net.config)}"
        )
    return preprocess(samples, net.preprocess)


# -- commands ------------------------------------------------------------------

def cmd_synth(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    train, test = synth_generate(cfg.synth)
    write_dataset(train, out, "train.txt")
    write_dataset(test, out, "test.txt")
    (out / "palette.json").write_text(Palette.default(4).to_json(), encoding="utf-8")
    print(f"wrote {len(train)} train + {len(test)} test samples to {out}")


def cmd_train(args):
    cfg = load_config(args.config)
    if args.variant in ("SM", "L4") and not args.from_ckpt:
        raise ConfigError(f"variant {args.variant} needs a source checkpoint: pass --from CKPT")
    manifest = cfg.resolve(cfg.data.train)
    if manifest is None:
        raise ConfigError("config data.train must name the training manifest")
    out = Path(args.out)
    net_cfg = cfg.network
    source = None
    if args.from_ckpt:
        source = _load_net(args.from_ckpt)
        if (source.config.num_classes, source.config.in_channels) != (net_cfg.num_classes, net_cfg.in_channels):
            raise ConfigError(
                "checkpoint and config disagree on classes/channels:\n"
                f"  checkpoint: {asdict(source.config)}\n  config:     {asdict(net_cfg)}"
            )
        net_cfg = source.config
    samples = load_dataset(manifest, num_classes=net_cfg.num_classes, multiple=net_cfg.multiple)
    if not samples:
        raise ConfigError(f"training manifest {manifest} is empty")
    if samples[0].image.shape[1] != net_cfg.in_channels:
        raise ConfigError(f"data has {samples[0].image.shape[1]} channels, config expects {net_cfg.in_channels}")
    lcn_cfg = cfg.lcn_config() if source is None else source.preprocess
    samples = preprocess(samples, lcn_cfg)

    variant = args.variant or "R"
    if variant == "R":
        net = M.init(net_cfg, cfg.seed)
        net.preprocess = lcn_cfg
        result = train_modular(net, samples, cfg.schedule)
    else:
        result = train_variant(source, samples, variant, cfg.schedule, seed=cfg.seed,
                               hidden_width=cfg.hidden_width)
    out.mkdir(parents=True, exist_ok=True)
    M.save_checkpoint(result.net, out / "checkpoint.sgnw")
    write_curve(result.curve, out / "loss.csv")
    run = {
        "command": "train",
        "variant": variant,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "dataset_sha256": dataset_hash(manifest),
        "source_checkpoint_sha256": (
            hashlib.sha256(Path(args.from_ckpt).read_bytes()).hexdigest() if args.from_ckpt else None
        ),
        "class_weights": [float(w) for w in result.weights],
    }
    (out / "run_manifest.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")
    final = result.curve[-1].loss if result.curve else float("nan")
    print(f"trained variant {variant}; final loss {final:.6f}; outputs in {out}")


def cmd_eval(args):
    net = _load_net(args.ckpt)
    samples = _prepared(net, args.data)
    metrics = evaluate(net, samples)
    pal = _palette(args.palette, net.config.num_classes)
    metrics.write(args.out, pal.names[:net.config.num_classes])
    print(f"class avg {metrics.class_avg:.2f}  global avg {metrics.global_avg:.2f}")


def cmd_predict(args):
    net = _load_net(args.ckpt)
    raw = pnm.read(args.image)
    img = raw.astype(np.float64) / 255.0
    img = img[..., None] if img.ndim == 2 else img
    image = np.ascontiguousarray(img.transpose(2, 0, 1))[None]
    if image.shape[1] != net.config.in_channels:
        raise ConfigError(
            f"image has {image.shape[1]} channels; checkpoint config is {asdict(net.config)}"
        )
    h, w = image.shape[2:]
    sample = Sample(image, np.zeros((h, w), dtype=np.uint8), Path(args.image).stem)
    sample = preprocess([sample], net.preprocess, multiple=net.config.multiple)[0]
    labels = M.predict(net, sample.image)[0][:h, :w].astype(np.uint8)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pal = _palette(args.palette, net.config.num_classes)
    pnm.write(out / f"{sample.id}_labels.pgm", labels)
    pnm.write(out / f"{sample.id}_render.ppm", render_labels(labels, pal))
    print(f"wrote {h}x{w} prediction to {out}")


def cmd_ablate(args):
    net = _load_net(args.ckpt)
    samples = _prepared(net, args.data)
    pal = _palette(args.palette, net.config.num_classes)
    out = Path(args.out)
    fractions = ablation_panel(net, samples, [args.layer], [args.topn], out, pal)
    prof = topn_histogram(samples, net, args.layer, args.topn)
    prof.write_csv(out / "histogram.csv")
    frac = fractions[(args.layer, args.topn)]
    print(f"layer {args.layer} top-{args.topn}: {100 * frac:.1f}% of maps activated")


def build_parser():
    p = _Parser(prog="segkit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS worker threads (default: $SEGKIT_THREADS or unlimited)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate the synthetic shapes dataset")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="modular training or a transfer variant")
    t.add_argument("--config")
    t.add_argument("--variant", choices=["R", "SM", "L4"])
    t.add_argument("--from", dest="from_ckpt")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="confusion-matrix metrics on a manifest")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--palette")
    e.add_argument("--out", default=".")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="label one PPM/PGM image")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--image", required=True)
    r.add_argument("--palette")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    a = sub.add_parser("ablate", help="top-N feature ablation panels")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--layer", type=int, required=True)
    a.add_argument("--topn", type=int, required=True)
    a.add_argument("--palette")
    a.add_argument("--out", default=".")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads(args):
            args.func(args)
    except ConfigError as exc:
        print(f"segkit {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"segkit {args.command}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DataError, CheckpointError) as exc:
        print(f"segkit {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
