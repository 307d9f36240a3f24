"""Mini-batch L-BFGS training: the modular (stage-wise) schedule, the
transfer variants R / SM / L4, preprocessing and evaluation helpers."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from .data import Sample, stack
from .errors import ConfigError, NumericalError
from .lcn import LcnConfig, default_groups, lcn
from .metrics import (
    class_frequencies,
    confusion_matrix,
    inverse_frequency_weights,
    metrics_from_confusion,
    weighted_cross_entropy,
)
from .optim import LbfgsState, lbfgs_minimize
from .tensor import FlatVector

log = logging.getLogger(__name__)

SOFTMAX_MODES = ("joint", "fixed", "pretrain")
L4_EPOCHS = 2


@dataclass
class TrainSchedule:
    epochs_per_stage: int = 10
    iterations: int = 20  # L-BFGS iterations per mini-batch
    batch_size: int = 25
    stages: list | None = None  # encoder-decoder pairs to train, outermost first
    softmax_mode: str = "joint"
    weighting: bool = True  # inverse-frequency class weights
    history: int = 10
    seed: int = 0

    def validate(self, depth):
        if self.epochs_per_stage < 0 or self.iterations < 0 or self.batch_size < 1:
            raise ConfigError(f"invalid schedule sizes: {self}")
        if self.softmax_mode not in SOFTMAX_MODES:
            raise ConfigError(f"softmax_mode must be one of {SOFTMAX_MODES}, got {self.softmax_mode!r}")
        stages = self.stage_list(depth)
        if any(not 1 <= s <= depth for s in stages) or stages != sorted(set(stages)):
            raise ConfigError(f"stages {stages} must be increasing pair indices within 1..{depth}")

    def stage_list(self, depth):
        return list(range(1, depth + 1)) if self.stages is None else list(self.stages)


@dataclass
class LossRecord:
    stage: int
    epoch: int
    batch: int
    iteration: int
    loss: float


@dataclass
class TrainResult:
    net: M.SegNet
    curve: list = field(default_factory=list)
    weights: np.ndarray | None = None

    def batch_final_losses(self, stage):
        last = {}
        for r in self.curve:
            if r.stage == stage:
                last[(r.epoch, r.batch)] = r.loss
        return [last[k] for k in sorted(last)]


def write_curve(records, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["stage", "epoch", "batch", "iteration", "loss"])
        for r in records:
            wr.writerow([r.stage, r.epoch, r.batch, r.iteration, repr(float(r.loss))])


# -- preprocessing -----------------------------------------------------------

def preprocess(samples, cfg: LcnConfig | None, multiple=1):
    """Pad to ``multiple`` (reflection, void labels) then apply LCN."""
    from .data import pad_sample

    out = []
    for s in samples:
        if multiple > 1:
            s = pad_sample(s, multiple)
        img = s.image if cfg is None else lcn(s.image, cfg)
        out.append(Sample(img, s.labels, s.id, s.orig_shape))
    return out


def default_lcn(channels):
    return LcnConfig(groups=default_groups(channels))


# -- sampling / objective --------------------------------------------------------

def sample_minibatch(dataset, size, rng):
    """``size`` draws, uniform with replacement."""
    if len(dataset) == 0:
        raise ConfigError("cannot sample a mini-batch from an empty dataset")
    idx = rng.integers(0, len(dataset), size=size)
    return [dataset[i] for i in idx]


def class_weights(samples, num_classes, weighting=True):
    if not weighting:
        return np.ones(num_classes)
    return inverse_frequency_weights(class_frequencies([s.labels for s in samples], num_classes))


def make_objective(net: M.SegNet, images, labels, weights, depth, layout):
    """Closure mapping the flat trainable vector to ``(loss, grad)``."""

    def objective(theta):
        net.set_params(FlatVector(theta, layout))
        trace = M.forward(net, images, depth=depth)
        loss, g_logits = weighted_cross_entropy(trace.probs, labels, weights)
        grads = M.backward(net, trace, grad_logits=g_logits)
        return loss, np.concatenate([grads[name].ravel() for name, _, _ in layout])

    return objective


def _train_stage(net, samples, schedule, weights, stage, depth, rng, curve, epochs=None, on_batch=None):
    epochs = schedule.epochs_per_stage if epochs is None else epochs
    batches = math.ceil(len(samples) / schedule.batch_size)
    for epoch in range(1, epochs + 1):
        for b in range(1, batches + 1):
            batch = sample_minibatch(samples, schedule.batch_size, rng)
            images, labels = stack(batch)
            vec = net.trainable_vector(depth)
            if vec.data.size == 0 or schedule.iterations == 0:
                continue
            objective = make_objective(net, images, labels, weights, depth, vec.layout)
            state = LbfgsState(history=schedule.history)  # fresh curvature per batch

            steps = []
            try:
                theta = lbfgs_minimize(objective, vec.data, state, schedule.iterations,
                                       lambda it, loss: steps.append((it, loss)))
            except NumericalError as exc:
                ids = ",".join(s.id for s in batch)
                log.error("stage %d epoch %d batch %d aborted: %s (samples %s)", stage, epoch, b, exc, ids)
                raise NumericalError(f"stage {stage}, epoch {epoch}, batch {b}: {exc}") from exc
            for it, loss in [(0, state.losses[0])] + steps:
                curve.append(LossRecord(stage, epoch, b, it, loss))
            net.set_params(FlatVector(theta, vec.layout))
            log.info("stage %d epoch %d batch %d loss %.5f -> %.5f",
                     stage, epoch, b, state.losses[0], state.losses[-1])
            if on_batch is not None:
                on_batch(stage, epoch, b, net)


def train_modular(net: M.SegNet, samples, schedule: TrainSchedule, weights=None,
                  on_batch=None) -> TrainResult:
    """Stage-wise training: stage ``s`` inserts pair ``s`` and optimises only
    ``enc{s}``/``dec{s}`` with shallower pairs frozen. The soft-max is trained
    in stage 1 (``joint``), beforehand (``pretrain``) or never (``fixed``), and
    is frozen afterwards. Returns a trained copy; ``net`` is left untouched.

    ``on_batch(stage, epoch, batch, net)`` is called after every optimised
    mini-batch (stage 0 is the soft-max pre-training pass)."""
    net = net.copy()
    cfg = net.config
    schedule.validate(cfg.depth)
    if len(samples) == 0:
        raise ConfigError("training set is empty")
    if weights is None:
        weights = class_weights(samples, cfg.num_classes, schedule.weighting)
    rng = np.random.default_rng(schedule.seed)
    curve = []
    stages = schedule.stage_list(cfg.depth)
    for stage in stages:
        if stage == 1 and schedule.softmax_mode == "pretrain":
            M.set_freeze(net, ["softmax"])
            _train_stage(net, samples, schedule, weights, 0, 1, rng, curve, epochs=1, on_batch=on_batch)
        train_softmax = stage == 1 and schedule.softmax_mode == "joint"
        M.set_freeze(net, [f"enc{stage}", f"dec{stage}"] + (["softmax"] if train_softmax else []))
        _train_stage(net, samples, schedule, weights, stage, stage, rng, curve, on_batch=on_batch)
    return TrainResult(net, curve, weights)


def train_variant(source, samples, variant, schedule: TrainSchedule, seed=0,
                  hidden_width=64) -> TrainResult:
    """Transfer-learning variants.

    ``R``: fresh init from ``source`` (a :class:`NetworkConfig`, or a net whose
    config is reused) and the full modular schedule. ``SM``: body of the
    ``source`` net frozen, new hidden-layer soft-max head trained. ``L4``: only
    the deepest encoder-decoder pair of ``source`` trained, for two epochs.
    """
    if variant == "R":
        cfg = source if isinstance(source, M.NetworkConfig) else getattr(source, "config", None)
        if cfg is None:
            raise ConfigError("variant R needs a NetworkConfig or a source network")
        net = M.init(cfg, seed)
        if isinstance(source, M.SegNet):
            net.preprocess = source.preprocess
        return train_modular(net, samples, schedule)
    if not isinstance(source, M.SegNet):
        raise ConfigError(f"variant {variant} needs a source checkpoint")
    cfg = source.config
    if variant == "SM":
        net = M.attach_head(source, "hidden", hidden_width, seed=seed)
        M.set_freeze(net, ["hidden", "softmax"])
        weights = class_weights(samples, cfg.num_classes, schedule.weighting)
        rng = np.random.default_rng(schedule.seed)
        curve = []
        _train_stage(net, samples, schedule, weights, cfg.depth, cfg.depth, rng, curve)
        return TrainResult(net, curve, weights)
    if variant == "L4":
        net = source.copy()
        sched = replace(schedule, stages=[cfg.depth], softmax_mode="fixed",
                        epochs_per_stage=L4_EPOCHS)
        return train_modular(net, samples, sched)
    raise ConfigError(f"unknown variant {variant!r}; expected R, SM or L4")


# -- evaluation ----------------------------------------------------------------

def predict_samples(net: M.SegNet, samples, chunk=10, ablate=None):
    """Label maps cropped back to each sample's original size."""
    out = []
    for i in range(0, len(samples), chunk):
        group = samples[i:i + chunk]
        shapes = {s.image.shape for s in group}
        if len(shapes) > 1:
            preds = [M.predict(net, s.image, ablate=ablate)[0] for s in group]
        else:
            images, _ = stack(group)
            preds = list(M.predict(net, images, ablate=ablate))
        for s, p in zip(group, preds):
            h, w = s.orig_shape
            out.append(p[:h, :w])
    return out


def evaluate(net: M.SegNet, samples, chunk=10):
    """Confusion matrix and accuracies over the samples' original (unpadded) pixels."""
    preds = predict_samples(net, samples, chunk)
    truth = [s.labels[:s.orig_shape[0], :s.orig_shape[1]] for s in samples]
    return metrics_from_confusion(confusion_matrix(truth, preds, net.config.num_classes))
