import csv

import numpy as np
import pytest
from scipy.stats import chisquare

from segkit import model as M
from segkit.data import SynthConfig, stack, synth_generate
from segkit.errors import ConfigError, NumericalError
from segkit.metrics import weighted_cross_entropy
from segkit.training import (
    TrainSchedule,
    class_weights,
    default_lcn,
    evaluate,
    preprocess,
    sample_minibatch,
    train_modular,
    train_variant,
    write_curve,
)


@pytest.fixture(scope="module")
def tiny():
    train, test = synth_generate(SynthConfig(size=16, num_train=6, num_test=2, seed=3))
    return preprocess(train, default_lcn(3)), preprocess(test, default_lcn(3))


def tiny_net(depth=2, seed=0):
    return M.init(M.NetworkConfig(depth=depth, features=4, kernel_size=3, num_classes=4), seed)


def quick(**kw):
    base = dict(epochs_per_stage=1, iterations=3, batch_size=3, seed=1)
    base.update(kw)
    return TrainSchedule(**base)


def snapshot(net, names):
    return {n: a.tobytes() for n, a in net.param_items(names)}


# -- mini-batch sampling ---------------------------------------------------------

def test_minibatch_from_single_image():
    rng = np.random.default_rng(0)
    assert sample_minibatch(["a"], 4, rng) == ["a"] * 4


def test_minibatch_deterministic():
    a = sample_minibatch(list(range(10)), 50, np.random.default_rng(7))
    b = sample_minibatch(list(range(10)), 50, np.random.default_rng(7))
    assert a == b


def test_minibatch_uniform_chi_square():
    draws = sample_minibatch(list(range(10)), 10_000, np.random.default_rng(123))
    counts = np.bincount(draws, minlength=10)
    assert chisquare(counts).pvalue > 0.001


def test_minibatch_empty_dataset():
    with pytest.raises(ConfigError):
        sample_minibatch([], 3, np.random.default_rng(0))


# -- modular schedule ------------------------------------------------------------

def test_zero_iterations_leave_net_unchanged(tiny):
    net = tiny_net()
    res = train_modular(net, tiny[0], quick(iterations=0, stages=[1]))
    assert snapshot(res.net, None) == snapshot(net, None)
    assert res.curve == []


def test_freeze_bit_identity_across_stages(tiny):
    net = tiny_net(depth=3)
    outer = ["enc1", "dec1", "softmax"]
    last = {}

    def hook(stage, epoch, batch, n):
        last[stage] = (snapshot(n, outer), snapshot(n, ["enc2", "dec2"]))

    res = train_modular(net, tiny[0], quick(epochs_per_stage=1), on_batch=hook)
    assert sorted(last) == [1, 2, 3]
    assert last[1][0] != snapshot(net, outer)  # stage 1 moved them
    assert snapshot(res.net, outer) == last[1][0]
    assert snapshot(res.net, ["enc2", "dec2"]) == last[2][1]
    # the same holds against an independent stage-1-only run
    stage1 = train_modular(net, tiny[0], quick(stages=[1]))
    assert snapshot(stage1.net, outer) == last[1][0]


def test_softmax_modes(tiny):
    net = tiny_net()
    fixed = train_modular(net, tiny[0], quick(softmax_mode="fixed"))
    assert snapshot(fixed.net, ["softmax"]) == snapshot(net, ["softmax"])
    joint = train_modular(net, tiny[0], quick(softmax_mode="joint", stages=[1]))
    assert snapshot(joint.net, ["softmax"]) != snapshot(net, ["softmax"])
    pre = train_modular(net, tiny[0], quick(softmax_mode="pretrain", stages=[1]))
    assert {r.stage for r in pre.curve} == {0, 1}
    with pytest.raises(ConfigError):
        train_modular(net, tiny[0], quick(softmax_mode="later"))


def test_schedule_validation(tiny):
    with pytest.raises(ConfigError):
        train_modular(tiny_net(), tiny[0], quick(stages=[3]))
    with pytest.raises(ConfigError):
        train_modular(tiny_net(), tiny[0], quick(stages=[2, 1]))
    with pytest.raises(ConfigError):
        train_modular(tiny_net(), [], quick())


def test_training_is_deterministic(tiny, tmp_path):
    a = train_modular(tiny_net(), tiny[0], quick())
    b = train_modular(tiny_net(), tiny[0], quick())
    assert M.checkpoint_bytes(a.net) == M.checkpoint_bytes(b.net)
    write_curve(a.curve, tmp_path / "a.csv")
    write_curve(b.curve, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows[0] == ["stage", "epoch", "batch", "iteration", "loss"]
    # epoch length ceil(N / batch) = 2 batches
    assert {(r.stage, r.batch) for r in a.curve} == {(s, b) for s in (1, 2) for b in (1, 2)}


def test_losses_within_a_batch_never_increase(tiny):
    res = train_modular(tiny_net(), tiny[0], quick(iterations=6))
    by_batch = {}
    for r in res.curve:
        by_batch.setdefault((r.stage, r.epoch, r.batch), []).append(r.loss)
    for losses in by_batch.values():
        assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_non_finite_loss_aborts_with_batch(tiny):
    net = tiny_net()
    net.encoders[0].kernels[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericalError, match="stage 1, epoch 1, batch 1"):
        train_modular(net, tiny[0], quick())


@pytest.mark.slow
def test_stage1_training_loss_decreases_over_first_batches():
    """Desk-scale: training-set loss after each of the first five mini-batches."""
    train, _ = synth_generate(SynthConfig())
    train = preprocess(train, default_lcn(3))
    images, labels = stack(train)
    w = class_weights(train, 4)
    net = M.init(M.NetworkConfig(depth=2, features=16, kernel_size=7, num_classes=4), 0)
    losses = []

    def hook(stage, epoch, batch, n):
        if len(losses) < 5:
            losses.append(weighted_cross_entropy(M.forward(n, images, depth=1).probs, labels, w)[0])

    sched = TrainSchedule(epochs_per_stage=2, iterations=10, batch_size=20, stages=[1], seed=0)
    # 2 epochs x 4 batches; only the first five are inspected
    train_modular(net, train[:80], sched, on_batch=hook)
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


# -- transfer variants -----------------------------------------------------------

def test_variant_r_matches_modular_from_seed(tiny):
    cfg = tiny_net().config
    a = train_variant(cfg, tiny[0], "R", quick(), seed=4)
    b = train_modular(M.init(cfg, 4), tiny[0], quick())
    assert M.checkpoint_bytes(a.net) == M.checkpoint_bytes(b.net)


def test_variant_l4_trains_only_deepest_pair(tiny):
    src = train_modular(tiny_net(depth=3), tiny[0], quick()).net
    res = train_variant(src, tiny[1], "L4", quick(epochs_per_stage=7))
    shallow = ["enc1", "dec1", "enc2", "dec2", "softmax"]
    assert snapshot(res.net, shallow) == snapshot(src, shallow)
    assert snapshot(res.net, ["enc3", "dec3"]) != snapshot(src, ["enc3", "dec3"])
    assert {r.epoch for r in res.curve} == {1, 2}
    assert {r.stage for r in res.curve} == {3}


def test_variant_sm_keeps_body(tiny):
    src = tiny_net()
    res = train_variant(src, tiny[0], "SM", quick(), hidden_width=5)
    body = [n for n in src.layer_names() if n != "softmax"]
    assert snapshot(res.net, body) == snapshot(src, body)
    assert res.net.hidden is not None and res.net.hidden.kernels.shape == (5, 4, 1, 1)
    assert res.curve


def test_variant_errors(tiny):
    cfg = tiny_net().config
    for v in ("SM", "L4"):
        with pytest.raises(ConfigError):
            train_variant(cfg, tiny[0], v, quick())
    with pytest.raises(ConfigError):
        train_variant(tiny_net(), tiny[0], "XL", quick())


def test_evaluate_crops_to_original(tiny):
    m = evaluate(tiny_net(), tiny[1])
    assert m.confusion.sum() == 2 * 16 * 16
