"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the verdict lines appear in the
"acceptance criteria" section of the terminal summary.
"""

import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import VERDICTS
from oracles import naive_rms, numeric_grad, rel_error
from segkit import layers as L
from segkit import model as M
from segkit.ablation import keep_mask, layer_activations, rms_per_map, topn_histogram
from segkit.cli import main as cli
from segkit.data import POLE, Sample, SynthConfig, synth_generate
from segkit.lcn import LcnConfig, lcn
from segkit.metrics import class_frequencies, weighted_cross_entropy
from segkit.training import (
    TrainSchedule,
    default_lcn,
    evaluate,
    preprocess,
    train_modular,
    train_variant,
)

ROOT = Path(__file__).resolve().parents[1]


def verdict(num, name, ok, detail):
    VERDICTS.append((num, name, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {num}. {name}: {detail}")
    assert ok, detail


def snapshot(net, names):
    return {n: a.tobytes() for n, a in net.param_items(names)}


# 1 ---------------------------------------------------------------------------

def _primitive_errors(rng):
    errs = {}
    x = rng.standard_normal((2, 3, 6, 6))
    conv = L.ConvLayer(rng.standard_normal((4, 3, 5, 5)), rng.standard_normal(4))
    G = rng.standard_normal((2, 4, 6, 6))
    f = lambda: float((L.conv_forward(x, conv) * G).sum())
    gx, gk, gb = L.conv_backward(x, conv, G)
    errs["conv/x"] = rel_error(gx, numeric_grad(f, x))
    errs["conv/k"] = rel_error(gk, numeric_grad(f, conv.kernels))
    errs["conv/b"] = rel_error(gb, numeric_grad(f, conv.biases))

    r = rng.standard_normal((2, 3, 6, 6))
    r[np.abs(r) < 1e-3] = 0.5  # keep away from the kink
    f = lambda: float((L.relu_forward(r) * G[:, :3]).sum())
    errs["relu"] = rel_error(L.relu_backward(r, G[:, :3]), numeric_grad(f, r))

    p = rng.standard_normal((2, 3, 6, 6))
    Gp = rng.standard_normal((2, 3, 3, 3))
    _, idx = L.maxpool_forward(p)
    f = lambda: float((L.maxpool_forward(p)[0] * Gp).sum())
    errs["maxpool"] = rel_error(L.maxpool_backward(idx, Gp), numeric_grad(f, p))

    y = rng.standard_normal((2, 3, 3, 3))
    Gu = rng.standard_normal((2, 3, 6, 6))
    f = lambda: float((L.unpool_forward(y, idx) * Gu).sum())
    errs["unpool"] = rel_error(L.unpool_backward(idx, Gu), numeric_grad(f, y))

    sm = L.SoftmaxLayer(rng.standard_normal((3, 4, 1, 1)))
    s = rng.standard_normal((2, 4, 5, 5))
    Gs = rng.standard_normal((2, 3, 5, 5))
    f = lambda: float((L.softmax_forward(s, sm) * Gs).sum())
    gx, gw = L.softmax_backward(s, sm, L.softmax_forward(s, sm), Gs)
    errs["softmax/x"] = rel_error(gx, numeric_grad(f, s))
    errs["softmax/w"] = rel_error(gw, numeric_grad(f, sm.weights))

    logits = rng.standard_normal((2, 3, 4, 4))
    labels = rng.integers(0, 3, (2, 4, 4))
    w = np.array([0.5, 1.0, 2.0])
    f = lambda: weighted_cross_entropy(L.softmax(logits), labels, w)[0]
    errs["cross-entropy"] = rel_error(weighted_cross_entropy(L.softmax(logits), labels, w)[1],
                                      numeric_grad(f, logits))
    return errs


def test_01_gradient_correctness():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    prim = _primitive_errors(rng)

    net = M.init(M.NetworkConfig(depth=2, features=4, kernel_size=5, in_channels=3, num_classes=3), 7)
    for _, a in net.param_items():
        if a.ndim == 1:
            a[...] = rng.normal(0, 0.1, a.shape)
    x = rng.standard_normal((1, 3, 16, 16))
    labels = rng.integers(0, 3, (1, 16, 16))
    w = np.array([0.8, 1.0, 1.3])
    tr = M.forward(net, x)
    _, gl = weighted_cross_entropy(tr.probs, labels, w)
    grads = M.backward(net, tr, grad_logits=gl)
    f = lambda: weighted_cross_entropy(M.forward(net, x).probs, labels, w)[0]
    analytic = np.concatenate([grads[n].ravel() for n, _ in net.param_items()])
    numeric = np.concatenate([numeric_grad(f, a).ravel() for _, a in net.param_items()])
    full = rel_error(analytic, numeric)
    elapsed = time.time() - t0
    worst = max(prim, key=prim.get)
    ok = max(prim.values()) < 1e-6 and full < 1e-5 and elapsed < 120
    verdict(1, "gradient correctness", ok,
            f"worst primitive {worst} {prim[worst]:.1e} (<1e-6), full net {full:.1e} (<1e-5), {elapsed:.0f}s")


# 2 ---------------------------------------------------------------------------

def test_02_pool_unpool_algebra():
    t0 = time.time()
    rng = np.random.default_rng(7)
    max_nonzero, recovered, gathered, worst_adj = 0, True, True, 0.0
    for _ in range(1000):
        n, c = rng.integers(1, 3), rng.integers(1, 4)
        h, w = 2 * rng.integers(1, 6), 2 * rng.integers(1, 6)
        x = rng.standard_normal((n, c, h, w))
        vals, idx = L.maxpool_forward(x)
        # (a) at most one nonzero per 2x2 window
        up = L.unpool_forward(rng.standard_normal(vals.shape), idx)
        per_window = (up.reshape(n, c, h // 2, 2, w // 2, 2) != 0).sum(axis=(3, 5))
        max_nonzero = max(max_nonzero, int(per_window.max()))
        # (b) pooling the unpooled maxima recovers them; the network pools
        # post-ReLU maps, so the check runs on that (non-negative) domain
        vr, ir = L.maxpool_forward(L.relu_forward(x))
        recovered &= np.array_equal(L.maxpool_forward(L.unpool_forward(vr, ir))[0], vr)
        # gathering at the stored argmax recovers any signed values exactly
        gathered &= np.array_equal(L.unpool_backward(idx, L.unpool_forward(vals, idx)), vals)
        # (c) adjoint identity <unpool(y), g> == <y, unpool^T(g)>
        y = rng.standard_normal(vals.shape)
        g = rng.standard_normal(x.shape)
        lhs = float((L.unpool_forward(y, idx) * g).sum())
        rhs = float((y * L.unpool_backward(idx, g)).sum())
        worst_adj = max(worst_adj, abs(lhs - rhs))
    elapsed = time.time() - t0
    ok = max_nonzero <= 1 and recovered and gathered and worst_adj <= 1e-12 and elapsed < 30
    verdict(2, "pool/unpool algebra", ok,
            f"max nonzeros/window {max_nonzero}, pool(unpool) exact {recovered}, "
            f"gather exact {gathered}, adjoint gap {worst_adj:.1e} (<=1e-12), {elapsed:.1f}s")


# 3 / 4 -----------------------------------------------------------------------

def test_03_receptive_field():
    got = [M.receptive_field(7, d) for d in (1, 2, 3, 4)]
    verdict(3, "receptive field", got == [8, 22, 50, 106], f"k=7 depths 1-4 -> {got}")


def test_04_parameter_count():
    cfg = M.NetworkConfig(depth=4, features=64, kernel_size=7, in_channels=3, num_classes=11)
    closed = M.conv_weight_count(cfg)
    net = M.init(cfg, 0)
    allocated = sum(a.size for n, a in net.param_items() if n.endswith(".kernels"))
    total = net.param_count()
    ok = closed == allocated == 1_414_336 and abs(total - 1.4e6) / 1.4e6 < 0.05
    verdict(4, "parameter count", ok,
            f"conv weights {closed:,} (allocated {allocated:,}); with biases and soft-max {total:,}")


# 5 ---------------------------------------------------------------------------

def test_05_freeze_soundness():
    t0 = time.time()
    train, _ = synth_generate(SynthConfig(size=32, num_train=20, num_test=0, seed=5))
    train = preprocess(train, default_lcn(3))
    net = M.init(M.NetworkConfig(depth=2, features=8, kernel_size=5, num_classes=4), 0)
    outer = ["enc1", "dec1", "softmax"]
    end_of_stage = {}
    res = train_modular(net, train, TrainSchedule(epochs_per_stage=1, iterations=10, batch_size=10),
                        on_batch=lambda s, e, b, n: end_of_stage.__setitem__(s, snapshot(n, outer)))
    moved = end_of_stage[1] != snapshot(net, outer)
    pair2_moved = snapshot(res.net, ["enc2", "dec2"]) != snapshot(net, ["enc2", "dec2"])
    identical = snapshot(res.net, outer) == end_of_stage[1]
    elapsed = time.time() - t0
    ok = moved and pair2_moved and identical and elapsed < 600
    verdict(5, "modular freeze soundness", ok,
            f"enc1/dec1/softmax bit-identical across stage 2: {identical} "
            f"(stage 1 moved them: {moved}, stage 2 moved pair 2: {pair2_moved}), {elapsed:.0f}s")


# 6 / 11 ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    """Synthesise the desk dataset and train the desk config twice via the CLI."""
    root = tmp_path_factory.mktemp("desk")
    shutil.copy(ROOT / "configs" / "desk.json", root / "desk.json")
    cfg = str(root / "desk.json")
    assert cli(["synth", "--config", cfg, "--out", str(root / "data")]) == 0
    times = []
    for run in ("run1", "run2"):
        t0 = time.time()
        assert cli(["--threads", "1", "train", "--config", cfg, "--out", str(root / run)]) == 0
        times.append(time.time() - t0)
    return root, times


@pytest.mark.slow
def test_06_desk_scale_learning(desk_runs):
    root, times = desk_runs
    cfg = json.loads((root / "desk.json").read_text())
    sched, net = cfg["schedule"], cfg["network"]
    stage_epochs = sched["epochs_per_stage"] * net["depth"]
    assert cli(["eval", "--ckpt", str(root / "run1" / "checkpoint.sgnw"),
                "--data", str(root / "data" / "test.txt"), "--out", str(root / "eval")]) == 0
    m = json.loads((root / "eval" / "metrics.json").read_text())
    ok = (m["global_avg"] >= 90 and m["class_avg"] >= 75 and stage_epochs <= 10
          and net["features"] == 16 and net["kernel_size"] == 7 and times[0] < 1800)
    verdict(6, "desk-scale learning", ok,
            f"held-out global {m['global_avg']:.1f}% (>=90), class avg {m['class_avg']:.1f}% (>=75) "
            f"after {stage_epochs} stage-epochs, {times[0]:.0f}s")


@pytest.mark.slow
def test_11_cli_determinism(desk_runs):
    root, times = desk_runs
    same_ckpt = (root / "run1" / "checkpoint.sgnw").read_bytes() == (root / "run2" / "checkpoint.sgnw").read_bytes()
    same_loss = (root / "run1" / "loss.csv").read_bytes() == (root / "run2" / "loss.csv").read_bytes()
    verdict(11, "CLI determinism", same_ckpt and same_loss,
            f"checkpoints identical {same_ckpt}, loss CSVs identical {same_loss} "
            f"(--threads 1, {times[0]:.0f}s + {times[1]:.0f}s)")


# 7 ---------------------------------------------------------------------------

IMBALANCED = SynthConfig(size=64, num_train=40, num_test=20, poles=(1, 1), pole_width=(1, 1),
                         pole_color=(0.45, 0.45, 0.55), seed=0)


@pytest.mark.slow
def test_07_class_weighting_effect():
    t0 = time.time()
    train, test = synth_generate(IMBALANCED)
    freq = class_frequencies([s.labels for s in train], 4)[POLE]
    lc = default_lcn(3)
    train, test = preprocess(train, lc), preprocess(test, lc)
    cfg = M.NetworkConfig(depth=2, features=8, kernel_size=7, num_classes=4)
    recall = {}
    for weighting in (True, False):
        sched = TrainSchedule(epochs_per_stage=1, iterations=10, batch_size=10, weighting=weighting)
        res = train_modular(M.init(cfg, 0), train, sched)
        recall[weighting] = evaluate(res.net, test).per_class[POLE]
    gap = recall[True] - recall[False]
    elapsed = time.time() - t0
    ok = freq < 0.05 and gap >= 10 and elapsed < 3600
    verdict(7, "class weighting effect", ok,
            f"pole freq {100 * freq:.2f}%, pole recall weighted {recall[True]:.1f} vs "
            f"unweighted {recall[False]:.1f} (gap {gap:+.1f}, >=10), {elapsed:.0f}s")


# 8 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_08_transfer_l4():
    t0 = time.time()
    lc = default_lcn(3)
    train_a, _ = synth_generate(SynthConfig(num_train=40, num_test=0, seed=0))
    train_b, test_b = synth_generate(SynthConfig(num_train=40, num_test=20, seed=1,
                                                 tint=(1.5, 0.8, 0.5), gradient=1.5))
    train_a, train_b, test_b = (preprocess(s, lc) for s in (train_a, train_b, test_b))
    cfg = M.NetworkConfig(depth=4, features=8, kernel_size=7, num_classes=4)
    sched = TrainSchedule(epochs_per_stage=2, iterations=15, batch_size=10)
    source = train_modular(M.init(cfg, 0), train_a, sched).net
    before = evaluate(source, test_b).global_avg
    l4 = train_variant(source, train_b, "L4", sched)
    after = evaluate(l4.net, test_b).global_avg
    kept = ["enc1", "dec1", "enc2", "dec2", "enc3", "dec3", "softmax"]
    frozen = snapshot(l4.net, kept) == snapshot(source, kept)
    epochs = sorted({r.epoch for r in l4.curve})
    elapsed = time.time() - t0
    ok = frozen and epochs == [1, 2] and after - before >= 5 and elapsed < 1200
    verdict(8, "transfer variant L4", ok,
            f"pairs 1-3 + soft-max bit-identical {frozen}; global on shifted set {before:.1f} -> "
            f"{after:.1f} ({after - before:+.1f}, >=5) after {len(epochs)} epochs, {elapsed:.0f}s")


# 9 ---------------------------------------------------------------------------

def test_09_ablation_identity_and_conservation():
    t0 = time.time()
    rng = np.random.default_rng(9)
    net = M.init(M.NetworkConfig(depth=2, features=8, kernel_size=5, num_classes=4), 3)
    for _, a in net.param_items():
        if a.ndim == 1:
            a[...] = rng.normal(0, 0.05, a.shape)
    train, _ = synth_generate(SynthConfig(size=32, num_train=12, num_test=0, seed=9))
    samples = preprocess(train, default_lcn(3))
    bit_exact = True
    for s in samples:
        full = M.predict_probs(net, s.image)
        for layer in (1, 2):
            abl = M.predict_probs(net, s.image, ablate=(layer, keep_mask(8, range(8))))
            bit_exact &= full.tobytes() == abl.tobytes()
    mass_ok = all(topn_histogram(samples, net, layer, n).histogram.sum() == n * len(samples)
                  for layer in (1, 2) for n in (1, 3, 8))
    worst = 0.0
    for s in samples:
        acts = layer_activations(net, s.image, 1)[0]
        got = rms_per_map(acts)
        worst = max(worst, max(abs(got[j] - naive_rms(acts[j])) for j in range(8)))
    elapsed = time.time() - t0
    ok = bit_exact and mass_ok and worst <= 1e-12 and elapsed < 60
    verdict(9, "ablation identity and conservation", ok,
            f"keep-all bit-exact {bit_exact}, histogram mass N*|D| {mass_ok}, "
            f"rms vs brute force {worst:.1e} (<=1e-12), {elapsed:.1f}s")


# 10 --------------------------------------------------------------------------

def test_10_lcn_properties():
    t0 = time.time()
    rng = np.random.default_rng(10)
    cfg = LcnConfig(groups=[[0, 1, 2], [3]])
    const = max(np.abs(lcn(np.full((2, 4, 16, 16), v), cfg)).max() for v in (0.0, 0.3, 42.0))
    x = rng.random((2, 4, 16, 16))
    base = lcn(x, cfg)
    shift = max(np.abs(lcn(x + c, cfg) - base).max() for c in (-5.0, 0.25, 3.0))
    iso = 0.0
    for c in range(4):
        other = [3] if c < 3 else [0, 1, 2]
        for _ in range(25):
            p = x.copy()
            p[:, c, rng.integers(16), rng.integers(16)] += rng.normal()
            iso = max(iso, np.abs(lcn(p, cfg)[:, other] - base[:, other]).max())
    z = x.copy()
    z[:, 3] = 0
    iso = max(iso, np.abs(lcn(z, cfg)[:, :3] - base[:, :3]).max())
    elapsed = time.time() - t0
    ok = const <= 1e-9 and shift <= 1e-9 and iso <= 1e-9 and elapsed < 10
    verdict(10, "LCN properties", ok,
            f"constant {const:.1e}, DC shift {shift:.1e}, modality leak {iso:.1e} (all <=1e-9), {elapsed:.1f}s")
