"""The encoder-decoder network: parameter layout, forward/backward
orchestration, freeze flags, receptive field and checkpoint I/O.

Layer names are ``enc1..encL``, ``dec1..decL``, ``hidden`` (only with the
hidden-layer head) and ``softmax``. Decoder ``i`` consumes the pool indices
produced by encoder ``i``.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from .errors import (
    BadMagicError,
    CheckpointError,
    ConfigError,
    ShapeError,
    StaleTraceError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)
from .lcn import LcnConfig
from .tensor import FlatVector, check_rank4, flatten

MAGIC = b"SGNW"
VERSION = 1


@dataclass
class NetworkConfig:
    depth: int = 4
    features: int = 64
    kernel_size: int = 7
    in_channels: int = 3
    num_classes: int = 11

    def validate(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.features < 1 or self.num_classes < 1 or self.in_channels < 1:
            raise ConfigError(f"features, num_classes and in_channels must be positive: {self}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")

    @property
    def multiple(self):
        """Spatial dims must be divisible by this (one halving per encoder)."""
        return 2 ** self.depth


def conv_weight_count(cfg: NetworkConfig) -> int:
    k2 = cfg.kernel_size ** 2
    return k2 * (cfg.in_channels * cfg.features + (2 * cfg.depth - 1) * cfg.features ** 2)


def receptive_field(kernel_size: int, layer_index: int) -> int:
    """Side length of the input window seen by one pooled element of encoder
    ``layer_index``."""
    if layer_index < 1:
        raise ConfigError(f"layer_index must be >= 1, got {layer_index}")
    rf, jump = 1, 1
    for _ in range(layer_index):
        rf += (kernel_size - 1) * jump
        rf += jump  # 2x2 pool, stride 2
        jump *= 2
    return rf


def _unit_kernels(rng, shape):
    w = rng.standard_normal(shape)
    norms = np.sqrt((w.reshape(shape[0], -1) ** 2).sum(axis=1))
    return w / norms.reshape((-1,) + (1,) * (len(shape) - 1))


@dataclass
class SegNet:
    config: NetworkConfig
    encoders: list
    decoders: list
    softmax: L.SoftmaxLayer
    hidden: L.ConvLayer | None = None
    preprocess: LcnConfig | None = None
    version: int = field(default=0, compare=False)

    # -- layer bookkeeping ------------------------------------------------
    def layer_names(self):
        d = self.config.depth
        names = [f"enc{i}" for i in range(1, d + 1)] + [f"dec{i}" for i in range(1, d + 1)]
        if self.hidden is not None:
            names.append("hidden")
        names.append("softmax")
        return names

    def layer(self, name):
        if name == "softmax":
            return self.softmax
        if name == "hidden" and self.hidden is not None:
            return self.hidden
        for prefix, stack in (("enc", self.encoders), ("dec", self.decoders)):
            if name.startswith(prefix) and name[3:].isdigit():
                i = int(name[3:])
                if 1 <= i <= len(stack):
                    return stack[i - 1]
        raise ConfigError(f"unknown layer {name!r}; known layers: {self.layer_names()}")

    def param_items(self, names=None):
        """Ordered ``(param_name, array)`` pairs, e.g. ``("enc1.kernels", ...)``."""
        out = []
        for name in names if names is not None else self.layer_names():
            layer = self.layer(name)
            if isinstance(layer, L.SoftmaxLayer):
                out.append((f"{name}.weights", layer.weights))
            else:
                out.append((f"{name}.kernels", layer.kernels))
                out.append((f"{name}.biases", layer.biases))
        return out

    def trainable_names(self, depth=None):
        return [n for n in self.active_names(depth) if self.layer(n).trainable]

    def active_names(self, depth=None):
        d = self.config.depth if depth is None else depth
        keep = []
        for n in self.layer_names():
            if n[:3] in ("enc", "dec") and int(n[3:]) > d:
                continue
            keep.append(n)
        return keep

    def trainable_vector(self, depth=None) -> FlatVector:
        items = self.param_items(self.trainable_names(depth))
        return flatten([a for _, a in items], [n for n, _ in items])

    def set_params(self, vec: FlatVector):
        """Write values from a flat vector back into the named parameters."""
        for pname, offset, shape in vec.layout:
            lname, attr = pname.split(".")
            target = getattr(self.layer(lname), attr)
            size = int(np.prod(shape))
            target[...] = vec.data[offset:offset + size].reshape(shape)
        self.version += 1

    def copy(self):
        return copy.deepcopy(self)

    def param_count(self):
        return sum(a.size for _, a in self.param_items())


def init(config: NetworkConfig, seed=0) -> SegNet:
    """Gaussian N(0,1) kernels, each output-channel slice scaled to unit L2
    norm; zero biases; soft-max rows likewise unit-norm."""
    config.validate()
    rng = np.random.default_rng(seed)
    F, k = config.features, config.kernel_size
    encoders, decoders = [], []
    for i in range(config.depth):
        cin = config.in_channels if i == 0 else F
        encoders.append(L.ConvLayer(_unit_kernels(rng, (F, cin, k, k)), np.zeros(F)))
    for i in range(config.depth):
        decoders.append(L.ConvLayer(_unit_kernels(rng, (F, F, k, k)), np.zeros(F)))
    sm = L.SoftmaxLayer(_unit_kernels(rng, (config.num_classes, F, 1, 1)))
    return SegNet(config, encoders, decoders, sm)


def set_freeze(net: SegNet, trainable) -> None:
    """Make exactly the named layers trainable; parameter values are untouched."""
    trainable = set(trainable)
    known = set(net.layer_names())
    unknown = trainable - known
    if unknown:
        raise ConfigError(f"unknown layer(s) {sorted(unknown)}; known layers: {sorted(known)}")
    for name in known:
        net.layer(name).trainable = name in trainable


def attach_head(net: SegNet, kind="hidden", hidden_width=64, seed=0) -> SegNet:
    """Return a copy of ``net`` with a fresh classification head and a frozen body.

    ``kind="plain"`` is a bias-free soft-max straight on the decoder output;
    ``kind="hidden"`` inserts a 1x1 conv of width ``hidden_width`` plus ReLU.
    """
    out = net.copy()
    rng = np.random.default_rng(seed)
    F, K = out.config.features, out.config.num_classes
    set_freeze(out, [])
    if kind == "plain":
        out.hidden = None
        out.softmax = L.SoftmaxLayer(_unit_kernels(rng, (K, F, 1, 1)))
    elif kind == "hidden":
        out.hidden = L.ConvLayer(_unit_kernels(rng, (hidden_width, F, 1, 1)), np.zeros(hidden_width))
        out.softmax = L.SoftmaxLayer(_unit_kernels(rng, (K, hidden_width, 1, 1)))
    else:
        raise ConfigError(f"unknown head kind {kind!r}; expected 'plain' or 'hidden'")
    out.version += 1
    return out


# -- forward / backward ------------------------------------------------------

@dataclass
class ForwardTrace:
    depth: int
    version: int
    enc_inputs: list
    enc_pre: list  # conv outputs before ReLU
    enc_post: list  # after ReLU (and ablation mask, if any)
    indices: list  # PoolIndices, one per encoder
    dec_inputs: list  # unpooled tensors, indexed like decoders
    dec_outputs: list
    head_input: np.ndarray
    hidden_pre: np.ndarray | None
    logits: np.ndarray
    probs: np.ndarray
    ablate: tuple | None = None


def check_input(net: SegNet, x, depth=None):
    check_rank4(x, "network input")
    d = net.config.depth if depth is None else depth
    if not 1 <= d <= net.config.depth:
        raise ConfigError(f"active depth {d} outside 1..{net.config.depth}")
    if x.shape[1] != net.config.in_channels:
        raise ShapeError(
            f"network expects {net.config.in_channels} input channels, got input shape {x.shape}"
        )
    m = 2 ** d
    if x.shape[2] % m or x.shape[3] % m:
        raise ShapeError(
            f"input spatial dims {x.shape[2:]} must be divisible by {m}; pad the input first"
        )
    return d


def forward(net: SegNet, x, depth=None, ablate=None) -> ForwardTrace:
    """Run encoders 1..depth, decoders depth..1 and the head.

    ``ablate`` is an optional ``(layer_index, mask)`` pair; the post-ReLU
    output of that encoder is multiplied channel-wise by ``mask`` before pooling.
    """
    d = check_input(net, x, depth)
    if ablate is not None:
        if not 1 <= ablate[0] <= d:
            raise ConfigError(f"ablation layer {ablate[0]} outside active depth 1..{d}")
        mask = np.asarray(ablate[1], dtype=np.float64)
        if mask.shape != (net.config.features,):
            raise ShapeError(f"ablation mask needs {net.config.features} entries, got {mask.shape}")
        ablate = (int(ablate[0]), mask)
    enc_inputs, enc_pre, enc_post, indices = [], [], [], []
    h = x
    for i in range(d):
        enc_inputs.append(h)
        a = L.conv_forward(h, net.encoders[i])
        r = L.relu_forward(a)
        if ablate is not None and ablate[0] == i + 1:
            r = r * ablate[1].reshape(1, -1, 1, 1)
        enc_pre.append(a)
        enc_post.append(r)
        h, idx = L.maxpool_forward(r)
        indices.append(idx)
    dec_inputs = [None] * d
    dec_outputs = [None] * d
    for i in reversed(range(d)):
        u = L.unpool_forward(h, indices[i])
        h = L.conv_forward(u, net.decoders[i])
        dec_inputs[i] = u
        dec_outputs[i] = h
    hidden_pre = None
    if net.hidden is not None:
        hidden_pre = L.conv_forward(h, net.hidden)
        h = L.relu_forward(hidden_pre)
    logits = L.logits_forward(h, net.softmax)
    return ForwardTrace(
        d, net.version, enc_inputs, enc_pre, enc_post, indices, dec_inputs, dec_outputs,
        h, hidden_pre, logits, L.softmax(logits), ablate,
    )


def backward(net: SegNet, trace: ForwardTrace, grad_probs=None, *, grad_logits=None,
             input_grad=False):
    """Gradients for every trainable layer within the trace's active depth.

    Pass either ``grad_probs`` (dL/dprobabilities) or ``grad_logits``. Returns a
    dict ``param_name -> array`` holding entries for trainable layers only; with
    ``input_grad=True`` the gradient w.r.t. the network input is returned too.
    """
    if trace.version != net.version:
        raise StaleTraceError(
            f"trace recorded at parameter version {trace.version}, network is at {net.version}"
        )
    d = trace.depth
    if grad_logits is None:
        if grad_probs is None:
            raise ValueError("need grad_probs or grad_logits")
        p = trace.probs
        grad_logits = p * (grad_probs - (grad_probs * p).sum(axis=1, keepdims=True))

    # layers in the order the gradient reaches them
    order = ["softmax"] + (["hidden"] if net.hidden is not None else [])
    order += [f"dec{i}" for i in range(1, d + 1)] + [f"enc{i}" for i in range(d, 0, -1)]
    trainable = [n for n in order if net.layer(n).trainable]
    grads = {}
    if not trainable and not input_grad:
        return grads
    # propagate below layer ``order[pos]`` only while something below needs it
    last = len(order) if input_grad else order.index(trainable[-1])

    def conv_step(pos, name, x_in, g):
        lay = net.layer(name)
        g, gk, gb = L.conv_backward(x_in, lay, g, need_input_grad=pos < last,
                                    need_param_grad=lay.trainable)
        if lay.trainable:
            grads[f"{name}.kernels"], grads[f"{name}.biases"] = gk, gb
        return g

    g, gw = L.logits_backward(trace.head_input, net.softmax, grad_logits)
    if net.softmax.trainable:
        grads["softmax.weights"] = gw
    pos = 1
    if net.hidden is not None and pos <= last:
        g = L.relu_backward(trace.hidden_pre, g)
        g = conv_step(pos, "hidden", trace.dec_outputs[0], g)
        pos += 1
    for i in range(d):
        if pos > last:
            break
        g = conv_step(pos, f"dec{i + 1}", trace.dec_inputs[i], g)
        if g is not None:
            g = L.unpool_backward(trace.indices[i], g)
        pos += 1
    # g is now the gradient w.r.t. the pooled output of encoder d
    for i in reversed(range(d)):
        if pos > last:
            break
        g = L.maxpool_backward(trace.indices[i], g)
        if trace.ablate is not None and trace.ablate[0] == i + 1:
            g = g * trace.ablate[1].reshape(1, -1, 1, 1)
        g = L.relu_backward(trace.enc_pre[i], g)
        g = conv_step(pos, f"enc{i + 1}", trace.enc_inputs[i], g)
        pos += 1
    if input_grad:
        return grads, g
    return grads


def pad_to_multiple(x, multiple, mode="reflect"):
    """Pad bottom/right so h and w are multiples of ``multiple``."""
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    if mode == "reflect" and (ph >= h or pw >= w):
        mode = "symmetric"
    return np.pad(x, widths, mode=mode)


def predict_probs(net: SegNet, x, depth=None, ablate=None):
    """Probabilities at the input's own resolution; pads then crops back."""
    h, w = x.shape[2:]
    d = net.config.depth if depth is None else depth
    xp = pad_to_multiple(x, 2 ** d)
    return forward(net, xp, depth=depth, ablate=ablate).probs[:, :, :h, :w]


def predict(net: SegNet, x, depth=None, ablate=None):
    """Per-pixel argmax labels (ties go to the lowest class index)."""
    return np.argmax(predict_probs(net, x, depth, ablate), axis=1)


# -- checkpoints -------------------------------------------------------------

def _header(net: SegNet):
    return {
        "config": asdict(net.config),
        "head": {"kind": "hidden" if net.hidden is not None else "plain",
                 "hidden_width": None if net.hidden is None else net.hidden.out_channels},
        "preprocess": None if net.preprocess is None else asdict(net.preprocess),
        "trainable": {n: bool(net.layer(n).trainable) for n in net.layer_names()},
        "layers": [{"name": n, "dims": list(a.shape)} for n, a in net.param_items()],
    }


def checkpoint_bytes(net: SegNet) -> bytes:
    header = json.dumps(_header(net), sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in net.param_items()
    )
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + payload


def save_checkpoint(net: SegNet, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(net))


def checkpoint_from_bytes(blob: bytes) -> SegNet:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"not a segkit checkpoint: magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 12:
        raise TruncatedCheckpointError("checkpoint ends inside the fixed-size preamble")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version}, this reader supports {VERSION}")
    if len(blob) < 12 + hlen:
        raise TruncatedCheckpointError(
            f"header declares {hlen} bytes but only {len(blob) - 12} follow"
        )
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
        cfg = NetworkConfig(**header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from exc
    need = sum(int(np.prod(e["dims"])) for e in header["layers"]) * 8
    payload = blob[12 + hlen:]
    if len(payload) < need:
        raise TruncatedCheckpointError(f"payload holds {len(payload)} bytes, manifest needs {need}")
    if len(payload) > need:
        raise CheckpointError(f"{len(payload) - need} trailing bytes after payload")

    net = init(cfg, seed=0)
    head = header["head"]
    if head["kind"] == "hidden":
        net = attach_head(net, "hidden", head["hidden_width"])
    if header.get("preprocess") is not None:
        net.preprocess = LcnConfig(**header["preprocess"])
    expected = [(n, list(a.shape)) for n, a in net.param_items()]
    got = [(e["name"], list(e["dims"])) for e in header["layers"]]
    if expected != got:
        raise CheckpointError(f"layer manifest {got} does not match config-derived {expected}")
    offset = 0
    for _, arr in net.param_items():
        nbytes = arr.size * 8
        arr[...] = np.frombuffer(payload, dtype="<f8", count=arr.size, offset=offset).reshape(arr.shape)
        offset += nbytes
    for name, flag in header["trainable"].items():
        net.layer(name).trainable = bool(flag)
    net.version = 0
    return net


def load_checkpoint(path) -> SegNet:
    return checkpoint_from_bytes(Path(path).read_bytes())
