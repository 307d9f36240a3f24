"""Feature-ablation study: per-map RMS, top-N activation histograms and
label decoding with all but a chosen set of feature maps zeroed.

Layers are 1-based encoder indices; feature maps are 0-based channel indices.
Activations are taken after the encoder's ReLU, before pooling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as M
from . import pnm
from .data import Palette, image_to_uint8, render_labels
from .errors import ConfigError


def rms_per_map(activations) -> np.ndarray:
    """One RMS value per feature map for a single sample, ``(C, H, W)`` or ``(1, C, H, W)``."""
    a = np.asarray(activations, dtype=np.float64)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ValueError(f"rms_per_map takes a single sample, got batch of {a.shape[0]}")
        a = a[0]
    c = a.shape[0]
    return np.sqrt((a.reshape(c, -1) ** 2).mean(axis=1))


def top_n(values, n):
    """Indices of the ``n`` largest values; ties favour the lower index."""
    order = np.lexsort((np.arange(len(values)), -np.asarray(values)))
    return np.sort(order[:n])


@dataclass
class AblationProfile:
    layer: int
    n: int
    rms: np.ndarray  # (samples, F)
    histogram: np.ndarray  # (F,) int

    @property
    def activated_fraction(self):
        """Share of maps that appear in at least one sample's top-N."""
        return float((self.histogram > 0).mean())

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["map_index", "count"])
            for j, cnt in enumerate(self.histogram):
                wr.writerow([j, int(cnt)])


def layer_activations(net, image, layer):
    trace = M.forward(net, M.pad_to_multiple(image, net.config.multiple))
    return trace.enc_post[layer - 1]


def _check(net, layer, n=None):
    if not 1 <= layer <= net.config.depth:
        raise ConfigError(f"layer {layer} outside 1..{net.config.depth}")
    if n is not None and not 1 <= n <= net.config.features:
        raise ConfigError(f"N={n} outside 1..{net.config.features}")


def topn_histogram(samples, net, layer, n) -> AblationProfile:
    _check(net, layer, n)
    F = net.config.features
    rms = np.zeros((len(samples), F))
    hist = np.zeros(F, dtype=np.int64)
    for i, s in enumerate(samples):
        rms[i] = rms_per_map(layer_activations(net, s.image, layer))
        hist[top_n(rms[i], n)] += 1
    return AblationProfile(layer, n, rms, hist)


def keep_mask(features, keep_set):
    mask = np.zeros(features)
    keep = list(keep_set)
    if keep and (min(keep) < 0 or max(keep) >= features):
        raise ConfigError(f"keep set {sorted(keep)} outside 0..{features - 1}")
    mask[keep] = 1.0
    return mask


def ablated_predict(net, image, layer, keep_set):
    """Labels decoded with only ``keep_set`` maps of encoder ``layer`` alive."""
    _check(net, layer)
    mask = keep_mask(net.config.features, keep_set)
    return M.predict(net, image, ablate=(layer, mask))


def ablation_panel(net, samples, layers, n_list, out_dir, palette: Palette | None = None):
    """Write, per sample, a grid with one row per layer:
    ``input | full prediction | top-N_1 | top-N_2 | ...`` (PPM), plus
    ``fractions.csv`` (layer, N, activated fraction) and one histogram CSV per
    (layer, N). Returns the activated fractions as ``{(layer, N): value}``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    palette = palette or Palette.default(net.config.num_classes)
    fractions = {}
    rows_per_sample = {s.id: [] for s in samples}
    for layer in layers:
        for n in n_list:
            prof = topn_histogram(samples, net, layer, n)
            fractions[(layer, n)] = prof.activated_fraction
            prof.write_csv(out_dir / f"hist_layer{layer}_top{n}.csv")
    for s in samples:
        h, w = s.orig_shape
        full = M.predict(net, s.image)[0][:h, :w]
        img = s.image[0, :, :h, :w]
        if img.min() < 0 or img.max() > 1:  # LCN output: stretch for display
            img = (img - img.min()) / max(img.max() - img.min(), 1e-12)
        inp = image_to_uint8(img)
        for layer in layers:
            acts = layer_activations(net, s.image, layer)
            r = rms_per_map(acts)
            cells = [inp, render_labels(full, palette)]
            for n in n_list:
                pred = ablated_predict(net, s.image, layer, top_n(r, n))[0][:h, :w]
                cells.append(render_labels(pred, palette))
            rows_per_sample[s.id].append(np.concatenate(cells, axis=1))
        pnm.write(out_dir / f"{s.id}_panel.ppm", np.concatenate(rows_per_sample[s.id], axis=0))
    with open(out_dir / "fractions.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["layer", "n", "activated_fraction"])
        for (layer, n), frac in fractions.items():
            wr.writerow([layer, n, f"{frac:.4f}"])
    return fractions
