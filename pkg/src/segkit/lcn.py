"""Local contrast normalisation, applied independently per input modality.

For each channel group (e.g. RGB as one group, depth as another) the
Gaussian-weighted local mean, pooled over the group's channels, is
subtracted; the result is divided by the floored local standard deviation
computed the same way. Windows truncated by the image border are
renormalised so a constant image maps to exactly zero everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ConfigError
from .tensor import check_rank4


@dataclass
class LcnConfig:
    radius: int = 4
    sigma: float = 2.0
    eps: float = 1e-4
    groups: list = field(default_factory=lambda: [[0, 1, 2]])

    def kernel(self):
        t = np.arange(-self.radius, self.radius + 1, dtype=np.float64)
        g = np.exp(-0.5 * (t / self.sigma) ** 2)
        return g / g.sum()

    def validate(self, channels):
        seen = [ch for grp in self.groups for ch in grp]
        if sorted(seen) != list(range(channels)):
            raise ConfigError(
                f"LCN groups {self.groups} must partition channels 0..{channels - 1} exactly once"
            )
        if self.radius < 0 or self.sigma <= 0 or self.eps <= 0:
            raise ConfigError(f"invalid LCN window parameters: {self}")


def default_groups(channels):
    """RGB as one modality, anything beyond the third channel on its own."""
    if channels <= 3:
        return [list(range(channels))]
    return [[0, 1, 2]] + [[c] for c in range(3, channels)]


def _blur(img, g):
    # separable Gaussian with zero fill; callers divide by the blurred ones-map
    out = correlate1d(img, g, axis=-2, mode="constant", cval=0.0)
    return correlate1d(out, g, axis=-1, mode="constant", cval=0.0)


def lcn(x: np.ndarray, cfg: LcnConfig | None = None) -> np.ndarray:
    check_rank4(x, "LCN input")
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    if cfg is None:
        cfg = LcnConfig(groups=default_groups(c))
    cfg.validate(c)
    g = cfg.kernel()
    norm = _blur(np.ones((h, w)), g)
    out = np.empty_like(x)
    for grp in cfg.groups:
        xs = x[:, grp]  # (n, |grp|, h, w)
        mean = _blur(xs.mean(axis=1), g) / norm  # (n, h, w)
        centred = xs - mean[:, None]
        var = _blur((centred ** 2).mean(axis=1), g) / norm
        std = np.sqrt(np.maximum(var, 0.0))
        out[:, grp] = centred / np.maximum(cfg.eps, std)[:, None]
    return out
