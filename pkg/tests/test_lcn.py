import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from segkit.errors import ConfigError
from segkit.lcn import LcnConfig, default_groups, lcn

RGBD = LcnConfig(groups=[[0, 1, 2], [3]])


def _local_mean(x, cfg, y, xx, group):
    g = cfg.kernel()
    r = cfg.radius
    h, w = x.shape[-2:]
    wsum = msum = 0.0
    for i in range(-r, r + 1):
        for j in range(-r, r + 1):
            if 0 <= y + i < h and 0 <= xx + j < w:
                wt = g[i + r] * g[j + r]
                wsum += wt
                msum += wt * np.mean([x[c, y + i, xx + j] for c in group])
    return msum / wsum


def naive_lcn_pixel(x, cfg, y, xx, group):
    """One output pixel from the definition: v = x - mean(x), std = sqrt(mean(v^2))."""
    h, w = x.shape[-2:]
    v = np.zeros((len(group), h, w))
    for yy in range(h):
        for xj in range(w):
            m = _local_mean(x, cfg, yy, xj, group)
            for k, c in enumerate(group):
                v[k, yy, xj] = x[c, yy, xj] - m
    std = _local_mean(v ** 2, cfg, y, xx, range(len(group))) ** 0.5
    return [v[k, y, xx] / max(cfg.eps, std) for k in range(len(group))]


def test_window_weights():
    g = LcnConfig().kernel()
    assert g.shape == (9,) and (g >= 0).all()
    assert abs(np.outer(g, g).sum() - 1) < 1e-15


def test_matches_pixelwise_definition():
    rng = np.random.default_rng(0)
    x = rng.random((1, 4, 11, 9))
    out = lcn(x, RGBD)
    for y, xx in [(0, 0), (5, 4), (10, 8), (3, 0), (2, 7)]:
        for grp in RGBD.groups:
            np.testing.assert_allclose(out[0, grp, y, xx], naive_lcn_pixel(x[0], RGBD, y, xx, grp),
                                       rtol=1e-10, atol=1e-12)


def test_constant_image_is_zero():
    for v in (0.0, 0.37, 250.0):
        out = lcn(np.full((2, 4, 13, 17), v), RGBD)
        assert np.abs(out).max() <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-100, 100))
def test_dc_shift_invariance(seed, c):
    x = np.random.default_rng(seed).random((1, 4, 12, 12))
    np.testing.assert_allclose(lcn(x + c, RGBD), lcn(x, RGBD), atol=1e-9, rtol=0)


def test_per_group_shift_invariance():
    x = np.random.default_rng(1).random((1, 4, 10, 10))
    shifted = x.copy()
    shifted[:, 3] += 7.0
    np.testing.assert_allclose(lcn(shifted, RGBD), lcn(x, RGBD), atol=1e-9, rtol=0)


def test_modality_isolation_exhaustive():
    rng = np.random.default_rng(2)
    x = rng.random((1, 4, 8, 8))
    base = lcn(x, RGBD)
    for c in range(4):
        for y in range(8):
            for xx in range(8):
                p = x.copy()
                p[0, c, y, xx] += 0.5
                out = lcn(p, RGBD)
                other = [3] if c < 3 else [0, 1, 2]
                assert np.abs(out[:, other] - base[:, other]).max() <= 1e-9


def test_zeroing_depth_only_changes_depth_output():
    x = np.random.default_rng(3).random((2, 4, 16, 16))
    z = x.copy()
    z[:, 3] = 0
    a, b = lcn(x, RGBD), lcn(z, RGBD)
    assert np.abs(a[:, :3] - b[:, :3]).max() <= 1e-9
    assert np.abs(b[:, 3]).max() <= 1e-9


def test_linear_ramp_interior_is_zero():
    # a symmetric window's weighted mean of a ramp equals the ramp itself
    yy, xx = np.mgrid[0:20, 0:20].astype(float)
    x = (0.02 * yy + 0.01 * xx)[None, None]
    out = lcn(x, LcnConfig(groups=[[0]]))
    assert np.abs(out[0, 0, 4:-4, 4:-4]).max() <= 1e-9


def test_default_groups():
    assert default_groups(1) == [[0]]
    assert default_groups(3) == [[0, 1, 2]]
    assert default_groups(4) == [[0, 1, 2], [3]]


def test_group_mismatch_is_config_error():
    x = np.zeros((1, 4, 8, 8))
    with pytest.raises(ConfigError):
        lcn(x, LcnConfig(groups=[[0, 1, 2]]))
    with pytest.raises(ConfigError):
        lcn(x, LcnConfig(groups=[[0, 1], [1, 2, 3]]))
