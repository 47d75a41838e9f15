import math
import re
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from streetsplat.objective import LossConfig, depth_smoothness_loss, nvs_loss, total_loss

SOURCE_TEXT = Path(__file__).resolve().parents[1] / "paper.md"


def smoothness_direct(depth, image):
    """Plain loop over interior sites."""
    h, w = depth.shape
    total, count = 0.0, 0
    for r in range(h - 1):
        for c in range(w - 1):
            dix = sum(abs(image[r, c + 1, k] - image[r, c, k]) for k in range(image.shape[2])) / image.shape[2]
            diy = sum(abs(image[r + 1, c, k] - image[r, c, k]) for k in range(image.shape[2])) / image.shape[2]
            total += abs(depth[r, c + 1] - depth[r, c]) * math.exp(-dix)
            total += abs(depth[r + 1, c] - depth[r, c]) * math.exp(-diy)
            count += 1
    return total / count


def t(x):
    return torch.tensor(np.asarray(x, dtype=np.float64))


def test_constant_depth_is_zero():
    img = np.random.default_rng(0).uniform(size=(6, 7, 3))
    assert float(depth_smoothness_loss(t(np.full((6, 7), 4.2)), t(img))) == 0.0


@pytest.mark.parametrize("g", [0.5, 1.0, 3.0])
def test_ramp_on_flat_image_gives_slope(g):
    depth = g * np.arange(9, dtype=float)[None, :].repeat(5, axis=0)
    img = np.full((5, 9, 3), 0.3)
    assert float(depth_smoothness_loss(t(depth), t(img))) == pytest.approx(g, abs=1e-12)


def test_two_by_three_edge_case_by_hand():
    # depth ramps by g along x; every horizontal color step is 4 in each channel.
    # The two sites (0,0) and (0,1) each contribute g*e^-4 and nothing vertically.
    g = 0.7
    depth = np.array([[0.0, g, 2 * g], [0.0, g, 2 * g]])
    img = np.zeros((2, 3, 3))
    img[:, 1] = 4.0
    img[:, 2] = 8.0
    got = float(depth_smoothness_loss(t(depth), t(img)))
    assert got == pytest.approx(g * math.exp(-4.0), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_smoothness_matches_loop(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(2, 7, size=2)
    depth, img = rng.uniform(0, 2, (h, w)), rng.uniform(size=(h, w, 3))
    assert float(depth_smoothness_loss(t(depth), t(img))) == pytest.approx(smoothness_direct(depth, img), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_stronger_edges_never_raise_smoothness(seed, a, b):
    rng = np.random.default_rng(seed)
    depth = rng.uniform(0, 1, (5, 6))
    pattern = rng.uniform(size=(5, 6, 3))
    lo, hi = min(a, b), max(a, b)
    l_lo = float(depth_smoothness_loss(t(depth), t(lo * pattern)))
    l_hi = float(depth_smoothness_loss(t(depth), t(hi * pattern)))
    assert l_hi <= l_lo + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.uniform(size=(2, 4, 5, 3))
    loss, mse, _ = nvs_loss(t(pred), t(gt), LossConfig())
    assert float(loss) >= 0 and float(mse) >= 0
    assert float(depth_smoothness_loss(t(rng.normal(size=(4, 5))), t(gt))) >= 0


def test_default_lambda_matches_reported_weight():
    text = SOURCE_TEXT.read_text()
    m = re.search(r"LPIPS loss weight.{0,20}?is set to ([0-9]+\.[0-9]+)", text)
    assert m is not None
    assert LossConfig().lambda_lpips == float(m.group(1)) == 0.05


def test_composition_with_plugged_perceptual_distance():
    pred = torch.zeros(4, 5, 3, dtype=torch.float64)
    gt = pred + 0.1  # mse 0.01 up to rounding of 0.1**2
    cfg = LossConfig(perceptual="provided")
    loss, mse, dist = nvs_loss(pred, gt, cfg, lambda a, b: torch.tensor(2.0))
    assert float(dist) == 2.0
    assert float(loss) == pytest.approx(0.11, abs=1e-12)
    assert float(loss) == float(mse) + 0.05 * 2.0


def test_perceptual_off_contributes_nothing():
    pred, gt = torch.rand(2, 4, 4, 3, dtype=torch.float64)
    loss, mse, dist = nvs_loss(pred, gt, LossConfig(), lambda a, b: torch.tensor(100.0))
    assert float(dist) == 0.0 and torch.equal(loss, mse)


def test_provided_without_fn_raises():
    with pytest.raises(ValueError):
        nvs_loss(torch.zeros(2, 2, 3), torch.zeros(2, 2, 3), LossConfig(perceptual="provided"))


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(lambda_lpips=-1)
    with pytest.raises(ValueError):
        LossConfig(perceptual="vgg")
    with pytest.raises(ValueError):
        LossConfig.from_dict({"lambda": 0.1})


def _frame(img, far=100.0):
    return SimpleNamespace(image=img, camera=SimpleNamespace(far=far))


def test_total_is_sum_of_components():
    rng = np.random.default_rng(5)
    img = rng.uniform(size=(6, 8, 3))
    render = SimpleNamespace(color=t(rng.uniform(size=(6, 8, 3))), depth=t(rng.uniform(2, 90, (6, 8))))
    cfg = LossConfig(perceptual="provided", depth_weight=0.5)
    rep = total_loss(render, _frame(img), cfg, lambda a, b: torch.tensor(0.3, dtype=torch.float64))
    expect = rep.mse + 0.05 * rep.perceptual + 0.5 * rep.depth_smoothness
    assert float(rep.total) == pytest.approx(float(expect), abs=1e-12)
    assert float(rep.depth_smoothness) == pytest.approx(
        smoothness_direct(render.depth.numpy() / 100.0, img), abs=1e-12)
    assert set(rep.as_floats()) == {"total", "mse", "perceptual", "depth_smoothness"}


def test_color_gradient_matches_finite_difference():
    rng = np.random.default_rng(6)
    img = rng.uniform(size=(4, 5, 3))
    color = t(rng.uniform(size=(4, 5, 3))).requires_grad_(True)
    depth = t(rng.uniform(2, 90, (4, 5))).requires_grad_(True)
    frame = _frame(img)

    def f(c, d):
        return total_loss(SimpleNamespace(color=c, depth=d), frame, LossConfig())

    f(color, depth).total.backward()
    eps = 1e-6
    for idx in [(0, 0, 0), (2, 3, 1), (3, 4, 2)]:
        cp, cm = color.detach().clone(), color.detach().clone()
        cp[idx] += eps
        cm[idx] -= eps
        fd = (float(f(cp, depth.detach()).total) - float(f(cm, depth.detach()).total)) / (2 * eps)
        assert color.grad[idx].item() == pytest.approx(fd, rel=1e-6, abs=1e-9)
    assert torch.isfinite(depth.grad).all() and depth.grad.abs().max() > 0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        nvs_loss(torch.zeros(2, 2, 3), torch.zeros(2, 3, 3), LossConfig())
    with pytest.raises(ValueError):
        depth_smoothness_loss(torch.zeros(3, 3), torch.zeros(3, 4, 3))
