import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from camsam2.errors import InvariantError
from camsam2.losses import ClipSupervision, bce, clip_loss, dice


def test_bce_values():
    gt = (torch.rand(1, 4, 4) > 0.5).float()
    assert bce(torch.zeros(1, 4, 4), gt).item() == pytest.approx(math.log(2), abs=1e-7)
    assert bce(torch.full((1, 4, 4), 20.0, dtype=torch.float64), torch.ones(1, 4, 4)).item() < 1e-8
    single = bce(torch.tensor([[[1.0]]], dtype=torch.float64), torch.ones(1, 1, 1)).item()
    assert single == pytest.approx(math.log1p(math.exp(-1.0)), abs=1e-12)
    assert single == pytest.approx(0.313262, abs=1e-6)


def test_bce_rejects_non_binary():
    with pytest.raises(InvariantError):
        bce(torch.zeros(1, 2, 2), torch.full((1, 2, 2), 0.5))


def test_dice_values():
    gt = torch.zeros(1, 4, 4)
    gt[0, 1:3, 1:3] = 1
    sat = torch.where(gt > 0, 30.0, -30.0).double()
    assert dice(sat, gt).item() <= 1e-6
    assert dice(torch.full((1, 4, 4), -40.0, dtype=torch.float64), torch.zeros(1, 4, 4)).item() == pytest.approx(0, abs=1e-6)
    two = dice(torch.tensor([[[50.0, -50.0]]], dtype=torch.float64), torch.ones(1, 1, 2)).item()
    assert two == pytest.approx(1 / 3, abs=1e-6)


def _stream(seed, m=3, h=4):
    g = torch.Generator().manual_seed(seed)
    gts = [(torch.rand(1, h, h, generator=g) > 0.5).double() for _ in range(m)]
    r = [torch.randn(1, h, h, generator=g, dtype=torch.float64) * 3 for _ in range(m)]
    rc = [torch.randn(1, h, h, generator=g, dtype=torch.float64) * 3 for _ in range(m)]
    return gts, r, rc


def test_clip_loss_duplicated_stream():
    gts, r, _ = _stream(0, m=1)
    loss = clip_loss(ClipSupervision(gts, r, r))
    assert loss.item() == pytest.approx(2 * (bce(r[0], gts[0]) + dice(r[0], gts[0])).item(), abs=1e-12)


def test_clip_loss_perfect_saturation():
    gts, _, _ = _stream(1)
    sat = [torch.where(g > 0, 40.0, -40.0).double() for g in gts]
    assert clip_loss(ClipSupervision(gts, sat, sat)).item() < 1e-6


def test_clip_loss_is_sum_of_terms_and_skips_unlabeled():
    gts, r, rc = _stream(2)
    terms = sum((bce(a, g) + bce(b, g)) for a, b, g in zip(r, rc, gts)) + \
        sum((dice(a, g) + dice(b, g)) for a, b, g in zip(r, rc, gts))
    assert clip_loss(ClipSupervision(gts, r, rc)).item() == pytest.approx(terms.item(), abs=1e-12)
    gts2 = [gts[0], None, gts[2]]
    partial = sum(bce(x, gts[i]) + dice(x, gts[i]) for i in (0, 2) for x in (r[i], rc[i]))
    assert clip_loss(ClipSupervision(gts2, r, rc)).item() == pytest.approx(partial.item(), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_clip_loss_non_negative(seed):
    gts, r, rc = _stream(seed)
    assert clip_loss(ClipSupervision(gts, r, rc)).item() >= 0
