import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from torch import nn

from deglass.mask_stage import BCE_EPS, PredictComponents, adv_loss_D, adv_loss_G, mask_loss, predict_loss
from deglass.removal import binarize, l1, mask_operation, removal_losses

seeds = st.integers(0, 2**31 - 1)


class Constant(nn.Module):
    """Discriminator stand-in that scores every patch with one value."""

    def __init__(self, value):
        super().__init__()
        self.value = value

    def forward(self, f):
        return torch.full((f.shape[0], 1, 4, 4), self.value, dtype=torch.float64)


class Table(nn.Module):
    """Returns a fixed score map chosen by which input tensor it is given."""

    def __init__(self, pairs):
        super().__init__()
        self.pairs = pairs

    def forward(self, f):
        for key, out in self.pairs:
            if f is key:
                return out
        raise KeyError


def feats():
    return torch.randn(2, 4, 8, 8, dtype=torch.float64)


def test_adversarial_fixed_points():
    syn, real = feats(), feats()
    D = Table([(syn, torch.zeros(2, 1, 4, 4, dtype=torch.float64)),
               (real, torch.ones(2, 1, 4, 4, dtype=torch.float64))])
    assert adv_loss_D(D, syn, real).item() == 0.0
    assert adv_loss_G(Constant(1.0), syn).item() == 0.0


def test_adversarial_hand_values():
    syn, real = feats(), feats()
    D = Table([(syn, torch.full((2, 1, 4, 4), 0.3, dtype=torch.float64)),
               (real, torch.full((2, 1, 4, 4), 0.8, dtype=torch.float64))])
    assert adv_loss_D(D, syn, real).item() == pytest.approx(0.13, abs=1e-12)
    assert adv_loss_G(D, syn).item() == pytest.approx(0.49, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_adversarial_losses_match_loop_reference(seed):
    g = torch.Generator().manual_seed(seed)
    s = torch.randn(3, 1, 5, 5, generator=g, dtype=torch.float64)
    r = torch.randn(3, 1, 5, 5, generator=g, dtype=torch.float64)
    syn, real = feats(), feats()
    D = Table([(syn, s), (real, r)])
    ref_d = sum(x * x for x in s.view(-1).tolist()) / s.numel()
    ref_d += sum((x - 1) ** 2 for x in r.view(-1).tolist()) / r.numel()
    ref_g = sum((x - 1) ** 2 for x in s.view(-1).tolist()) / s.numel()
    assert adv_loss_D(D, syn, real).item() == pytest.approx(ref_d, abs=1e-12)
    assert adv_loss_G(D, syn).item() == pytest.approx(ref_g, abs=1e-12)
    assert adv_loss_D(D, syn, real).item() >= 0 and adv_loss_G(D, syn).item() >= 0


def test_bce_half_is_ln2():
    m = (torch.rand(1, 1, 8, 8) > 0.5).double()
    assert mask_loss(m, torch.full_like(m, 0.5)).item() == pytest.approx(math.log(2), abs=1e-12)


def test_bce_perfect_prediction():
    m = (torch.rand(2, 1, 8, 8) > 0.5).double()
    loss = mask_loss(m, m.clamp(BCE_EPS, 1 - BCE_EPS)).item()
    assert 0 <= loss <= -math.log(1 - 1e-7) + 1e-15


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_bce_matches_loop_reference(seed):
    rng = np.random.default_rng(seed)
    m = (rng.uniform(size=(8, 8)) > 0.5).astype(np.float64)
    p = rng.uniform(size=(8, 8))
    p[0, 0], p[0, 1] = 0.0, 1.0  # exercise the clamp
    ref = 0.0
    for i in range(8):
        for j in range(8):
            q = min(max(p[i, j], BCE_EPS), 1 - BCE_EPS)
            ref -= m[i, j] * math.log(q) + (1 - m[i, j]) * math.log(1 - q)
    ref /= 64
    got = mask_loss(torch.from_numpy(m)[None, None], torch.from_numpy(p)[None, None]).item()
    assert got == pytest.approx(ref, abs=1e-12)
    assert got >= 0


def test_bce_shape_mismatch():
    with pytest.raises(ValueError):
        mask_loss(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 4, 4))


def test_predict_loss_weighting():
    assert predict_loss(PredictComponents(0.0, 0.0, 0.0, 0.0)) == 0.0
    assert predict_loss(PredictComponents(1.0, 1.0, 1.0, 1.0), 0.1, 1.0) == pytest.approx(2.2, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=4, max_size=4), st.floats(0, 5), st.floats(0, 5))
def test_predict_loss_is_weighted_sum(c, la, lm):
    got = predict_loss(PredictComponents(*c), la, lm)
    assert got == pytest.approx(la * c[0] + la * c[1] + lm * c[2] + lm * c[3], abs=1e-12)
    assert got >= 0


def test_removal_loss_values():
    x = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    assert removal_losses(x, x, x, x).item() == 0.0
    assert removal_losses(x + 0.1, x, x - 0.1, x).item() == pytest.approx(0.2, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0, 3), st.floats(0, 3))
def test_removal_loss_matches_loop_reference(seed, ls, lg):
    g = torch.Generator().manual_seed(seed)
    a, b, c, d = (torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64) for _ in range(4))
    ref = ls * sum(abs(x - y) for x, y in zip(a.view(-1).tolist(), b.view(-1).tolist())) / 48
    ref += lg * sum(abs(x - y) for x, y in zip(c.view(-1).tolist(), d.view(-1).tolist())) / 48
    assert removal_losses(a, b, c, d, ls, lg).item() == pytest.approx(ref, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_l1_symmetry_and_triangle(seed):
    g = torch.Generator().manual_seed(seed)
    a, b, c = (torch.rand(2, 3, 5, 5, generator=g, dtype=torch.float64) for _ in range(3))
    assert l1(a, b).item() == l1(b, a).item()
    assert l1(a, c).item() <= l1(a, b).item() + l1(b, c).item() + 1e-15
    assert l1(a, a).item() == 0.0


# --- mask operation -------------------------------------------------------------

def test_mask_operation_extremes():
    x = torch.rand(2, 3, 8, 8)
    assert torch.equal(mask_operation(x, torch.zeros(2, 1, 8, 8)), x)
    assert torch.equal(mask_operation(x, torch.ones(2, 1, 8, 8)), torch.zeros_like(x))


def test_mask_operation_checkerboard():
    x = torch.rand(1, 3, 8, 8)
    board = ((torch.arange(8)[:, None] + torch.arange(8)[None]) % 2).float()[None, None] * 0.9 + 0.05
    out = mask_operation(x, board)
    for i in range(8):
        for j in range(8):
            for ch in range(3):
                want = 0.0 if board[0, 0, i, j] > 0.5 else x[0, ch, i, j].item()
                assert out[0, ch, i, j].item() == want


def test_mask_operation_threshold_is_strict():
    x = torch.ones(1, 3, 2, 2)
    m = torch.tensor([[0.5, 0.5000001], [0.4999, 1.0]])[None, None]
    out = mask_operation(x, m)
    assert out[0, 0].tolist() == [[1.0, 0.0], [1.0, 0.0]]
    assert torch.equal(binarize(m), m > 0.5)


def test_mask_operation_shape_mismatch():
    with pytest.raises(ValueError):
        mask_operation(torch.rand(1, 3, 8, 8), torch.rand(1, 1, 4, 4))


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_mask_operation_exact_zeros_and_idempotent(seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(2, 3, 16, 16, generator=g) + 0.01
    m = torch.rand(2, 1, 16, 16, generator=g)
    once = mask_operation(x, m)
    hard = (m > 0.5).expand_as(x)
    assert torch.all(once[hard] == 0)
    assert torch.equal(once[~hard], x[~hard])
    assert torch.equal(mask_operation(once, m), once)
