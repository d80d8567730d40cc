import math
import warnings

import numpy as np
import pytest
import torch

from chartkp.errors import InsufficientKeypointsWarning, NonFiniteLoss, ShapeMismatch
from chartkp.losses import (
    LossWeights, TargetBatch, batch_contrastive_loss, legend_loss, masks_to_targets, multi_similarity_loss,
    push_pull_loss, spaden_kp_loss, total_loss, weighted_bce,
)
from chartkp.maskgen import build_mask_set


def fd_check(fn, x: torch.Tensor, n: int = 10, eps: float = 1e-6, seed: int = 0) -> float:
    """Worst relative error between autograd and central differences at n
    random coordinates of x (float64)."""
    x = x.detach().clone().double().requires_grad_(True)
    fn(x).backward()
    g = x.grad.detach().clone().reshape(-1)
    gen = np.random.default_rng(seed)
    worst = 0.0
    flat = x.detach().reshape(-1)
    for i in gen.choice(flat.numel(), size=min(n, flat.numel()), replace=False):
        xp, xm = flat.clone(), flat.clone()
        xp[i] += eps
        xm[i] -= eps
        with torch.no_grad():
            num = (fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))).item() / (2 * eps)
        denom = max(abs(num), abs(g[i].item()), 1e-6)
        worst = max(worst, abs(num - g[i].item()) / denom)
    return worst


# ---------------------------------------------------------------- hand values

def test_push_pull_examples():
    assert abs(push_pull_loss(0.5, 0.2, 0, 0.3) - 0.36) <= 1e-9
    assert push_pull_loss(1.0, 0.0, 1, 0.0) == 0.0
    for y in (0, 1):
        assert push_pull_loss(0.4, 0.4, y, 0.0) == 0.0


def test_push_pull_rejects_negative_margin():
    with pytest.raises(ValueError):
        push_pull_loss(0.1, 0.2, 0, -0.1)


def test_ms_examples():
    l_dis, l_sim, total = multi_similarity_loss(torch.zeros(1, 2, dtype=torch.float64), torch.tensor([0]))
    assert abs(l_dis.item() - math.log(2)) <= 1e-9
    assert abs(l_sim.item() - 0.5) <= 1e-9
    assert abs(total.item() - (math.log(2) + 0.5)) <= 1e-9


def test_ms_hand_two_samples():
    f = torch.tensor([[2.0, 0.0], [1.0, 0.5]], dtype=torch.float64)
    y = torch.tensor([0, 0])
    l_dis, l_sim, _ = multi_similarity_loss(f, y, alpha=1.0)
    expect_dis = -(math.log(math.exp(2) / (math.exp(2) + 1)) + math.log(math.exp(1) / (math.exp(1) + math.exp(0.5))))
    # pairs (s_i - s_j): 0, 1, -1, 0
    terms = [1, 1 - 1 / 2, 1 - (-1) / 1, 1]
    assert abs(l_dis.item() - expect_dis) <= 1e-9
    assert abs(l_sim.item() - sum(terms) / 4) <= 1e-9


def test_ms_dis_limit():
    f = torch.tensor([[60.0, 0.0]], dtype=torch.float64)
    assert multi_similarity_loss(f, torch.tensor([0]))[0].item() < 1e-20


def test_total_loss_examples():
    assert abs(float(total_loss(torch.tensor(1.0), torch.tensor(1.0), torch.tensor(1.0))) - 1.0) < 1e-6
    assert float(total_loss(torch.tensor(0.0), torch.tensor(0.0), torch.tensor(0.0))) == 0.0
    assert abs(total_loss(2.0, 0.5, 1.0) - 1.6) <= 1e-12


def test_total_loss_non_finite():
    with pytest.raises(NonFiniteLoss):
        total_loss(torch.tensor(float("nan")), torch.tensor(0.0), torch.tensor(0.0))


def test_loss_weights_validated():
    with pytest.raises(ValueError):
        LossWeights(0.5, 0.2, 0.1)
    with pytest.raises(ValueError):
        LossWeights(w_fg=0.9, w_bg=0.2)


def test_weighted_bce_closed_form():
    probs = torch.full((100, 100), 0.5, dtype=torch.float64)
    target = torch.zeros_like(probs)
    target[0, 0] = 1.0
    fg = target > 0.5
    got = weighted_bce(probs, target, fg, LossWeights()).item()
    expect = (0.99 * 1 + 0.01 * 9999) * math.log(2) / 10000
    assert abs(got - expect) <= 1e-12


def _targets(make_chart):
    return masks_to_targets([build_mask_set(make_chart("bar-vertical", 2))], dtype=torch.float64)


def _logit(p):
    p = p.clamp(1e-12, 1 - 1e-12)
    return torch.log(p) - torch.log1p(-p)


def test_kp_loss_zero_terms_at_match(make_chart):
    t = _targets(make_chart)
    logits = _logit(t.views)
    agg, parts = spaden_kp_loss(logits, t.offset.clone(), t)
    assert parts["fg_regress"].item() < 1e-18 and parts["bg_regress"].item() < 1e-18
    assert parts["offset"].item() == 0.0
    # any perturbation of a matching prediction raises the loss
    agg2, _ = spaden_kp_loss(logits + 0.3, t.offset + 0.05, t)
    assert agg2.item() > agg.item()


def test_kp_loss_shape_mismatch(make_chart):
    t = _targets(make_chart)
    with pytest.raises(ShapeMismatch):
        spaden_kp_loss(torch.zeros(1, 5, 3, 3), torch.zeros(1, 2, 3, 3), t)


def test_contrastive_degenerate_cases():
    emb = torch.randn(4, 6, 6)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        loss, ok = batch_contrastive_loss(emb, [(1, 1, 0)])
    assert not ok and loss.item() == 0.0
    assert any(issubclass(w.category, InsufficientKeypointsWarning) for w in caught)
    same = torch.ones(4, 6, 6)
    loss, ok = batch_contrastive_loss(same, [(1, 1, 0), (2, 2, 0)], kind="push_pull", m=0.0)
    assert ok and loss.item() == 0.0


def test_ms_prefers_true_grouping():
    emb = torch.zeros(2, 4, 4, dtype=torch.float64)
    emb[0, :, :2] = 1.0
    emb[1, :, 2:] = 1.0
    cells = [(r, c, 0 if c < 2 else 1) for r in range(4) for c in range(4)]
    shuffled = [(r, c, (r + c) % 2) for r, c, _ in cells]
    good, _ = batch_contrastive_loss(emb, cells)
    bad, _ = batch_contrastive_loss(emb, shuffled)
    assert good.item() < bad.item()


# ---------------------------------------------------------------- gradients

def test_push_pull_gradient():
    gen = torch.Generator().manual_seed(0)
    d = torch.rand(2, 20, generator=gen, dtype=torch.float64)
    y = (torch.rand(20, generator=gen) > 0.5).double()
    assert fd_check(lambda x: push_pull_loss(x[0], x[1], y, 0.3).sum(), d) <= 1e-3


def test_ms_gradient():
    gen = torch.Generator().manual_seed(1)
    f = torch.randn(8, 3, generator=gen, dtype=torch.float64)
    y = torch.tensor([0, 1, 2, 0, 1, 2, 0, 0])
    assert fd_check(lambda x: multi_similarity_loss(x, y)[2], f) <= 1e-3


def test_kp_loss_gradient(make_chart):
    t = _targets(make_chart)
    gen = torch.Generator().manual_seed(2)
    logits = torch.randn(t.views.shape, generator=gen, dtype=torch.float64)
    off = torch.rand(t.offset.shape, generator=gen, dtype=torch.float64)
    assert fd_check(lambda x: spaden_kp_loss(x, off, t)[0], logits) <= 1e-3
    # offset coordinates at keypoint cells carry the gradient
    mask = t.kp_mask[0]
    r, c = map(int, torch.nonzero(mask)[0])

    def at_cell(v):
        o = off.clone()
        o[0, :, r, c] = v
        return spaden_kp_loss(logits, o, t)[0]

    assert fd_check(at_cell, torch.tensor([0.3, 0.8], dtype=torch.float64), n=2) <= 1e-3


@pytest.mark.parametrize("kind", ["multi_similarity", "push_pull"])
def test_contrastive_gradient(kind):
    gen = torch.Generator().manual_seed(3)
    emb = torch.randn(6, 8, 8, generator=gen, dtype=torch.float64)
    cells = [(r, c, int(c >= 4)) for r in range(0, 8, 2) for c in range(0, 8, 3)]

    def fn(x):
        return batch_contrastive_loss(x, cells, kind, generator=torch.Generator().manual_seed(9))[0]

    assert fd_check(fn, emb) <= 1e-3


def test_legend_loss_gradient():
    gen = torch.Generator().manual_seed(4)
    cl = torch.randn(4, 5, generator=gen, dtype=torch.float64)
    pt = torch.randn(3, 5, generator=gen, dtype=torch.float64)
    labels = torch.tensor([0, 1, 2, 1])
    assert fd_check(lambda x: legend_loss(x, pt, labels), cl) <= 1e-3


def test_total_loss_gradient():
    x = torch.tensor([0.8, 0.3, 1.2], dtype=torch.float64)
    assert fd_check(lambda v: total_loss(v[0], v[1], v[2]), x, n=3) <= 1e-3
