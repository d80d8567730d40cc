import itertools

import numpy as np
import pytest
import torch

from chartkp.errors import ShapeError
from chartkp.nets import (
    DIRECTIONS, FAMILIES, Backbone, BackboneConfig, ChartKPNet, corner_pool, image_to_tensor,
    load_checkpoint, pad_to_multiple, save_checkpoint,
)
from chartkp.nets.model import CrossViewAttention, contrastive_feature_map


def brute_pool(x: np.ndarray, d: str) -> np.ndarray:
    out = np.empty_like(x)
    h, w = x.shape
    for r in range(h):
        for c in range(w):
            if d == "left":
                out[r, c] = x[r, c:].max()
            elif d == "right":
                out[r, c] = x[r, :c + 1].max()
            elif d == "top":
                out[r, c] = x[r:, c].max()
            else:
                out[r, c] = x[:r + 1, c].max()
    return out


def test_corner_pool_row_example():
    x = np.array([[0.1, 0.5, 0.2]])
    assert corner_pool(x, "left").tolist() == [[0.5, 0.5, 0.2]]


def test_corner_pool_brute_force_and_idempotent():
    rng = np.random.default_rng(0)
    for _ in range(25):
        x = rng.standard_normal((8, 8))
        for d in DIRECTIONS:
            p = corner_pool(x, d)
            assert np.array_equal(p, brute_pool(x, d))
            assert np.array_equal(corner_pool(p, d), p)


def test_corner_pool_constant_and_batched():
    x = torch.full((2, 3, 5, 5), 0.7)
    for d in DIRECTIONS:
        assert torch.equal(corner_pool(x, d), x)
    with pytest.raises(ValueError):
        corner_pool(x, "diagonal")


@pytest.mark.parametrize("family", FAMILIES)
def test_backbone_stride_shape(family):
    torch.manual_seed(0)
    bb = Backbone(BackboneConfig(family, base_channels=8, n_stages=1)).eval()
    with torch.no_grad():
        out = bb(torch.zeros(1, 3, 256, 256))
    assert out.shape == (1, 8, 64, 64)


def test_backbone_rejects_bad_shape():
    bb = Backbone(BackboneConfig(base_channels=8, n_stages=1))
    with pytest.raises(ShapeError):
        bb(torch.zeros(1, 3, 100, 128))
    with pytest.raises(ShapeError):
        bb(torch.zeros(1, 1, 128, 128))


def test_config_validation():
    with pytest.raises(ValueError):
        BackboneConfig("RESNET")
    with pytest.raises(ValueError):
        BackboneConfig(stride=3)


def test_forward_deterministic():
    torch.manual_seed(0)
    net = ChartKPNet(BackboneConfig(base_channels=8, n_stages=1)).eval()
    x = torch.randn(1, 3, 64, 64)
    with torch.no_grad():
        a, b = net(x), net(x)
    assert torch.equal(a.probs, b.probs) and torch.equal(a.embeddings, b.embeddings)


def test_zero_init_heads_give_half():
    torch.manual_seed(0)
    net = ChartKPNet(BackboneConfig(base_channels=8, n_stages=1), zero_init_heads=True).eval()
    with torch.no_grad():
        out = net(torch.randn(2, 3, 64, 64))
    assert torch.all(out.probs == 0.5) and torch.all(out.offset == 0.5)
    assert out.type_logits.shape == (2, 5)
    assert out.embeddings.shape == (2, net.embed_dim, 16, 16)


def test_attention_symmetric_in_views():
    torch.manual_seed(0)
    att = CrossViewAttention(8, 16, kv_pool=2).double()
    trunk = torch.randn(1, 8, 8, 8, dtype=torch.float64)
    views = torch.rand(1, 5, 8, 8, dtype=torch.float64)
    a = contrastive_feature_map(att, trunk, views)
    b = contrastive_feature_map(att, trunk, views[:, [3, 0, 4, 2, 1]])
    assert a.shape == (1, 16, 8, 8)
    assert torch.allclose(a, b, atol=1e-12)


def test_attention_gradient_finite_differences():
    from test_losses import fd_check

    torch.manual_seed(1)
    att = CrossViewAttention(4, 8, kv_pool=2).double()
    views = torch.rand(1, 5, 6, 6, dtype=torch.float64)
    w = torch.randn(1, 8, 6, 6, dtype=torch.float64)
    trunk = torch.randn(1, 4, 6, 6, dtype=torch.float64)
    assert fd_check(lambda t: (contrastive_feature_map(att, t, views) * w).sum(), trunk) <= 1e-3
    assert fd_check(lambda v: (contrastive_feature_map(att, trunk, v) * w).sum(), views) <= 1e-3


def test_single_network_for_all_types():
    a = ChartKPNet(BackboneConfig(base_channels=8, n_stages=1))
    n_params = sum(p.numel() for p in a.parameters())
    assert n_params == sum(p.numel() for p in ChartKPNet(BackboneConfig(base_channels=8, n_stages=1)).parameters())


def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(0)
    net = ChartKPNet(BackboneConfig("SPN", True, True, base_channels=8, n_stages=1)).eval()
    save_checkpoint(net, tmp_path / "m.pt", {"note": 1})
    back, extra = load_checkpoint(tmp_path / "m.pt")
    x = torch.randn(1, 3, 64, 64)
    with torch.no_grad():
        assert torch.equal(net(x).probs, back(x).probs)
    assert extra == {"note": 1} and back.cfg == net.cfg


def test_pad_and_normalize():
    img = np.zeros((50, 70, 3), dtype=np.uint8)
    p = pad_to_multiple(img, 32)
    assert p.shape == (64, 96, 3) and p[60, 80, 0] == 255 and p[10, 10, 0] == 0
    t = image_to_tensor([p])
    assert t.shape == (1, 3, 64, 96) and float(t[0, 0, 0, 0]) == -2.0


@pytest.mark.parametrize("family,cp,dla", list(itertools.product(FAMILIES, (False, True), (False, True))))
def test_variant_forward_backward(family, cp, dla):
    torch.manual_seed(0)
    net = ChartKPNet(BackboneConfig(family, cp, dla, base_channels=8, n_stages=1))
    out = net(torch.randn(2, 3, 64, 64))
    (out.logits.mean() + out.offset.mean() + out.type_logits.mean() + out.embeddings.mean()).backward()
    assert out.logits.shape == (2, 5, 16, 16) and out.offset.shape == (2, 2, 16, 16)
    assert all(p.grad is not None for p in net.backbone.parameters() if p.requires_grad)
