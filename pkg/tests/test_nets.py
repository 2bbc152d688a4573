import itertools

import numpy as np
import pytest
import torch

from anchoralign.data_synth import ModalityMask
from anchoralign.nets import (
    LatentFeatures,
    NetConfig,
    SegmentationModel,
    fuse_latents,
    load_checkpoint,
    load_model_tensors,
    model_tensors,
    predict_segmentation,
    save_checkpoint,
)
from anchoralign.segmetrics import cross_entropy_loss

from fdcheck import numeric_grad


def _model(cfg=None, mods=(0, 1, 2, 3), J=4, seed=0):
    torch.manual_seed(seed)
    return SegmentationModel(cfg or NetConfig(latent_channels=8), mods, J).eval()


def _vol(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed))


def test_latent_shape():
    m = _model()
    z = m.encode(_vol(1, 32, 32, 32), 2)
    assert z.shape == (1, 8, 8, 8, 8) and z.modality == 2


def test_same_weights_same_latent_across_modalities():
    m = _model()
    m.encoders["1"].load_state_dict(m.encoders["0"].state_dict())
    x = _vol(2, 8, 8, 8)
    assert torch.equal(m.encode(x, 0).values, m.encode(x, 1).values)


def test_eval_mode_deterministic():
    m = _model()
    x = _vol(1, 4, 16, 16, 16)
    assert torch.equal(m(x).detach(), m(x).detach())


def test_divisibility_and_unknown_modality():
    m = _model()
    with pytest.raises(ValueError):
        m.encode(_vol(1, 10, 8, 8), 0)
    student = _model(mods=(2,))
    with pytest.raises(ValueError):
        student.encode(_vol(1, 8, 8, 8), 0)
    with pytest.raises(ValueError):
        SegmentationModel(NetConfig(), (4,), 4)


@pytest.mark.parametrize("cfg", [
    NetConfig(latent_channels=c, base_channels=b, downsample_factor=f, norm=n, fusion=fu)
    for c, b, f, n, fu in itertools.product((2, 5), (2, 4), (1, 2, 4), ("instance", "none"), ("mean", "concat"))
])
def test_shape_contract(cfg):
    m = _model(cfg)
    x = _vol(2, 4, 8, 12, 16)
    z = m.encode(x[:, 0], 0)
    f = cfg.downsample_factor
    assert z.shape == (2, cfg.latent_channels, 8 // f, 12 // f, 16 // f)
    probs = torch.softmax(m(x), 1)
    assert probs.shape == (2, 4, 8, 12, 16)
    assert torch.allclose(probs.sum(1), torch.ones(2, 8, 12, 16), atol=1e-6)
    assert torch.all(probs >= 0)


def test_invalid_net_config():
    for bad in (NetConfig(downsample_factor=3), NetConfig(norm="batch"), NetConfig(fusion="max"),
                NetConfig(latent_channels=0)):
        with pytest.raises(ValueError):
            bad.validate()


def test_zero_parameters_give_uniform_probabilities():
    m = _model()
    with torch.no_grad():
        for p in m.parameters():
            p.zero_()
    x = _vol(1, 4, 8, 8, 8)
    probs = torch.softmax(m(x), 1)
    assert torch.allclose(probs, torch.full_like(probs, 0.25), atol=1e-7)
    z = m.encode(x[:, 0], 0)
    assert torch.allclose(predict_segmentation(m, z), torch.full_like(probs, 0.25), atol=1e-7)


def test_predictor_rejects_wrong_latent():
    m = _model()
    with pytest.raises(ValueError):
        m.predict_logits(torch.zeros(1, 3, 2, 2, 2))


def test_gaussian_heads():
    cfg = NetConfig(latent_channels=3, gaussian_heads=True)
    m = _model(cfg)
    z = m.encode(_vol(1, 8, 8, 8), 1)
    mean, logvar = z.gaussian_stats
    assert mean.shape == logvar.shape == z.values.shape
    assert torch.equal(z.values, mean)
    sampled = _model(NetConfig(latent_channels=3, gaussian_heads=True, sample_latent=True)).train()
    g1, g2 = torch.Generator().manual_seed(1), torch.Generator().manual_seed(1)
    a = sampled.encode(_vol(1, 8, 8, 8), 0, g1)
    b = sampled.encode(_vol(1, 8, 8, 8), 0, g2)
    assert torch.equal(a.values, b.values) and not torch.equal(a.values, a.gaussian_stats[0])


# --- fusion -------------------------------------------------------------------


def _lat(j, seed):
    return LatentFeatures(_vol(1, 2, 2, 2, 2, seed=seed), j)


def test_fusion_examples():
    a, b = _lat(1, 1), _lat(2, 2)
    assert torch.equal(fuse_latents([a], ModalityMask((1,), 4)), a.values)
    twin = LatentFeatures(a.values.clone(), 2)
    assert torch.allclose(fuse_latents([a, twin], ModalityMask((1, 2), 4)), a.values)
    assert torch.allclose(fuse_latents([a, b], ModalityMask((1, 2), 4)), (a.values + b.values) / 2)


def test_fusion_permutation_invariance():
    lats = [_lat(j, 10 + j) for j in range(4)]
    mask = ModalityMask.full(4)
    ref = fuse_latents(lats, mask)
    for perm in itertools.permutations(range(4)):
        assert torch.allclose(fuse_latents([lats[i] for i in perm], mask), ref, atol=0, rtol=0)


def test_concat_fusion_zero_fills():
    a = _lat(2, 3)
    out = fuse_latents([a], ModalityMask((2,), 4), "concat")
    assert out.shape == (1, 8, 2, 2, 2)
    assert torch.equal(out[:, 4:6], a.values)
    assert out[:, :4].abs().sum() == 0 and out[:, 6:].abs().sum() == 0


def test_fusion_errors():
    with pytest.raises(ValueError):
        fuse_latents([_lat(0, 0)], None)
    with pytest.raises(ValueError):
        fuse_latents([_lat(0, 0)], ModalityMask((1,), 4))
    with pytest.raises(ValueError):
        fuse_latents([_lat(0, 0), LatentFeatures(torch.zeros(1, 2, 1, 1, 1), 1)], ModalityMask((0, 1), 4))


# --- gradient check ----------------------------------------------------------


def test_end_to_end_gradient_check():
    cfg = NetConfig(latent_channels=2, base_channels=1, downsample_factor=2, norm="none")
    m = _model(cfg, mods=(0,), J=1).double()
    params = list(m.parameters())
    assert sum(p.numel() for p in params) <= 1000
    x = _vol(1, 1, 2, 2, 2, seed=5).double()
    labels = torch.tensor([[[[0, 1], [2, 3]], [[3, 2], [1, 0]]]])

    def f():
        return cross_entropy_loss(m.predict_logits(m.encode(x, 0)), labels)

    m.zero_grad()
    f().backward()
    for p in params:
        num = numeric_grad(f, p, 1e-3)
        scale = max(num.abs().max().item(), 1e-12)
        assert (p.grad - num).abs().max().item() / scale < 1e-4


# --- checkpoints --------------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    m = _model()
    tensors = model_tensors(m, "model.")
    tensors["anchor.theta"] = torch.tensor([0.1, -0.2, 0.3, 0.0], dtype=torch.float64)
    meta = {"n_modalities": 4, "latent_channels": 8, "anchor": "adaptive", "seed": 0, "steps": 7}
    save_checkpoint(tmp_path / "a.ckpt", tensors, meta)
    save_checkpoint(tmp_path / "b.ckpt", tensors, meta)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    back, meta2 = load_checkpoint(tmp_path / "a.ckpt")
    assert meta2 == meta
    for k, v in tensors.items():
        assert back[k].dtype == v.numpy().dtype
        assert back[k].tobytes() == v.detach().numpy().tobytes()
    clone = _model(seed=99)
    load_model_tensors(clone, back, "model.")
    x = _vol(1, 4, 8, 8, 8)
    assert torch.equal(clone(x), m(x))
