import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from anchoralign.align import (
    AdaptiveWeights,
    AnchorConfigError,
    AnchorSpec,
    alignment_term,
    loss_align_adaptive,
    loss_align_fixed,
    loss_align_normal,
    modality_gap,
    teacher_loss,
)
from anchoralign.nets import LatentFeatures
from anchoralign.theory import gaussian_logpdf, mc_kl_estimate

from fdcheck import relative_error


def t(x):
    return torch.tensor(x, dtype=torch.float64)


def lat(x, j, stats=None):
    return LatentFeatures(torch.as_tensor(x, dtype=torch.float64), j, stats)


def test_fixed_examples():
    a = torch.randn(2, 3, dtype=torch.float64)
    assert loss_align_fixed(a, a).item() == 0.0
    assert loss_align_fixed(t([1.0, 1.0]), t([0.0, 0.0])).item() == 1.0
    b = torch.randn(2, 3, dtype=torch.float64)
    assert loss_align_fixed(a, b).item() == loss_align_fixed(b, a).item()
    with pytest.raises(ValueError):
        loss_align_fixed(a, torch.zeros(3, 2, dtype=torch.float64))


def test_adaptive_examples():
    w = AdaptiveWeights(2, [math.log(3), 0.0])
    assert w().detach().numpy() == pytest.approx([1.5, 0.5])
    assert loss_align_adaptive([t([2.0]), t([0.0])], w, base_k=1).item() == pytest.approx(6.0, abs=1e-12)

    zs = [torch.randn(4, dtype=torch.float64) for _ in range(3)]
    uniform = AdaptiveWeights(3)
    expected = sum(((z - zs[0]) ** 2).mean() for z in zs)
    assert loss_align_adaptive(zs, uniform, 0).item() == pytest.approx(expected.item(), rel=1e-12)
    same = [zs[0].clone() for _ in range(3)]
    assert loss_align_adaptive(same, AdaptiveWeights(3, [3.0, -1.0, 0.2]), 2).item() == 0.0
    with pytest.raises(ValueError):
        loss_align_adaptive([zs[0]], AdaptiveWeights(1), 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=6))
def test_weight_simplex(theta):
    w = AdaptiveWeights(len(theta), theta).numpy()
    assert np.all(w > 0)
    assert abs(w.sum() - len(theta)) <= 1e-9


def test_weight_simplex_after_optimizer_steps():
    w = AdaptiveWeights(4)
    opt = torch.optim.Adam([w.theta], lr=0.5)
    zs = [torch.randn(8, dtype=torch.float64) for _ in range(4)]
    for _ in range(300):
        opt.zero_grad()
        loss_align_adaptive(zs, w, 1).backward()
        opt.step()
        v = w.numpy()
        assert abs(v.sum() - 4) <= 1e-6 and np.all(v > 0)


def test_normal_examples():
    zero = torch.zeros(3, dtype=torch.float64)
    for variant in ("closed_form", "paper_literal"):
        assert loss_align_normal((zero, zero), variant).item() == pytest.approx(0.0, abs=1e-15)
    assert loss_align_normal((t([1.0]), t([0.0]))).item() == pytest.approx(0.5, abs=1e-12)
    assert loss_align_normal((t([0.0]), t([math.log(4.0)]))).item() == pytest.approx(0.8069, abs=1e-4)
    with pytest.raises(ValueError):
        loss_align_normal((t([0.0]), t([-math.inf])))
    with pytest.raises(ValueError):
        loss_align_normal((t([0.0]), t([0.0])), "other")


def test_literal_minus_closed_is_mean_log_inverse_std():
    g = torch.Generator().manual_seed(0)
    mu = torch.randn(50, dtype=torch.float64, generator=g)
    logvar = torch.randn(50, dtype=torch.float64, generator=g)
    diff = loss_align_normal((mu, logvar), "paper_literal") - loss_align_normal((mu, logvar), "closed_form")
    v = torch.exp(0.5 * logvar)
    assert diff.item() == pytest.approx(torch.log(1 / v).mean().item(), abs=1e-12)


def test_literal_variant_can_be_negative():
    val = loss_align_normal((t([0.0]), t([math.log(2.0)])), "paper_literal").item()
    assert val == pytest.approx(-math.log(2) + 0.5, abs=1e-12)
    assert val < 0


def test_closed_form_matches_monte_carlo():
    rng = np.random.default_rng(0)
    for _ in range(50):
        mu, sigma = rng.normal(0, 1.5), math.exp(rng.uniform(-1, 1))
        closed = loss_align_normal((t([mu]), t([2 * math.log(sigma)]))).item()
        est, se = mc_kl_estimate(
            lambda r, n: mu + sigma * r.standard_normal(n),
            lambda x: gaussian_logpdf(x, mu, sigma),
            lambda x: gaussian_logpdf(x, 0.0, 1.0),
            100_000,
            rng,
        )
        assert abs(est - closed) <= 3 * se


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=8))
def test_losses_nonnegative(pairs):
    mu = t([p[0] for p in pairs])
    lv = t([p[1] for p in pairs])
    assert loss_align_normal((mu, lv)).item() >= -1e-12
    assert loss_align_fixed(mu, lv).item() >= 0


def test_teacher_loss_reductions():
    a = lat(torch.randn(1, 2, 2, 2, 2, dtype=torch.float64), 0)
    b = lat(a.values.clone(), 1)
    segs = [t(0.3), t(0.7)]
    assert teacher_loss([a, b], AnchorSpec("none"), segs).item() == pytest.approx(1.0)
    assert teacher_loss([a, b], AnchorSpec("fixed_modality", base_k=1), segs).item() == pytest.approx(1.0)
    z0, z1 = lat(t([[1.0, 1.0]]), 0), lat(t([[0.0, 0.0]]), 1)
    assert teacher_loss([z0, z1], AnchorSpec("fixed_modality", base_k=1), segs, 1.0).item() == pytest.approx(2.0)
    assert teacher_loss([z0, z1], AnchorSpec("fixed_modality", base_k=1), segs, 0.5).item() == pytest.approx(1.5)


def test_standard_normal_requires_stats():
    with pytest.raises(AnchorConfigError):
        alignment_term([lat(t([0.0]), 0), lat(t([0.0]), 1)], AnchorSpec("standard_normal"))
    with pytest.raises(AnchorConfigError):
        alignment_term([lat(t([0.0]), 0), lat(t([0.0]), 1)], AnchorSpec("adaptive"))


def test_anchor_spec_validation():
    AnchorSpec("adaptive", base_k=3).validate(4)
    for bad in (AnchorSpec("mystery"), AnchorSpec("fixed_modality", base_k=4),
                AnchorSpec("adaptive", theta=[0.0, math.nan, 0.0, 0.0]),
                AnchorSpec("adaptive", theta=[0.0]),
                AnchorSpec("standard_normal", formula_variant="x")):
        with pytest.raises(AnchorConfigError):
            bad.validate(4)


def test_modality_gap_examples():
    assert modality_gap([np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])]) == pytest.approx(5.0)
    shared = np.random.default_rng(0).normal(size=(5, 3))
    assert modality_gap([shared, shared, shared]) == 0.0
    sets = [np.random.default_rng(i).normal(size=(4, 6)) for i in range(3)]
    assert modality_gap([2.5 * s for s in sets]) == pytest.approx(2.5 * modality_gap(sets), rel=1e-12)
    with pytest.raises(ValueError):
        modality_gap([np.zeros((0, 2)), np.zeros((1, 2))])
    with pytest.raises(ValueError):
        modality_gap([np.zeros((1, 2))])


# --- gradient checks ----------------------------------------------------------


def _leaf(shape, seed):
    return torch.randn(*shape, dtype=torch.float64, generator=torch.Generator().manual_seed(seed)).requires_grad_()


def test_gradcheck_fixed():
    a, b = _leaf((2, 4, 2), 0), _leaf((2, 4, 2), 1)
    assert relative_error(lambda: loss_align_fixed(a, b), [a, b]) < 1e-4


def test_gradcheck_adaptive_latents_and_theta():
    zs = [_leaf((16,), i) for i in range(4)]
    w = AdaptiveWeights(4, [0.3, -0.2, 0.5, 0.1])
    assert relative_error(lambda: loss_align_adaptive(zs, w, 2), zs + [w.theta]) < 1e-4


def test_gradcheck_gaussian_kl():
    mu, lv = _leaf((32,), 3), _leaf((32,), 4)
    for variant in ("closed_form", "paper_literal"):
        assert relative_error(lambda: loss_align_normal((mu, lv), variant), [mu, lv]) < 1e-4
