import math

import numpy as np
import pytest
import torch

from maskgan.masks import LabelMask
from maskgan.palette import DEFAULT_PALETTE, make_palette
from maskgan.vae import (
    MaskVae,
    harden_logits,
    kl_loss,
    latent_traverse,
    reconstruction_loss,
    reparameterize,
    traversal_profile,
    vae_total_loss,
)

PAL3 = make_palette([("a", (0, 0, 0)), ("b", (255, 0, 0)), ("c", (0, 255, 0))])


def seeded_init(model, seed, std=0.2):
    gen = torch.Generator().manual_seed(seed)
    for p in model.parameters():
        if p.dim() > 1:
            with torch.no_grad():
                p.copy_(torch.randn(p.shape, generator=gen) * std)
    return model


def test_kl_loss_zero_at_origin():
    mu = torch.zeros(1, 4)
    assert kl_loss(mu, torch.zeros(1, 4)).item() == 0.0


def test_kl_loss_hand_value():
    # 0.5 * (sum mu^2 + sum(exp(0) - 0 - 1)) = 0.5 * 4
    assert kl_loss(torch.ones(1, 4), torch.zeros(1, 4)).item() == pytest.approx(2.0, abs=1e-7)


def test_kl_loss_nonnegative_random():
    gen = torch.Generator().manual_seed(0)
    for _ in range(200):
        mu = torch.randn(3, 8, generator=gen) * 3
        ls = torch.randn(3, 8, generator=gen) * 3
        assert kl_loss(mu, ls).item() >= 0
        assert kl_loss(mu, ls, convention="standard").item() >= 0


def test_kl_conventions_differ():
    ls = torch.full((1, 4), 0.5)
    paper = kl_loss(torch.zeros(1, 4), ls, "paper").item()
    std = kl_loss(torch.zeros(1, 4), ls, "standard").item()
    assert paper == pytest.approx(0.5 * 4 * (math.exp(0.5) - 0.5 - 1), rel=1e-6)
    assert std == pytest.approx(0.5 * 4 * (math.exp(1.0) - 1.0 - 1), rel=1e-6)
    with pytest.raises(ValueError):
        kl_loss(torch.zeros(1, 4), ls, "bogus")


def test_reparameterize_vanishing_noise():
    mu = torch.randn(2, 8, generator=torch.Generator().manual_seed(1))
    z = reparameterize(mu, torch.full((2, 8), -20.0), torch.Generator().manual_seed(2))
    assert torch.allclose(z, mu, atol=1e-8)


def test_reparameterize_seed_reproducible():
    mu, ls = torch.zeros(4, 8), torch.zeros(4, 8)
    z1 = reparameterize(mu, ls, torch.Generator().manual_seed(7))
    z2 = reparameterize(mu, ls, torch.Generator().manual_seed(7))
    assert torch.equal(z1, z2)


def test_reparameterize_unit_std_monte_carlo():
    gen = torch.Generator().manual_seed(3)
    z = reparameterize(torch.zeros(100_000, 1), torch.zeros(100_000, 1), gen)
    assert abs(z.std().item() - 1.0) < 0.02


def test_reconstruction_loss_peaked_and_uniform():
    target = torch.tensor([[[0, 1], [2, 1]]])
    logits = torch.full((1, 3, 2, 2), 0.0)
    # peak the correct class at +50
    for y in range(2):
        for x in range(2):
            logits[0, target[0, y, x], y, x] = 50.0
    assert reconstruction_loss(logits, target).item() < 1e-10

    uniform = torch.zeros(1, 19, 4, 4)
    labels = torch.randint(0, 19, (1, 4, 4), generator=torch.Generator().manual_seed(0))
    assert reconstruction_loss(uniform, labels).item() == pytest.approx(math.log(19), abs=1e-6)


def test_reconstruction_loss_rejects_bad_label():
    with pytest.raises(ValueError):
        reconstruction_loss(torch.zeros(1, 3, 2, 2), torch.full((1, 2, 2), 5))


def test_vae_total_loss_kl_weight_zero():
    model = seeded_init(MaskVae(3, latent_dim=2, base_width=4, resolution=4), 0)
    model.eval()
    onehot = torch.zeros(2, 3, 4, 4)
    labels = torch.randint(0, 3, (2, 4, 4), generator=torch.Generator().manual_seed(1))
    onehot.scatter_(1, labels.unsqueeze(1), 1.0)
    noise = torch.zeros(2, 2)
    total, parts = vae_total_loss(model, onehot, labels, lambda_kl=0.0, noise=noise)
    assert total.item() == pytest.approx(parts["recon"].item())
    total2, _ = vae_total_loss(model, onehot, labels, lambda_kl=1.0, noise=noise)
    assert total2.item() == pytest.approx(parts["recon"].item() + parts["kl"].item(), rel=1e-6)


def test_vae_gradient_matches_finite_differences():
    # miniature instance: 4x4 masks, 3 categories, latent dim 2, double precision
    torch.manual_seed(0)
    model = seeded_init(MaskVae(3, latent_dim=2, base_width=4, resolution=4), 5).double()
    model.eval()
    gen = torch.Generator().manual_seed(9)
    labels = torch.randint(0, 3, (2, 4, 4), generator=gen)
    onehot = torch.zeros(2, 3, 4, 4, dtype=torch.float64)
    onehot.scatter_(1, labels.unsqueeze(1), 1.0)
    noise = torch.randn(2, 2, generator=gen, dtype=torch.float64)

    def loss_fn():
        total, _ = vae_total_loss(model, onehot, labels, lambda_kl=1e-2, noise=noise)
        return total

    model.zero_grad()
    loss_fn().backward()

    h = 1e-6
    checked = 0
    for name, p in model.named_parameters():
        if p.grad is None:
            continue
        flat = p.data.view(-1)
        gflat = p.grad.view(-1)
        idx = torch.randint(0, flat.numel(), (3,), generator=torch.Generator().manual_seed(checked))
        for i in idx.tolist():
            orig = flat[i].item()
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            dn = loss_fn().item()
            flat[i] = orig
            fd = (up - dn) / (2 * h)
            bp = gflat[i].item()
            rel = abs(fd - bp) / max(abs(fd), abs(bp), 1e-8)
            assert rel <= 1e-3, f"{name}[{i}]: fd={fd} bp={bp} rel={rel}"
            checked += 1
    assert checked >= 30


@pytest.fixture(scope="module")
def tiny_vae():
    return seeded_init(MaskVae(19, latent_dim=8, base_width=4, resolution=16), 42).eval()


def toy_masks_16():
    rng = np.random.default_rng(0)
    a = np.zeros((16, 16), dtype=np.uint8)
    a[4:12, 4:12] = 1
    a[6:8, 6:8] = 3
    b = np.zeros((16, 16), dtype=np.uint8)
    b[2:14, 3:10] = 1
    b[10:13, 4:9] = 5
    return LabelMask(a), LabelMask(b)


def test_encode_deterministic_and_shaped(tiny_vae):
    from maskgan.vae import encode_mask

    a, _ = toy_masks_16()
    x = encode_mask(tiny_vae, a, DEFAULT_PALETTE)
    mu1, ls1 = tiny_vae.encode(x)
    mu2, ls2 = tiny_vae.encode(x)
    assert torch.equal(mu1, mu2) and torch.equal(ls1, ls2)
    assert mu1.shape == (1, 8) and ls1.shape == (1, 8)
    assert torch.isfinite(mu1).all() and torch.isfinite(ls1).all()


def test_encode_distinct_masks_distinct_mu(tiny_vae):
    from maskgan.vae import encode_mask

    a, b = toy_masks_16()
    mu_a, _ = tiny_vae.encode(encode_mask(tiny_vae, a, DEFAULT_PALETTE))
    mu_b, _ = tiny_vae.encode(encode_mask(tiny_vae, b, DEFAULT_PALETTE))
    assert not torch.allclose(mu_a, mu_b)


def test_encode_shape_mismatch_errors(tiny_vae):
    with pytest.raises(ValueError):
        tiny_vae.encode(torch.zeros(1, 19, 8, 8))


def test_decode_shape_and_softmax(tiny_vae):
    logits = tiny_vae.decode(torch.randn(2, 8, generator=torch.Generator().manual_seed(0)))
    assert logits.shape == (2, 19, 16, 16)
    probs = torch.softmax(logits, dim=1)
    assert torch.allclose(probs.sum(dim=1), torch.ones(2, 16, 16), atol=1e-5)


def test_harden_ties_toward_lowest_index():
    logits = torch.zeros(1, 3, 1, 1)
    logits[0, 0] = 0.5
    logits[0, 1] = 0.5
    assert harden_logits(logits)[0, 0, 0].item() == 0


def test_latent_traverse_identity_when_ref_equals_target(tiny_vae):
    a, _ = toy_masks_16()
    res = latent_traverse(tiny_vae, a, a, lambda_inter=2.5, palette=DEFAULT_PALETTE)
    assert torch.allclose(res.z_inter, res.z_target)
    assert torch.allclose(res.z_outer, res.z_target)
    assert (res.inter.labels == res.outer.labels).all()


def test_latent_traverse_swap_exchanges_roles(tiny_vae):
    a, b = toy_masks_16()
    ab = latent_traverse(tiny_vae, a, b, lambda_inter=2.5, palette=DEFAULT_PALETTE)
    ba = latent_traverse(tiny_vae, b, a, lambda_inter=2.5, palette=DEFAULT_PALETTE)
    # the perturbation vector negates, so toward/away roles swap
    assert torch.allclose(ab.z_inter - ab.z_target, -(ba.z_inter - ba.z_target), atol=1e-6)
    assert torch.allclose(ab.z_outer - ab.z_target, ba.z_inter - ba.z_target, atol=1e-6)


def test_latent_traverse_rejects_bad_lambda(tiny_vae):
    a, b = toy_masks_16()
    with pytest.raises(ValueError):
        latent_traverse(tiny_vae, a, b, lambda_inter=0.0, palette=DEFAULT_PALETTE)


def test_traversal_profile_starts_at_zero(tiny_vae):
    a, b = toy_masks_16()
    prof = traversal_profile(tiny_vae, a, b, DEFAULT_PALETTE, steps=8)
    assert len(prof) == 8
    assert prof[0] == 0.0
    assert all(0.0 <= d <= 1.0 for d in prof)
