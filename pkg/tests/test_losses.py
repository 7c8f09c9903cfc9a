import numpy as np
import pytest

from tmcvae.autodiff import Tensor, ancestors
from tmcvae.errors import ContractError, DimensionError
from tmcvae.losses import (
    ContrastiveBatch,
    bce,
    cosine_similarity,
    elbo,
    recon_log_likelihood,
    tmc_loss,
    total_loss,
)

from helpers import check_gradients


class TestReconLogLikelihood:
    def test_perfect_reconstruction(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert float(recon_log_likelihood(Tensor(x), Tensor(x)).data) == 0.0

    def test_scalar_case(self):
        out = recon_log_likelihood(Tensor(2.0), Tensor(0.0))
        assert float(out.data) == -2.0

    def test_monotone_in_distance(self):
        target = Tensor(np.zeros(3))
        values = [float(recon_log_likelihood(Tensor(np.full(3, c)), target, batched=False).data)
                  for c in (0.5, 1.0, 2.0, 4.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_batch_average(self):
        rec = Tensor(np.array([[1.0, 0.0], [0.0, 0.0]]))
        tgt = Tensor(np.zeros((2, 2)))
        # squared error 1 over 4 elements -> per-element mean 0.25
        assert float(recon_log_likelihood(rec, tgt).data) == -0.125

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            recon_log_likelihood(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_permutation_invariant_over_batch(self):
        rng = np.random.default_rng(0)
        rec = rng.normal(size=(6, 4))
        tgt = rng.normal(size=(6, 4))
        perm = rng.permutation(6)
        a = float(recon_log_likelihood(Tensor(rec), Tensor(tgt)).data)
        b = float(recon_log_likelihood(Tensor(rec[perm]), Tensor(tgt[perm])).data)
        assert abs(a - b) < 1e-12


class TestElbo:
    def test_zero_case(self):
        assert float(elbo(Tensor(0.0), Tensor(0.0)).data) == 0.0

    def test_arithmetic(self):
        assert float(elbo(Tensor(-1.0), Tensor(0.5)).data) == -1.5

    def test_negative_kl_rejected(self):
        with pytest.raises(ContractError):
            elbo(Tensor(0.0), Tensor(-0.5))


class TestBce:
    def test_confident_correct_is_zero(self):
        out = bce(Tensor(np.array([1.0 - 1e-9])), Tensor(np.array([1.0])))
        assert float(out.data) < 1e-6

    def test_half_is_ln2(self):
        out = bce(Tensor(np.array([0.5])), Tensor(np.array([1.0])))
        assert abs(float(out.data) - np.log(2.0)) < 1e-12

    def test_strictly_decreasing_in_p_for_positive_label(self):
        ps = np.linspace(0.1, 0.9, 9)
        vals = [float(bce(Tensor(np.array([p])), Tensor(np.array([1.0]))).data) for p in ps]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_clamp_keeps_finite(self):
        out = bce(Tensor(np.array([0.0, 1.0])), Tensor(np.array([1.0, 0.0])))
        assert np.isfinite(float(out.data))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        p = rng.uniform(0.05, 0.95, size=8)
        y = rng.integers(0, 2, size=8).astype(float)
        perm = rng.permutation(8)
        a = float(bce(Tensor(p), Tensor(y)).data)
        b = float(bce(Tensor(p[perm]), Tensor(y[perm])).data)
        assert abs(a - b) < 1e-12


class TestCosine:
    def test_self_similarity(self):
        v = np.array([1.0, 2.0, -3.0])
        assert abs(cosine_similarity(v, v) - 1.0) < 1e-12

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=5)
        b = rng.normal(size=5)
        assert cosine_similarity(2 * a, 3 * b) == cosine_similarity(a, b)

    def test_zero_vector_defined_as_zero(self):
        assert cosine_similarity(np.zeros(3), [1.0, 2.0, 3.0]) == 0.0


class TestTmcLoss:
    def test_orthogonal_hand_case(self):
        # batch of 2 with z_c == z_t per sample and orthogonal across samples
        u = np.array([1.0, 0.0, 0.0, 0.0])
        v = np.array([0.0, 1.0, 0.0, 0.0])
        batch = ContrastiveBatch(Tensor(np.stack([u, v])), Tensor(np.stack([u, v])),
                                 temperature=1.5)
        expected = np.log(3.0) - 2.0 / 3.0
        assert abs(float(tmc_loss(batch).data) - expected) < 1e-9

    def test_batch_of_one_rejected(self):
        z = Tensor(np.ones((1, 4)))
        with pytest.raises(ContractError):
            tmc_loss(ContrastiveBatch(z, z, 1.5))

    def test_monotone_in_positive_similarity(self):
        # rotating z_t toward z_c raises the positive similarity and, with
        # negatives pinned, lowers the loss
        rng = np.random.default_rng(3)
        base = rng.normal(size=(3, 6))
        distract = np.roll(base, 1, axis=0)
        losses = []
        for w in (0.0, 0.4, 0.8):
            # blend a fixed distractor toward the anchor
            zt = (1 - w) * distract + w * base
            batch = ContrastiveBatch(Tensor(base), Tensor(zt), temperature=1.5)
            losses.append(float(tmc_loss(batch).data))
        assert losses[0] > losses[1] > losses[2]

    def test_scale_invariance_of_representations(self):
        rng = np.random.default_rng(4)
        zc = rng.normal(size=(4, 5))
        zt = rng.normal(size=(4, 5))
        a = float(tmc_loss(ContrastiveBatch(Tensor(zc), Tensor(zt), 1.5)).data)
        scaled = zc.copy()
        scaled[2] *= 7.5  # positive rescaling of one representation vector
        b = float(tmc_loss(ContrastiveBatch(Tensor(scaled), Tensor(zt), 1.5)).data)
        assert abs(a - b) < 1e-12

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(5)
        zc = rng.uniform(-1, 1, size=(3, 4))
        zt = rng.uniform(-1, 1, size=(3, 4))

        def build(ts):
            return tmc_loss(ContrastiveBatch(ts[0], ts[1], temperature=1.5))

        check_gradients(build, [zc, zt], tol=1e-4)

    def test_infonce_denominator_flag(self):
        rng = np.random.default_rng(6)
        zc = Tensor(rng.normal(size=(3, 4)))
        zt = Tensor(rng.normal(size=(3, 4)))
        plain = float(tmc_loss(ContrastiveBatch(zc, zt, 1.5)).data)
        with_pos = float(tmc_loss(
            ContrastiveBatch(zc, zt, 1.5), include_positive_in_denominator=True).data)
        assert with_pos > plain  # larger denominator, larger loss


class TestTotalLoss:
    def test_zero_case(self):
        assert float(total_loss(Tensor(0.0), Tensor(0.0), Tensor(0.0), 1.0, 1.0).data) == 0.0

    def test_arithmetic(self):
        out = total_loss(Tensor(-2.0), Tensor(0.7), Tensor(0.4), 1.0, 1.0)
        assert abs(float(out.data) - 3.1) < 1e-12

    def test_negative_weights_rejected(self):
        with pytest.raises(ContractError):
            total_loss(Tensor(0.0), Tensor(0.0), Tensor(0.0), -1.0, 1.0)

    def test_beta_zero_excludes_contrastive_nodes(self):
        zc = Tensor(np.random.default_rng(7).normal(size=(3, 4)), requires_grad=True)
        zt = Tensor(np.random.default_rng(8).normal(size=(3, 4)), requires_grad=True)
        tmc = tmc_loss(ContrastiveBatch(zc, zt, 1.5))
        total = total_loss(Tensor(-1.0), Tensor(0.5), tmc, alpha=1.0, beta=0.0)
        nodes = ancestors(total)
        assert tmc not in nodes
        assert zc not in nodes and zt not in nodes

    def test_elbo_descends_on_linear_gaussian_toy(self):
        # minimizing -elbo on a toy linear-Gaussian model drives the loss down
        from tmcvae.autodiff import Adam
        from tmcvae.fusion import DiagonalGaussian, kl_standard_normal

        rng = np.random.default_rng(9)
        x = rng.normal(size=(16, 3))
        w_enc = Tensor(0.1 * rng.normal(size=(3, 2)), requires_grad=True)
        lv = Tensor(np.zeros((16, 2)), requires_grad=True)
        w_dec = Tensor(0.1 * rng.normal(size=(2, 3)), requires_grad=True)
        noise = rng.standard_normal((16, 2))
        opt = Adam([w_enc, lv, w_dec], lr=1e-2)

        losses = []
        for _ in range(50):
            mu = Tensor(x) @ w_enc
            g = DiagonalGaussian(mu, lv)
            z = g.mean + (g.log_var * 0.5).exp() * Tensor(noise)
            recon = z @ w_dec
            ll = recon_log_likelihood(recon, Tensor(x))
            kl = kl_standard_normal(g).mean()
            loss = -elbo(ll, kl)
            losses.append(float(loss.data))
            opt.zero_grad()
            loss.backward()
            opt.step()
        assert all(a > b for a, b in zip(losses, losses[1:]))
