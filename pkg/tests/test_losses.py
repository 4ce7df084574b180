import math

import numpy as np
import pytest
import torch

from ustrans.errors import DataError, DivergenceError, MetricPreconditionError
from ustrans.losses import (
    LOG_COLUMNS,
    LossLogWriter,
    LossReport,
    LossWeights,
    adversarial_losses,
    correlation_loss,
    cycle_loss,
    generator_adversarial_term,
    identical_loss,
    pearson_cc,
    read_loss_log,
    total_generator_objective,
)


# -- brute-force oracles, elementwise ---------------------------------------


def oracle_lsgan(d_real, d_fake):
    g = 0.0
    n = 0
    for v in np.asarray(d_fake).ravel():
        g += (v - 1.0) ** 2
        n += 1
    g /= n
    d = 0.0
    for v in np.asarray(d_real).ravel():
        d += (v - 1.0) ** 2
    d /= np.asarray(d_real).size
    d2 = 0.0
    for v in np.asarray(d_fake).ravel():
        d2 += v**2
    return g, d + d2 / np.asarray(d_fake).size


def oracle_mean_abs(x, y):
    total = 0.0
    for a, b in zip(np.asarray(x).ravel(), np.asarray(y).ravel()):
        total += abs(a - b)
    return total / np.asarray(x).size


def oracle_cc(x, y):
    """Pearson correlation per frame, averaged over the batch."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    values = []
    for xf, yf in zip(x.reshape(x.shape[0], -1), y.reshape(y.shape[0], -1)):
        xc = xf - xf.mean()
        yc = yf - yf.mean()
        values.append((xc * yc).sum() / math.sqrt((xc**2).sum() * (yc**2).sum()))
    return float(np.mean(values))


def rand_batch(rng, dtype, shape=(2, 1, 4, 4)):
    return torch.tensor(rng.uniform(0.0, 1.0, shape), dtype=dtype)


class TestAdversarial:
    def test_perfect_discriminator_gives_zero(self):
        ones = torch.ones(2, 1, 3, 3)
        zeros = torch.zeros(2, 1, 3, 3)
        g, d = adversarial_losses(ones, zeros)
        assert float(d) == 0.0
        assert float(g) == 1.0

    def test_fully_fooled_generator_term_zero(self):
        g, _ = adversarial_losses(torch.ones(1, 1, 2, 2), torch.ones(1, 1, 2, 2))
        assert float(g) == 0.0

    def test_half_scores(self):
        half = torch.full((2, 1, 3, 3), 0.5)
        g, d = adversarial_losses(half, half)
        assert float(d) == pytest.approx(0.5, abs=1e-12)
        assert float(g) == pytest.approx(0.25, abs=1e-12)

    @pytest.mark.parametrize("dtype,tol", [(torch.float32, 1e-6), (torch.float64, 1e-12)])
    def test_matches_bruteforce_oracle(self, rng, dtype, tol):
        real = rand_batch(rng, dtype)
        fake = rand_batch(rng, dtype)
        g, d = adversarial_losses(real, fake)
        og, od = oracle_lsgan(real.numpy(), fake.numpy())
        assert abs(float(g) - og) <= tol
        assert abs(float(d) - od) <= tol

    def test_nonfinite_scores_raise(self):
        bad = torch.tensor([[[[float("nan")]]]])
        with pytest.raises(DivergenceError):
            adversarial_losses(bad, torch.zeros(1, 1, 1, 1))
        with pytest.raises(DivergenceError):
            generator_adversarial_term(bad)


class TestCycleAndIdentical:
    def test_exact_reconstruction_is_zero(self, rng):
        a = rand_batch(rng, torch.float64)
        b = rand_batch(rng, torch.float64)
        assert float(cycle_loss(a, a.clone(), b, b.clone())) == 0.0
        assert float(identical_loss(b, b.clone(), a, a.clone())) == 0.0

    def test_constant_offset(self, rng):
        a = rand_batch(rng, torch.float64)
        b = rand_batch(rng, torch.float64)
        assert float(cycle_loss(a, a + 0.1, b, b)) == pytest.approx(0.1, abs=1e-12)

    def test_inverted_frame_identical_term(self, rng):
        b = rand_batch(rng, torch.float64)
        a = rand_batch(rng, torch.float64)
        value = float(identical_loss(b, 1.0 - b, a, a))
        expected = float(torch.mean(torch.abs(1.0 - 2.0 * b)))
        assert value == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("dtype,tol", [(torch.float32, 1e-6), (torch.float64, 1e-12)])
    def test_matches_bruteforce_oracle(self, rng, dtype, tol):
        a, ra = rand_batch(rng, dtype), rand_batch(rng, dtype)
        b, rb = rand_batch(rng, dtype), rand_batch(rng, dtype)
        ours = float(cycle_loss(a, ra, b, rb))
        oracle = oracle_mean_abs(a.numpy(), ra.numpy()) + oracle_mean_abs(b.numpy(), rb.numpy())
        assert abs(ours - oracle) <= tol
        ours_idt = float(identical_loss(b, rb, a, ra))
        oracle_idt = oracle_mean_abs(b.numpy(), rb.numpy()) + oracle_mean_abs(a.numpy(), ra.numpy())
        assert abs(ours_idt - oracle_idt) <= tol

    def test_shape_mismatch_rejected(self, rng):
        a = rand_batch(rng, torch.float32)
        with pytest.raises(DataError):
            cycle_loss(a, a[:, :, :2, :], a, a)


class TestCorrelation:
    def test_identity_translation_is_zero(self, rng):
        a = rand_batch(rng, torch.float64)
        b = rand_batch(rng, torch.float64)
        assert float(correlation_loss(a, a.clone(), b, b.clone())) == pytest.approx(0.0, abs=1e-12)

    def test_positive_affine_invariance(self, rng):
        a = rand_batch(rng, torch.float64)
        b = rand_batch(rng, torch.float64)
        base = float(correlation_loss(a, a.clone(), b, b.clone()))
        scaled = float(correlation_loss(a, 2.0 * a + 0.1, b, b.clone()))
        assert abs(scaled - base) <= 1e-10

    def test_anticorrelated_term_is_two(self, rng):
        a = rand_batch(rng, torch.float64)
        b = rand_batch(rng, torch.float64)
        value = float(correlation_loss(a, 1.0 - a, b, b.clone()))
        assert value == pytest.approx(2.0, abs=1e-10)

    def test_range_and_oracle(self, rng):
        for dtype, tol in ((torch.float32, 1e-6), (torch.float64, 1e-12)):
            a, ga = rand_batch(rng, dtype), rand_batch(rng, dtype)
            b, gb = rand_batch(rng, dtype), rand_batch(rng, dtype)
            ours = float(correlation_loss(a, ga, b, gb))
            oracle = (1.0 - oracle_cc(ga.numpy(), a.numpy())) + (
                1.0 - oracle_cc(gb.numpy(), b.numpy())
            )
            assert abs(ours - oracle) <= tol
            assert 0.0 <= ours <= 4.0

    def test_constant_frame_rejected(self, rng):
        a = rand_batch(rng, torch.float64)
        with pytest.raises(MetricPreconditionError, match="constant"):
            correlation_loss(a, torch.full_like(a, 0.3), a, a.clone())


class TestTotalObjective:
    def test_hand_computed_composition(self):
        parts = LossReport(adv_g=0.25, cyc=0.1, idt=0.02, cc=0.04)
        w = LossWeights(10.0, 5.0, 5.0)
        assert total_generator_objective(parts, w) == pytest.approx(1.55, abs=1e-12)

    def test_zero_parts_give_zero(self):
        assert total_generator_objective(LossReport(), LossWeights()) == 0.0

    def test_vanilla_cyclegan_reduction(self, rng):
        # lambda2 = lambda3 = 0 must equal an independently coded vanilla
        # CycleGAN objective on identical inputs.
        a, ra = rand_batch(rng, torch.float64), rand_batch(rng, torch.float64)
        b, rb = rand_batch(rng, torch.float64), rand_batch(rng, torch.float64)
        fake_scores = rand_batch(rng, torch.float64, (2, 1, 3, 3))
        adv_g = float(generator_adversarial_term(fake_scores))
        parts = LossReport(
            adv_g=adv_g,
            cyc=float(cycle_loss(a, ra, b, rb)),
            idt=float(identical_loss(b, rb, a, ra)),
            cc=float(correlation_loss(a, ra, b, rb)),
        )
        ours = total_generator_objective(parts, LossWeights(10.0, 0.0, 0.0))

        # independent vanilla implementation
        fs = fake_scores.numpy()
        vanilla = ((fs - 1.0) ** 2).mean() + 10.0 * (
            np.abs(ra.numpy() - a.numpy()).mean() + np.abs(rb.numpy() - b.numpy()).mean()
        )
        assert abs(ours - vanilla) <= 1e-12

    def test_negative_weights_rejected(self):
        with pytest.raises(DataError):
            LossWeights(-1.0, 0.0, 0.0)

    def test_vanilla_flag(self):
        assert LossWeights(10.0, 0.0, 0.0).is_vanilla_cyclegan
        assert not LossWeights().is_vanilla_cyclegan


class TestInputGradients:
    """Analytic gradients of each term w.r.t. the fake-image input match
    central finite differences in 64-bit arithmetic."""

    @staticmethod
    def fd_check(fn, x, h=1e-5, rtol=1e-4, n_probe=6):
        x = x.clone().requires_grad_(True)
        fn(x).backward()
        grad = x.grad.detach().clone()
        flat = x.detach().view(-1)
        probe = np.random.default_rng(0).choice(flat.numel(), size=n_probe, replace=False)
        for idx in probe:
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + h
            up = float(fn(x.detach()))
            with torch.no_grad():
                flat[idx] = orig - h
            dn = float(fn(x.detach()))
            with torch.no_grad():
                flat[idx] = orig
            fd = (up - dn) / (2 * h)
            an = grad.view(-1)[idx].item()
            assert abs(fd - an) <= rtol * max(abs(fd), abs(an), 1e-3)

    def test_adversarial_gradient(self, rng):
        d_fake = rand_batch(rng, torch.float64, (2, 1, 8, 8))
        self.fd_check(lambda x: generator_adversarial_term(x), d_fake)

    def test_cycle_gradient(self, rng):
        a = rand_batch(rng, torch.float64, (2, 1, 8, 8))
        rec = rand_batch(rng, torch.float64, (2, 1, 8, 8))
        b = rand_batch(rng, torch.float64, (2, 1, 8, 8))
        self.fd_check(lambda x: cycle_loss(a, x, b, b.clone()), rec)

    def test_identical_gradient(self, rng):
        a = rand_batch(rng, torch.float64, (2, 1, 8, 8))
        b = rand_batch(rng, torch.float64, (2, 1, 8, 8))
        g_b = rand_batch(rng, torch.float64, (2, 1, 8, 8))
        self.fd_check(lambda x: identical_loss(b, x, a, a.clone()), g_b)

    def test_correlation_gradient(self, rng):
        a = rand_batch(rng, torch.float64, (2, 1, 8, 8))
        g_a = rand_batch(rng, torch.float64, (2, 1, 8, 8))
        b = rand_batch(rng, torch.float64, (2, 1, 8, 8))
        self.fd_check(lambda x: correlation_loss(a, x, b, b + 0.01), g_a)


class TestLossLog:
    def test_schema_and_round_trip(self, tmp_path):
        path = tmp_path / "loss_log.csv"
        with LossLogWriter(path, comments=["baseline: vanilla CycleGAN"]) as log:
            log.append(1, 1, LossReport(0.1, 0.2, 0.3, 0.4, 0.5, 4.2))
            log.append(2, 1, LossReport(0.2, 0.3, 0.4, 0.5, 0.6, 5.2))
        text = path.read_text().splitlines()
        assert text[0] == "# baseline: vanilla CycleGAN"
        assert text[1] == ",".join(LOG_COLUMNS)
        rows = read_loss_log(path)
        assert len(rows) == 2
        assert rows[0]["step"] == 1 and rows[1]["total"] == 5.2

    def test_pearson_cc_matches_numpy(self, rng):
        x = rand_batch(rng, torch.float64, (3, 1, 6, 6))
        y = rand_batch(rng, torch.float64, (3, 1, 6, 6))
        assert float(pearson_cc(x, y)) == pytest.approx(oracle_cc(x.numpy(), y.numpy()), abs=1e-12)
