"""Training objectives: examples, gradients vs finite differences, properties."""

import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from _oracles import finite_difference, relative_error
from utal.errors import ConfigError
from utal.losses import (
    GaussianOffset,
    MiningResult,
    _expected_l1_foil,
    binary_loss,
    clamp_alpha,
    expected_l1,
    expected_l1_training,
    export_loss_surfaces,
    kl_l1_loss,
    kl_l1_quadratic,
    l1_loss,
    multiclass_loss,
    sampled_l1_loss,
    select_hard_negatives,
)
from utal.numerics import Rng, mc_expected_l1


class _FixedEps:
    """rng stand-in that always yields the same epsilon."""

    def __init__(self, value):
        self.value = value

    def normal(self):
        return self.value


class TestHardNegativeMining:
    def test_paper_ratio(self):
        scores = np.concatenate([np.full(2, 0.9), np.linspace(0.1, 0.8, 10)])
        labels = np.array([1] * 2 + [0] * 10)
        res = select_hard_negatives(scores, labels, 1.0 / 3.0)
        assert res.positive_indices.tolist() == [0, 1]
        assert res.negative_indices.size == 6

    def test_no_positives_gives_empty_mining(self):
        res = select_hard_negatives(np.array([0.4, 0.6]), np.array([0, 0]), 1.0 / 3.0)
        assert res.positive_indices.size == 0
        assert res.negative_indices.size == 0

    def test_hardest_negatives_kept(self):
        # quota of 2: the two highest-scoring negatives (0.9 and 0.5) survive
        scores = np.array([0.7, 0.9, 0.1, 0.5])
        labels = np.array([1, 0, 0, 0])
        res = select_hard_negatives(scores, labels, 0.5)
        assert sorted(res.negative_indices.tolist()) == [1, 3]

    def test_tie_breaks_toward_lower_index(self):
        scores = np.array([0.9, 0.5, 0.5, 0.5])
        labels = np.array([1, 0, 0, 0])
        res = select_hard_negatives(scores, labels, 1.0)
        assert res.negative_indices.tolist() == [1]

    def test_quota_is_exact_over_random_batches(self):
        rng = Rng(606)
        for trial in range(100):
            r = rng.split(trial)
            n = 8 + r.randint(120)
            labels = (r.uniforms(n) < 0.25).astype(int)
            scores = r.uniforms(n)
            res = select_hard_negatives(scores, labels, 1.0 / 3.0)
            n_pos = int(labels.sum())
            n_neg_avail = int((labels == 0).sum())
            assert res.negative_indices.size == min(3 * n_pos, n_neg_avail)
            assert not set(res.positive_indices) & set(res.negative_indices)

    def test_rejects_nonpositive_ratio(self):
        with pytest.raises(ConfigError):
            select_hard_negatives(np.array([0.5]), np.array([1]), 0.0)


class TestBinaryLoss:
    def test_single_positive_at_half(self):
        mining = MiningResult(np.array([0]), np.array([], dtype=int))
        loss, _ = binary_loss(np.array([0.5]), np.array([1]), mining)
        assert loss == pytest.approx(math.log(2.0), abs=1e-4)

    def test_perfect_predictions(self):
        scores = np.array([1.0 - 1e-9, 1e-9])
        mining = MiningResult(np.array([0]), np.array([1]))
        loss, _ = binary_loss(scores, np.array([1, 0]), mining)
        assert loss == pytest.approx(0.0, abs=1e-5)

    def test_empty_mining_contributes_zero(self):
        mining = MiningResult(np.array([], dtype=int), np.array([], dtype=int))
        loss, grad = binary_loss(np.array([0.3, 0.7]), np.array([0, 0]), mining)
        assert loss == 0.0 and not grad.any()

    def test_gradient_matches_finite_differences(self):
        rng = Rng(13)
        for trial in range(30):
            r = rng.split(trial)
            n = 12
            scores = 0.05 + 0.9 * r.uniforms(n)
            labels = (r.uniforms(n) < 0.4).astype(int)
            mining = select_hard_negatives(scores, labels, 1.0 / 3.0)
            _, grad = binary_loss(scores, labels, mining)
            for j in range(n):
                def f(v):
                    s = scores.copy()
                    s[j] = v
                    return binary_loss(s, labels, mining)[0]
                assert relative_error(grad[j], finite_difference(f, scores[j])) <= 1e-4

    def test_gradient_only_on_mined_indices(self):
        scores = np.array([0.8, 0.6, 0.4, 0.2])
        labels = np.array([1, 0, 0, 0])
        mining = select_hard_negatives(scores, labels, 1.0)  # keeps 1 negative
        _, grad = binary_loss(scores, labels, mining)
        assert grad[0] != 0.0 and grad[1] != 0.0
        assert grad[2] == 0.0 and grad[3] == 0.0


class TestMulticlassLoss:
    def test_uniform_logits(self):
        logits = np.zeros((3, 20))
        loss, _ = multiclass_loss(logits, np.array([4, 0, 19]), np.arange(3))
        assert loss == pytest.approx(math.log(20.0), abs=1e-12)

    def test_confident_correct_goes_to_zero(self):
        logits = np.zeros((1, 5))
        logits[0, 2] = 50.0
        loss, _ = multiclass_loss(logits, np.array([2]), np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_empty_positive_set(self):
        loss, grad = multiclass_loss(np.ones((4, 3)), np.zeros(4, dtype=int), np.array([], dtype=int))
        assert loss == 0.0 and not grad.any()

    def test_gradient_matches_finite_differences(self):
        rng = Rng(14)
        for trial in range(20):
            r = rng.split(trial)
            logits = 2.0 * r.uniforms(4 * 5).reshape(4, 5) - 1.0
            labels = np.array([int(r.randint(5)) for _ in range(4)])
            pos = np.array([0, 2])
            _, grad = multiclass_loss(logits, labels, pos)
            for i in range(4):
                for c in range(5):
                    def f(v):
                        z = logits.copy()
                        z[i, c] = v
                        return multiclass_loss(z, labels, pos)[0]
                    assert relative_error(grad[i, c], finite_difference(f, logits[i, c])) <= 1e-4


class TestL1Loss:
    def test_exact_predictions(self):
        pos = np.array([0, 1])
        t = np.array([0.2, -0.1])
        loss, d_ys, d_ye = l1_loss(t, t, t, t, pos)
        assert loss == 0.0

    def test_hand_sum(self):
        loss, _, _ = l1_loss(
            np.array([0.0]), np.array([0.0]), np.array([0.3]), np.array([-0.2]), np.array([0])
        )
        assert loss == pytest.approx(0.5, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = Rng(15)
        for trial in range(20):
            r = rng.split(trial)
            n = 6
            y_s = r.uniforms(n) - 0.5
            y_e = r.uniforms(n) - 0.5
            t_s = y_s + np.where(r.uniforms(n) < 0.5, 0.3, -0.4)
            t_e = y_e + np.where(r.uniforms(n) < 0.5, -0.25, 0.35)
            pos = np.flatnonzero(r.uniforms(n) < 0.5)
            _, d_ys, d_ye = l1_loss(y_s, y_e, t_s, t_e, pos)
            for j in range(n):
                def fs(v):
                    y = y_s.copy()
                    y[j] = v
                    return l1_loss(y, y_e, t_s, t_e, pos)[0]
                def fe(v):
                    y = y_e.copy()
                    y[j] = v
                    return l1_loss(y_s, y, t_s, t_e, pos)[0]
                assert relative_error(d_ys[j], finite_difference(fs, y_s[j])) <= 1e-4
                assert relative_error(d_ye[j], finite_difference(fe, y_e[j])) <= 1e-4


class TestKlL1Loss:
    def test_linear_branch_zero_point(self):
        # |d| = 0.5 with unit variance: (0.5 - 0.5)/1 + 0 = 0 on the linear branch
        loss, _, _ = kl_l1_loss(GaussianOffset(0.0, 0.0), 0.5, condition_mode="paper")
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_quadratic_branch_value(self):
        # d = 2, sigma = 1: 2 + log(2 pi)/2
        loss, _, _ = kl_l1_loss(GaussianOffset(0.0, 0.0), 2.0, condition_mode="paper")
        assert loss == pytest.approx(2.0 + 0.5 * math.log(2.0 * math.pi), abs=1e-12)

    def test_branch_conventions_swap(self):
        pred = GaussianOffset(0.0, 0.0)
        inner_he = kl_l1_loss(pred, 0.5, "he")[0]
        inner_paper = kl_l1_loss(pred, 0.5, "paper")[0]
        outer_he = kl_l1_loss(pred, 2.0, "he")[0]
        outer_paper = kl_l1_loss(pred, 2.0, "paper")[0]
        quad = lambda d: 0.5 * d * d + 0.5 * math.log(2.0 * math.pi)
        lin = lambda d: abs(d) - 0.5
        assert inner_he == pytest.approx(quad(0.5), abs=1e-12)
        assert inner_paper == pytest.approx(lin(0.5), abs=1e-12)
        assert outer_he == pytest.approx(lin(2.0), abs=1e-12)
        assert outer_paper == pytest.approx(quad(2.0), abs=1e-12)

    def test_mu_gradient_continuous_at_branch_point(self):
        for mode in ("he", "paper"):
            just_in = kl_l1_loss(GaussianOffset(0.0, 0.3), 1.0 - 1e-9, mode)[1]
            just_out = kl_l1_loss(GaussianOffset(0.0, 0.3), 1.0 + 1e-9, mode)[1]
            assert just_in == pytest.approx(just_out, rel=1e-6)

    def test_quadratic_branch_sigma_argmin_is_abs_d(self):
        for d in (1.5, 2.0, 3.0):
            res = minimize_scalar(
                lambda s: kl_l1_quadratic(d, s), bounds=(0.05, 10.0), method="bounded"
            )
            assert res.x == pytest.approx(d, rel=0.01)

    def test_gradients_match_finite_differences(self):
        rng = Rng(16)
        for trial in range(50):
            r = rng.split(trial)
            mu = 2.0 * r.uniform() - 1.0
            alpha = 2.0 * r.uniform() - 1.0
            t = 4.0 * r.uniform() - 2.0
            if abs(t - mu) < 1e-2 or abs(abs(t - mu) - 1.0) < 1e-2:
                continue
            for mode in ("he", "paper"):
                _, d_mu, d_alpha = kl_l1_loss(GaussianOffset(mu, alpha), t, mode)
                fd_mu = finite_difference(
                    lambda v: kl_l1_loss(GaussianOffset(v, alpha), t, mode)[0], mu
                )
                fd_alpha = finite_difference(
                    lambda v: kl_l1_loss(GaussianOffset(mu, v), t, mode)[0], alpha
                )
                assert relative_error(d_mu, fd_mu) <= 1e-4
                assert relative_error(d_alpha, fd_alpha) <= 1e-4

    def test_rejects_unknown_mode(self):
        with pytest.raises(ConfigError):
            kl_l1_loss(GaussianOffset(0.0, 0.0), 1.0, "smooth")

    def test_clamp_alpha(self):
        assert clamp_alpha(99.0) == 10.0
        assert clamp_alpha(-99.0) == -10.0
        assert clamp_alpha(0.5) == 0.5


class TestSampledL1Loss:
    def test_forced_epsilon_zero_reduces_to_abs_d(self):
        pred = GaussianOffset(0.4, 0.7)
        loss, d_mu, d_alpha, eps = sampled_l1_loss(pred, -0.3, _FixedEps(0.0))
        assert eps == 0.0
        assert loss == pytest.approx(0.7, abs=1e-12)
        assert d_alpha == 0.0

    def test_tiny_sigma_reduces_to_abs_d(self):
        pred = GaussianOffset(0.0, -10.0)
        rng = Rng(88)
        for _ in range(50):
            loss, _, _, _ = sampled_l1_loss(pred, 1.5, rng)
            assert loss == pytest.approx(1.5, abs=0.05)

    def test_epsilon_recorded_and_replayable(self):
        pred = GaussianOffset(0.1, 0.2)
        loss1, _, _, eps = sampled_l1_loss(pred, 0.9, Rng(3))
        loss2, _, _, eps2 = sampled_l1_loss(pred, 0.9, _FixedEps(eps))
        assert eps2 == eps and loss1 == loss2

    def test_mean_over_draws_matches_analytic_expectation(self):
        pred = GaussianOffset(0.0, 2.0 * math.log(0.5))  # mu=0, sigma=0.5
        rng = Rng(99)
        n = 1_000_000
        total = 0.0
        total_sq = 0.0
        for _ in range(n):
            loss, _, _, _ = sampled_l1_loss(pred, 1.0, rng)
            total += loss
            total_sq += loss * loss
        mean = total / n
        stderr = math.sqrt((total_sq / n - mean * mean) / (n - 1))
        expected = expected_l1(1.0, 0.5)[0]
        assert abs(mean - expected) < 3.0 * stderr

    def test_gradients_match_finite_differences_at_fixed_eps(self):
        rng = Rng(17)
        for trial in range(50):
            r = rng.split(trial)
            mu = 2.0 * r.uniform() - 1.0
            alpha = 2.0 * r.uniform() - 1.0
            t = 4.0 * r.uniform() - 2.0
            eps = r.normal()
            if abs((t - mu) - math.exp(0.5 * alpha) * eps) < 1e-2:
                continue
            _, d_mu, d_alpha, _ = sampled_l1_loss(GaussianOffset(mu, alpha), t, _FixedEps(eps))
            fd_mu = finite_difference(
                lambda v: sampled_l1_loss(GaussianOffset(v, alpha), t, _FixedEps(eps))[0], mu
            )
            fd_alpha = finite_difference(
                lambda v: sampled_l1_loss(GaussianOffset(mu, v), t, _FixedEps(eps))[0], alpha
            )
            assert relative_error(d_mu, fd_mu) <= 1e-4
            assert relative_error(d_alpha, fd_alpha) <= 1e-4


class TestExpectedL1:
    def test_half_normal_value(self):
        value, _, _ = expected_l1(0.0, 1.0)
        assert value == pytest.approx(math.sqrt(2.0 / math.pi), abs=1e-12)

    def test_sigma_much_smaller_than_d(self):
        value, _, _ = expected_l1(2.0, 0.5)
        mean, stderr = mc_expected_l1(2.0, 0.5, 200_000, Rng(41))
        assert abs(value - mean) < 4.0 * stderr
        assert value == pytest.approx(2.0, abs=1e-3)

    def test_partials_match_finite_differences(self):
        rng = Rng(18)
        for trial in range(60):
            r = rng.split(trial)
            d = 6.0 * r.uniform() - 3.0
            sigma = 0.1 + 2.4 * r.uniform()
            _, d_d, d_sigma = expected_l1(d, sigma)
            fd_d = finite_difference(lambda v: expected_l1(v, sigma)[0], d)
            fd_s = finite_difference(lambda v: expected_l1(d, v)[0], sigma)
            if max(abs(d_d), abs(fd_d)) > 1e-6:  # skip underflowed tails
                assert relative_error(d_d, fd_d) <= 1e-5
            if max(abs(d_sigma), abs(fd_s)) > 1e-6:
                assert relative_error(d_sigma, fd_s) <= 1e-5

    def test_domain_error(self):
        with pytest.raises(ValueError):
            expected_l1(1.0, 0.0)
        with pytest.raises(ValueError):
            expected_l1(1.0, -2.0)

    def test_dominates_abs_d_and_increasing_in_sigma(self):
        for d in (-3.0, -1.0, -0.1, 0.0, 0.1, 1.0, 3.0):
            prev = -math.inf
            for sigma in (0.1, 0.5, 1.0, 2.0):
                value, _, d_sigma = expected_l1(d, sigma)
                assert value >= abs(d)
                assert value > prev
                assert d_sigma > 0.0
                prev = value

    def test_even_in_d(self):
        for d in (0.3, 1.2, 2.7):
            for sigma in (0.2, 1.0, 3.0):
                assert expected_l1(d, sigma)[0] == pytest.approx(
                    expected_l1(-d, sigma)[0], abs=1e-14
                )

    def test_sigma_to_zero_limit(self):
        for d in (-2.0, -0.5, 0.5, 2.0):
            assert 0.0 <= expected_l1(d, 1e-6)[0] - abs(d) <= 1e-5

    def test_matches_monte_carlo_on_grid(self):
        rng = Rng(2023)
        for d in (-1.0, 0.0, 0.7):
            for sigma in (0.3, 1.0):
                mean, stderr = mc_expected_l1(d, sigma, 200_000, rng.split(repr(d), repr(sigma)))
                assert abs(expected_l1(d, sigma)[0] - mean) <= max(1e-3, 4.0 * stderr)

    def test_foil_is_detectably_wrong(self):
        mean, stderr = mc_expected_l1(1.0, 1.0, 200_000, Rng(5150))
        assert abs(_expected_l1_foil(1.0, 1.0) - mean) > 10.0 * max(1e-3, 4.0 * stderr)
        assert abs(_expected_l1_foil(0.0, 1.0) - math.sqrt(2.0 / math.pi)) > 0.3

    def test_training_form_chain_rule(self):
        pred = GaussianOffset(0.25, -0.6)
        t = 1.1
        _, d_mu, d_alpha = expected_l1_training(pred, t)
        fd_mu = finite_difference(
            lambda v: expected_l1_training(GaussianOffset(v, -0.6), t)[0], 0.25
        )
        fd_alpha = finite_difference(
            lambda v: expected_l1_training(GaussianOffset(0.25, v), t)[0], -0.6
        )
        assert relative_error(d_mu, fd_mu) <= 1e-5
        assert relative_error(d_alpha, fd_alpha) <= 1e-5


class TestLossSurfaceExport:
    def test_row_count_and_header(self, tmp_path):
        path = tmp_path / "surfaces.csv"
        d_grid = [-1.0, 0.0, 1.0]
        s_grid = [0.1, 1.0]
        rows = export_loss_surfaces(path, d_grid, s_grid)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "loss_name,d,sigma,value"
        assert rows == 3 * len(d_grid) * len(s_grid)
        assert len(lines) == 1 + rows
        names = {line.split(",")[0] for line in lines[1:]}
        assert names == {"kl_l1_he", "kl_l1_paper", "expected_l1"}
