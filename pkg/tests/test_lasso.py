import numpy as np
import pytest

from maximin.lasso import (
    cv_lasso,
    cv_select_lambda,
    default_lambda,
    default_lambda_grid,
    kkt_violation,
    lasso_fit,
    lasso_path,
)
from maximin.rng import RngStream


def proximal_gradient_oracle(X, y, lam, iters=20000, tol=1e-12):
    """Independent FISTA solver for the same weighted objective."""
    n, p = X.shape
    w = np.sqrt(np.sum(X * X, axis=0) / n)
    step = n / np.linalg.eigvalsh(X.T @ X)[-1]
    b = np.zeros(p)
    zv = b.copy()
    t = 1.0
    for _ in range(iters):
        grad = -X.T @ (y - X @ zv) / n
        u = zv - step * grad
        thr = step * lam * w
        new = np.sign(u) * np.maximum(np.abs(u) - thr, 0.0)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        zv = new + ((t - 1) / t_new) * (new - b)
        if np.abs(new - b).max() < tol:
            b = new
            break
        b, t = new, t_new
    return b


def objective(X, y, b, lam):
    n = X.shape[0]
    w = np.sqrt(np.sum(X * X, axis=0) / n)
    r = y - X @ b
    return r @ r / (2 * n) + lam * np.sum(w * np.abs(b))


def orthonormal_design(n, p, stream_id):
    g = RngStream(21, stream_id).generator()
    Q, _ = np.linalg.qr(g.standard_normal((n, p)))
    return np.sqrt(n) * Q  # X'X/n = I so all penalty weights are 1


class TestLassoFit:
    def test_soft_threshold_closed_form(self):
        lam = 0.3
        X = orthonormal_design(40, 2, 1)
        z = np.array([3 * lam, 0.4 * lam])
        y = X @ z  # X'y/n = z
        fit = lasso_fit(X, y, lam)
        assert np.abs(fit.coefficients - [2 * lam, 0.0]).max() < 1e-12

    def test_unpenalized_matches_least_squares(self):
        g = RngStream(21, 2).generator()
        X = g.standard_normal((60, 10))
        y = X @ g.standard_normal(10) + 0.3 * g.standard_normal(60)
        fit = lasso_fit(X, y, 0.0)
        ls, *_ = np.linalg.lstsq(X, y, rcond=None)
        assert np.abs(fit.coefficients - ls).max() < 1e-6

    def test_objective_matches_proximal_oracle(self):
        g = RngStream(21, 3).generator()
        X = g.standard_normal((50, 20))
        y = X @ np.r_[np.ones(3), np.zeros(17)] + 0.5 * g.standard_normal(50)
        lam = 0.1
        fit = lasso_fit(X, y, lam)
        oracle = proximal_gradient_oracle(X, y, lam)
        assert abs(objective(X, y, fit.coefficients, lam) - objective(X, y, oracle, lam)) < 1e-8

    def test_kkt_stationarity(self):
        g = RngStream(21, 4).generator()
        X = g.standard_normal((80, 30))
        y = X @ np.r_[2.0, -1.5, np.zeros(28)] + g.standard_normal(80)
        fit = lasso_fit(X, y, 0.08)
        assert kkt_violation(X, y, fit) < 1e-6

    def test_noise_sd_consistent_with_residuals(self):
        g = RngStream(21, 5).generator()
        X = g.standard_normal((50, 10))
        y = g.standard_normal(50)
        fit = lasso_fit(X, y, 0.2)
        r = y - X @ fit.coefficients
        assert abs(fit.noise_sd**2 - r @ r / 50) < 1e-12

    def test_objective_non_increasing_per_sweep(self):
        g = RngStream(21, 6).generator()
        X = g.standard_normal((60, 40))
        y = X @ np.r_[np.ones(4), np.zeros(36)] + g.standard_normal(60)
        fit = lasso_fit(X, y, 0.05)
        trace = fit.objective_trace
        assert np.all(np.diff(trace) <= 1e-12)

    def test_refuses_unpenalized_rank_deficient(self):
        g = RngStream(21, 7).generator()
        X = g.standard_normal((10, 20))
        y = g.standard_normal(10)
        with pytest.raises(ValueError):
            lasso_fit(X, y, 0.0)

    def test_l1_norm_monotone_along_path(self):
        g = RngStream(21, 8).generator()
        X = g.standard_normal((80, 25))
        y = X @ np.r_[1.0, -2.0, 0.5, np.zeros(22)] + 0.5 * g.standard_normal(80)
        grid = default_lambda_grid(X, y, n_lambda=15)
        fits = lasso_path(X, y, grid)
        norms = [np.abs(f.coefficients).sum() for f in fits]
        assert np.all(np.diff(norms) >= -1e-9)  # grows as lambda shrinks


class TestDefaultLambda:
    def test_formula(self):
        assert abs(default_lambda(100, 100, 1.0, c=0.0) - np.sqrt(2 * np.log(100) / 100)) < 1e-12
        assert abs(default_lambda(100, 100, 1.0, c=0.0) - 0.30349) < 1e-4

    def test_zero_sigma(self):
        assert default_lambda(50, 10, 0.0) == 0.0

    def test_linearity_in_sigma(self):
        assert default_lambda(64, 32, 2.0) == pytest.approx(2 * default_lambda(64, 32, 1.0))


class TestCvSelect:
    def test_single_element_grid(self):
        g = RngStream(21, 9).generator()
        X = g.standard_normal((30, 5))
        y = g.standard_normal(30)
        assert cv_select_lambda(X, y, 5, np.array([0.37])) == 0.37

    def test_noiseless_prefers_small_lambda(self):
        g = RngStream(21, 10).generator()
        X = g.standard_normal((100, 10))
        y = X @ np.r_[1.0, -1.0, np.zeros(8)]
        grid = default_lambda_grid(X, y, n_lambda=25, min_ratio=1e-3)
        lam = cv_select_lambda(X, y, 5, grid)
        assert lam <= grid[-5]  # among the smallest grid values

    def test_pure_noise_prefers_large_lambda(self):
        g = RngStream(21, 11).generator()
        X = g.standard_normal((100, 30))
        y = g.standard_normal(100)  # true coefficients all zero
        grid = default_lambda_grid(X, y, n_lambda=20)
        lam = cv_select_lambda(X, y, 5, grid)
        assert lam >= grid[len(grid) // 4]  # top quartile (grid is descending)

    def test_too_few_rows(self):
        X = np.ones((3, 2))
        with pytest.raises(ValueError):
            cv_select_lambda(X, np.ones(3), 5, np.array([0.1]))


class TestSupportRecovery:
    def test_recovers_true_support(self):
        # n=200, p=50, s=3, signal 1, noise 0.5; penalty from the closed form
        hits = 0
        for trial in range(100):
            g = RngStream(77, trial).generator()
            X = g.standard_normal((200, 50))
            b = np.zeros(50)
            b[:3] = 1.0
            y = X @ b + 0.5 * g.standard_normal(200)
            lam = default_lambda(200, 50, 0.5)
            fit = lasso_fit(X, y, lam)
            if np.all(fit.coefficients[:3] != 0):
                hits += 1
        assert hits >= 95


class TestCvLasso:
    def test_returns_full_data_refit(self):
        g = RngStream(21, 12).generator()
        X = g.standard_normal((120, 40))
        y = X @ np.r_[np.ones(3), np.zeros(37)] + 0.4 * g.standard_normal(120)
        fit = cv_lasso(X, y)
        assert kkt_violation(X, y, fit) < 1e-6
        assert fit.noise_sd > 0
