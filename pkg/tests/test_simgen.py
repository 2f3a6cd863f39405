import dataclasses

import numpy as np
import pytest

from maximin.gamma import GammaTuning, MultiSourceData, gamma_hat_noshift
from maximin.linalg import vecl
from maximin.rng import RngStream
from maximin.simgen import (
    available_settings,
    build_setting,
    compute_truth,
    empirical_quantile_rank,
    generate_replicate,
    load_setting,
    oracle_normality_ci,
    population_gamma_estimate,
    resample_ci,
    save_setting,
    spec_from_dict,
    spec_to_dict,
)


class TestCatalog:
    def test_known_ids(self):
        ids = available_settings()
        assert "1" in ids and "I-10" in ids and len(ids) == 22

    def test_unknown_id(self):
        with pytest.raises(KeyError):
            build_setting("99")

    @pytest.mark.parametrize("p", [30, 100, 200, 500])
    def test_all_settings_positive_definite(self, p):
        for sid in available_settings():
            spec = build_setting(sid, n=100, p=p, N_Q=100)
            assert np.linalg.eigvalsh(spec.Sigma)[0] > 1e-8
            assert np.linalg.eigvalsh(spec.Sigma_Q)[0] > 1e-8

    def test_setting1_default_coefficients(self):
        spec = build_setting("1")
        b1, b2 = spec.B[:, 0], spec.B[:, 1]
        assert np.allclose(b1[:10], np.arange(1, 11) / 40)
        assert b1[21] == b1[22] == 1.0
        assert b1[498] == b1[499] == 0.1
        assert b2[499] == 0.3
        assert np.array_equal(b1[:499], b2[:499])
        x = np.zeros(500)
        x[499] = 1.0
        assert np.array_equal(spec.x_new, x)
        assert not spec.covariate_shift

    def test_setting1_tail_remap(self):
        spec = build_setting("1", p=100)
        assert spec.B[98, 0] == spec.B[99, 0] == 0.1
        assert spec.B[99, 1] == 0.3
        assert spec.x_new[99] == 1.0

    def test_setting_i10(self):
        spec = build_setting("I-10")
        assert spec.L == 2
        assert np.allclose(spec.B[:10, 0], np.arange(1, 11) / 20)
        assert np.allclose(spec.B[:10, 1], -np.arange(1, 11) / 20)
        assert np.allclose(spec.x_new[:5], np.arange(1, 6) / 5)
        assert np.array_equal(spec.Sigma, np.eye(500))

    def test_ar_covariance_values(self):
        spec = build_setting("1", p=30)
        expected = np.array([[1.0, 0.6, 0.36], [0.6, 1.0, 0.6], [0.36, 0.6, 1.0]])
        assert np.allclose(spec.Sigma[:3, :3], expected)

    def test_setting2_shift_block(self):
        spec = build_setting("2")
        assert spec.covariate_shift
        assert spec.Sigma_Q[0, 0] == 1.5
        assert spec.Sigma_Q[0, 1] == 0.9
        assert spec.Sigma_Q[498, 499] == 0.9
        assert spec.Sigma_Q[10, 11] == spec.Sigma[10, 11]

    def test_i_settings_deterministic(self):
        a = build_setting("I-1")
        b = build_setting("I-1")
        assert np.array_equal(a.B, b.B)
        assert not np.array_equal(a.B, build_setting("I-2").B)


class TestTruth:
    def test_i10_symmetry_gives_zero(self):
        spec = build_setting("I-10", p=50)
        weight, beta, truth = compute_truth(spec, 0.0)
        assert np.abs(weight.weights - 0.5).max() < 1e-9
        assert np.abs(beta).max() < 1e-12
        assert abs(truth) < 1e-12

    def test_large_delta_uniform_weights(self):
        spec = build_setting("1", p=50)
        weight, _, _ = compute_truth(spec, 1e9)
        assert np.abs(weight.weights - 0.5).max() < 1e-6

    def test_setting1_truth_matches_grid_oracle(self):
        spec = build_setting("1", p=100)
        G = spec.B.T @ spec.Sigma_Q @ spec.B
        weight, _, truth = compute_truth(spec, 0.0)
        grid = np.linspace(0.0, 1.0, 10_001)
        objs = (
            grid**2 * G[0, 0]
            + 2 * grid * (1 - grid) * G[0, 1]
            + (1 - grid) ** 2 * G[1, 1]
        )
        assert weight.objective <= objs.min() + 1e-4
        g1 = grid[int(np.argmin(objs))]
        x_fun = spec.x_new @ (spec.B @ np.array([g1, 1 - g1]))
        assert truth == pytest.approx(float(x_fun), abs=1e-4)

    def test_pure_and_reproducible(self):
        spec = build_setting("3a", p=60)
        a = compute_truth(spec, 0.5)
        b = compute_truth(spec, 0.5)
        assert a[2] == b[2]
        assert np.array_equal(a[0].weights, b[0].weights)


class TestGenerateReplicate:
    def test_noiseless_exact(self):
        spec = build_setting("1", n=40, p=50, N_Q=0)
        spec = dataclasses.replace(spec, noise_sd=np.zeros(spec.L))
        data = generate_replicate(spec, RngStream(3, 0))
        for (X, y), l in zip(data.groups, range(spec.L)):
            assert np.abs(y - X @ spec.B[:, l]).max() < 1e-12

    def test_source_covariance_lln(self):
        spec = build_setting("1", n=10_000, p=30, N_Q=0)
        data = generate_replicate(spec, RngStream(3, 1))
        X = data.groups[0][0]
        emp = X.T @ X / X.shape[0]
        assert np.abs(emp - spec.Sigma).max() < 0.05

    def test_bitwise_determinism(self):
        spec = build_setting("2", n=50, p=40, N_Q=60)
        a = generate_replicate(spec, RngStream(3, 2))
        b = generate_replicate(spec, RngStream(3, 2))
        assert np.array_equal(a.groups[0][0], b.groups[0][0])
        assert np.array_equal(a.groups[1][1], b.groups[1][1])
        assert np.array_equal(a.target_X, b.target_X)

    def test_target_drawn_from_shifted_covariance(self):
        spec = build_setting("2", n=50, p=30, N_Q=20_000)
        data = generate_replicate(spec, RngStream(3, 3))
        emp = data.target_X.T @ data.target_X / spec.N_Q
        assert abs(emp[0, 0] - 1.5) < 0.08
        assert abs(emp[0, 1] - 0.9) < 0.05


class TestPopulationEstimate:
    def test_matches_oracle_estimator_covariance(self):
        # population V should describe the oracle-coefficient estimator
        spec = build_setting("1", n=200, p=30, N_Q=400)
        est_pop = population_gamma_estimate(spec, n=200)
        reps = 300
        vecs = []
        for rep in range(reps):
            data = generate_replicate(spec, RngStream(4, rep))
            est = gamma_hat_noshift(data, GammaTuning(coef_override=spec.B))
            vecs.append(vecl(est.gamma_hat))
        vecs = np.array(vecs)
        emp = np.cov(vecs.T)
        ratio = np.diag(emp) / np.diag(est_pop.v_hat)
        assert np.all(ratio > 0.75) and np.all(ratio < 1.35)

    def test_gamma_is_population_matrix(self):
        spec = build_setting("4b", p=120)
        est = population_gamma_estimate(spec)
        assert np.allclose(est.gamma_hat, spec.B.T @ spec.Sigma_Q @ spec.B)


class TestNormalityBaseline:
    def test_constant_estimates_zero_width(self):
        ivs = oracle_normality_ci(np.full(10, 3.0))
        assert all(lo == hi == 3.0 for lo, hi in ivs)

    def test_gaussian_coverage(self):
        g = RngStream(5, 0).generator()
        mu = 2.0
        points = mu + g.standard_normal(500)
        ivs = oracle_normality_ci(points, alpha=0.05)
        cov = np.mean([lo <= mu <= hi for lo, hi in ivs])
        assert 0.92 <= cov <= 0.98

    def test_se_is_sample_sd(self):
        g = RngStream(5, 1).generator()
        points = g.standard_normal(50)
        ivs = oracle_normality_ci(points, alpha=0.05)
        from scipy import stats

        z = stats.norm.isf(0.025)
        width = ivs[0][1] - ivs[0][0]
        assert width == pytest.approx(2 * z * np.std(points, ddof=1), abs=1e-12)


class TestResampleCI:
    def test_quantile_ranks(self):
        assert empirical_quantile_rank(500, 0.025) == 13
        assert empirical_quantile_rank(500, 0.975) == 488
        assert empirical_quantile_rank(10, 0.0) == 1

    def test_degenerate_data_gives_point_interval(self):
        # single noiseless group: every resample reproduces the estimate
        g = RngStream(5, 2).generator()
        X = g.standard_normal((60, 5))
        b = np.array([1.0, -1.0, 0.5, 0.0, 2.0])
        data = MultiSourceData(groups=[(X, X @ b)])
        x_new = np.ones(5)
        lo, hi = resample_ci(data, 30, 100, True, 0.05, RngStream(5, 3), x_new)
        assert hi - lo < 1e-8
        assert lo == pytest.approx(float(x_new @ b), abs=1e-6)

    def test_interval_orientation(self):
        g = RngStream(5, 4).generator()
        X1 = g.standard_normal((80, 4))
        X2 = g.standard_normal((80, 4))
        b1 = np.array([1.0, 0.5, 0.0, 0.0])
        b2 = np.array([0.8, 0.7, 0.1, 0.0])
        data = MultiSourceData(groups=[
            (X1, X1 @ b1 + 0.5 * g.standard_normal(80)),
            (X2, X2 @ b2 + 0.5 * g.standard_normal(80)),
        ])
        lo, hi = resample_ci(data, 40, 200, False, 0.05, RngStream(5, 5), np.ones(4))
        assert lo < hi

    def test_m_validation(self):
        g = RngStream(5, 6).generator()
        X = g.standard_normal((20, 3))
        data = MultiSourceData(groups=[(X, g.standard_normal(20))])
        with pytest.raises(ValueError):
            resample_ci(data, 1, 10, True, 0.05, RngStream(5, 7), np.ones(3))

    def test_bootstrap_undercovers_on_nonregular_instance(self):
        # I-1 style boundary instance: the m-out-of-n bootstrap interval
        # misses the truth far more often than the sampling-union interval
        import warnings

        from maximin.densenet import densenet_ci
        from maximin.gamma import GammaTuning, gamma_hat_noshift
        from maximin.harness import _group_functionals

        spec = build_setting("I-1", n=1000, p=30, N_Q=0)
        truth = compute_truth(spec, 0.0)[2]
        reps = 80
        boot_hits = 0
        prop_hits = 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for rep in range(reps):
                rng = RngStream(6, rep)
                data = generate_replicate(spec, rng.child(0))
                lo, hi = resample_ci(
                    data, spec.n // 2, 200, True, 0.05, rng.child(1), spec.x_new
                )
                boot_hits += lo <= truth <= hi
                est = gamma_hat_noshift(data, GammaTuning(lowdim=True))
                fns = _group_functionals(data, est, spec.x_new, True)
                ci = densenet_ci(est, fns, delta=0.0, M=300, rng=rng.child(2))
                prop_hits += any(a <= truth <= b for a, b in ci.union_components)
        assert boot_hits / reps < prop_hits / reps
        assert prop_hits / reps >= 0.9


class TestSerialization:
    def test_round_trip(self, tmp_path):
        spec = build_setting("6a", n=70, p=40, N_Q=30)
        path = tmp_path / "setting.json"
        save_setting(spec, str(path))
        loaded = load_setting(str(path))
        assert loaded.id == spec.id
        assert np.array_equal(loaded.B, spec.B)
        assert np.array_equal(loaded.Sigma_Q, spec.Sigma_Q)
        assert loaded.covariate_shift == spec.covariate_shift

    def test_dict_round_trip(self):
        spec = build_setting("I-7", p=30)
        again = spec_from_dict(spec_to_dict(spec))
        assert np.array_equal(again.x_new, spec.x_new)
