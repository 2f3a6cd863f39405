import numpy as np
import pytest

from maximin.linalg import mvn_sample, pi_index, psd_project, sym_sqrt, unvecl, vecl
from maximin.rng import RngStream


def jacobi_eigh(A, sweeps=100, tol=1e-14):
    """Independent dense symmetric eigensolver via classical Jacobi rotations."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-30:
                    continue
                off = max(off, abs(A[p, q]))
                theta = 0.5 * np.arctan2(2 * A[p, q], A[q, q] - A[p, p])
                c, s = np.cos(theta), np.sin(theta)
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                V = V @ J
        if off < tol:
            break
    return np.diag(A), V


class TestPiIndex:
    def test_examples(self):
        assert pi_index(1, 1, 3) == 1
        assert pi_index(2, 2, 3) == 4
        assert pi_index(3, 3, 3) == 6

    @pytest.mark.parametrize("L", range(1, 21))
    def test_bijection(self, L):
        values = [pi_index(l, k, L) for k in range(1, L + 1) for l in range(k, L + 1)]
        assert sorted(values) == list(range(1, L * (L + 1) // 2 + 1))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            pi_index(1, 2, 3)
        with pytest.raises(ValueError):
            pi_index(4, 1, 3)


class TestVecl:
    def test_definition(self):
        A = np.array([[1.0, 2.0], [2.0, 3.0]])
        assert np.array_equal(vecl(A), [1.0, 2.0, 3.0])

    def test_inverse(self):
        assert np.array_equal(unvecl([1.0, 2.0, 3.0], 2), [[1.0, 2.0], [2.0, 3.0]])

    def test_round_trip_exact(self):
        g = RngStream(5, 1).generator()
        M = g.standard_normal((5, 5))
        A = M + M.T
        assert np.array_equal(unvecl(vecl(A), 5), A)

    def test_ordering_matches_index_map(self):
        g = RngStream(5, 2).generator()
        M = g.standard_normal((4, 4))
        A = M + M.T
        v = vecl(A)
        for k in range(1, 5):
            for l in range(k, 5):
                assert v[pi_index(l, k, 4) - 1] == A[l - 1, k - 1]

    def test_bad_length(self):
        with pytest.raises(ValueError):
            unvecl([1.0, 2.0], 2)


class TestPsdProject:
    def test_identity_fixed_point(self):
        assert np.array_equal(psd_project(np.eye(3)), np.eye(3))

    def test_eigenvalue_clamp(self):
        out = psd_project(np.diag([1.0, -2.0]))
        assert np.allclose(out, np.diag([1.0, 0.0]), atol=1e-14)

    def test_matches_jacobi_oracle(self):
        g = RngStream(5, 3).generator()
        for _ in range(20):
            M = g.standard_normal((4, 4))
            A = M + M.T
            lam, V = jacobi_eigh(A)
            expected = (V * np.clip(lam, 0.0, None)) @ V.T
            assert np.abs(psd_project(A) - expected).max() < 1e-8

    def test_idempotent(self):
        g = RngStream(5, 4).generator()
        for _ in range(20):
            M = g.standard_normal((5, 5))
            A = M + M.T
            once = psd_project(A)
            assert np.abs(psd_project(once) - once).max() < 1e-10

    def test_result_is_psd(self):
        g = RngStream(5, 5).generator()
        for _ in range(20):
            M = g.standard_normal((6, 6))
            A = M + M.T
            out = psd_project(A)
            norm = np.linalg.norm(A)
            assert np.linalg.eigvalsh(out)[0] >= -1e-10 * max(norm, 1.0)

    def test_contraction_toward_psd_targets(self):
        # ||A_+ - G||_F <= ||A - G||_F for every PSD G and symmetric A
        g = RngStream(5, 6).generator()
        for _ in range(200):
            L = int(g.integers(2, 6))
            M = g.standard_normal((L, L))
            A = M + M.T
            R = g.standard_normal((L, L))
            G = R @ R.T
            lhs = np.linalg.norm(psd_project(A) - G)
            rhs = np.linalg.norm(A - G)
            assert lhs <= rhs + 1e-8

    def test_rejects_non_finite(self):
        A = np.eye(2)
        A[0, 1] = A[1, 0] = np.nan
        with pytest.raises(ValueError):
            psd_project(A)


class TestMvnSample:
    def test_zero_cov_returns_mean(self):
        mean = np.array([1.0, -2.0, 3.0])
        out = mvn_sample(mean, np.zeros((3, 3)), RngStream(1, 9))
        assert np.array_equal(out, mean)

    def test_identity_cov_lln(self):
        draws = mvn_sample(np.zeros(2), np.eye(2), RngStream(1, 10), size=100_000)
        emp = draws.T @ draws / draws.shape[0]
        assert np.abs(emp - np.eye(2)).max() < 0.05

    def test_correlated_cov_lln(self):
        cov = np.array([[2.0, 1.0], [1.0, 2.0]])
        draws = mvn_sample(np.zeros(2), cov, RngStream(1, 11), size=100_000)
        emp = draws.T @ draws / draws.shape[0]
        assert np.abs(emp - cov).max() < 0.05

    def test_deterministic_and_stream_independent(self):
        cov = np.array([[2.0, 1.0], [1.0, 2.0]])
        a = mvn_sample(np.zeros(2), cov, RngStream(3, 7), size=10)
        b = mvn_sample(np.zeros(2), cov, RngStream(3, 7), size=10)
        c = mvn_sample(np.zeros(2), cov, RngStream(3, 8), size=10)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mvn_sample(np.zeros(3), np.eye(2), RngStream(0, 0))

    def test_singular_cov_supported(self):
        cov = np.array([[1.0, 1.0], [1.0, 1.0]])  # rank one
        draws = mvn_sample(np.zeros(2), cov, RngStream(1, 12), size=1000)
        assert np.abs(draws[:, 0] - draws[:, 1]).max() < 1e-12


class TestSymSqrt:
    def test_square(self):
        g = RngStream(5, 13).generator()
        R = g.standard_normal((4, 4))
        A = R @ R.T
        C = sym_sqrt(A)
        assert np.abs(C @ C - A).max() < 1e-10


class TestRngStream:
    def test_child_deterministic(self):
        a = RngStream(1, 2).child(3, 4)
        b = RngStream(1, 2).child(3, 4)
        assert a == b
        assert a != RngStream(1, 2).child(4, 3)

    def test_generator_replayable(self):
        s = RngStream(42, 0)
        assert np.array_equal(s.generator().standard_normal(5), s.generator().standard_normal(5))
