import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icx.errors import ParameterError, RankDeficiencyError
from icx.pca import PcaModel, explained_variance_report, fit_pca, whiten
from icx.synthetic import SourceSpec, plant_dataset


def model_with(eigenvalues):
    lam = np.asarray(eigenvalues, dtype=float)
    return PcaModel(mean=np.zeros(lam.size), components=np.eye(lam.size), eigenvalues=lam)


class TestFit:
    def test_orthonormal_sorted_and_total_variance(self, rng):
        X = rng.standard_normal((500, 6)) @ rng.standard_normal((6, 6))
        m = fit_pca(X)
        np.testing.assert_allclose(m.components.T @ m.components, np.eye(6), atol=1e-8)
        assert np.all(np.diff(m.eigenvalues) <= 0)
        total = ((X - X.mean(0)) ** 2).sum() / (len(X) - 1)
        assert m.eigenvalues.sum() == pytest.approx(total, rel=1e-6)

    def test_eigenvalues_match_brute_covariance(self, rng):
        X = rng.standard_normal((300, 4)) * [3, 2, 1, 0.5]
        # oracle: covariance by explicit double loop over columns
        N = len(X)
        mu = X.sum(axis=0) / N
        C = np.array([[sum((X[k, i] - mu[i]) * (X[k, j] - mu[j]) for k in range(N)) / (N - 1)
                       for j in range(4)] for i in range(4)])
        np.testing.assert_allclose(fit_pca(X).eigenvalues, np.sort(np.linalg.eigvalsh(C))[::-1], rtol=1e-10)

    def test_collinear(self):
        t = np.linspace(-1, 1, 50)
        X = np.column_stack([t, 2 * t, -t]) + [1, 2, 3]
        frac = fit_pca(X).explained_fraction()
        assert frac[0] == 1.0

    def test_isotropic(self):
        X = np.random.default_rng(7).standard_normal((100_000, 5))
        lam = fit_pca(X).eigenvalues
        assert lam[0] / lam[-1] < 1.05

    def test_sign_convention(self, rng):
        m = fit_pca(rng.standard_normal((200, 5)))
        idx = np.argmax(np.abs(m.components), axis=0)
        assert np.all(m.components[idx, np.arange(5)] > 0)

    def test_zero_variance(self):
        m = fit_pca(np.ones((10, 3)))
        assert not m.eigenvalues.any()
        assert explained_variance_report(m, [0.5]) == [(0.5, 0)]

    def test_too_few_rows(self):
        with pytest.raises(ParameterError):
            fit_pca(np.ones((1, 3)))

    def test_row_permutation_invariance(self, rng):
        X = rng.standard_normal((100, 4)) @ rng.standard_normal((4, 4))
        a, b = fit_pca(X), fit_pca(X[rng.permutation(100)])
        np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-10)
        np.testing.assert_allclose(a.components, b.components, atol=1e-8)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_rotation_invariant_spectrum(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((80, 5)) * [5, 3, 2, 1, 0.5]
        Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        np.testing.assert_allclose(fit_pca(X @ Q).eigenvalues, fit_pca(X).eigenvalues,
                                   rtol=1e-8, atol=1e-8)


class TestReport:
    def test_single_eigenvalue(self):
        assert explained_variance_report(model_with([4, 0, 0]), [0.99]) == [(0.99, 1)]

    def test_cumulative_arithmetic(self):
        # cumulative fractions 0.5, 0.75, 1.0
        m = model_with([2, 1, 1])
        assert explained_variance_report(m, [0.5, 0.76, 0.75]) == [(0.5, 1), (0.76, 3), (0.75, 2)]

    def test_threshold_one_is_numerical_rank(self, rng):
        X = rng.standard_normal((200, 3)) @ rng.standard_normal((3, 9))
        assert explained_variance_report(fit_pca(X), [1.0]) == [(1.0, 3)]

    def test_bad_threshold(self):
        for t in (0.0, 1.5, -0.1):
            with pytest.raises(ParameterError):
                explained_variance_report(model_with([1, 1]), [t])

    @settings(max_examples=50, deadline=None)
    @given(lam=st.lists(st.floats(0, 100), min_size=1, max_size=8),
           ts=st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6))
    def test_monotone(self, lam, ts):
        m = model_with(sorted(lam, reverse=True))
        ts = sorted(ts)
        ks = [k for _, k in explained_variance_report(m, ts)]
        assert ks == sorted(ks)

    def test_planted_rank10(self):
        ds = plant_dataset(SourceSpec(10, ("laplace", "uniform") * 5, seed=3), 5000, 64, 0.0, 3, seed=3)
        signal_power = (ds.features.data ** 2).mean()
        noisy = ds.features.data + np.sqrt(signal_power / 100) * np.random.default_rng(0).standard_normal((5000, 64))
        assert explained_variance_report(fit_pca(noisy), [0.99]) == [(0.99, 10)]


class TestWhiten:
    def test_identity_covariance(self, rng):
        X = rng.standard_normal((1000, 5)) @ rng.standard_normal((5, 5)) + 3
        m = fit_pca(X)
        Z = whiten(X, m, 4)
        np.testing.assert_allclose(np.cov(Z.T), np.eye(4), atol=1e-6)

    def test_rank_error_names_kmax(self, rng):
        X = rng.standard_normal((100, 2)) @ rng.standard_normal((2, 6))
        with pytest.raises(RankDeficiencyError) as exc:
            whiten(X, fit_pca(X), 3)
        assert exc.value.k_max == 2
        assert "at most 2" in str(exc.value)

    def test_lossless_projection(self):
        ds = plant_dataset(SourceSpec(3, ("laplace", "laplace", "uniform"), seed=2), 2000, 12, 0.0, 3, seed=2)
        X = ds.features.data
        m = fit_pca(X)
        Z = whiten(X, m, 3)
        # reconstruct from the whitened coordinates
        recon = Z * np.sqrt(m.eigenvalues[:3]) @ m.components[:, :3].T + m.mean
        assert np.abs(recon - X).max() <= 1e-6
