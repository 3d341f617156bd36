import numpy as np
import pytest

from sonolab.fileformats import write_embeddings
from sonolab.metrics import (GaussianStats, fit_gaussian, frechet_distance, msd, msd_external, read_report,
                             write_report)


def denman_beavers_sqrt(a, iters=100):
    """Scaled Denman-Beavers iteration for the principal square root."""
    y, z = a.astype(float), np.eye(a.shape[0])
    for _ in range(iters):
        mu = abs(np.linalg.det(y) * np.linalg.det(z)) ** (-1.0 / (2 * a.shape[0]))
        y, z = 0.5 * (mu * y + np.linalg.inv(mu * z)), 0.5 * (mu * z + np.linalg.inv(mu * y))
    return y


def oracle_fd(m1, c1, m2, c2):
    return float(np.sum((m1 - m2) ** 2) + np.trace(c1 + c2 - 2 * denman_beavers_sqrt(c1 @ c2)).real)


def random_spd(rng, d):
    b = rng.standard_normal((d, d))
    return b @ b.T + 0.1 * np.eye(d)


class TestFrechet:
    def test_analytic_1d(self):
        g = lambda m, v: GaussianStats(np.array([m]), np.array([[v]]))  # noqa: E731
        assert abs(frechet_distance(g(0, 1), g(0, 1))) <= 1e-9
        assert abs(frechet_distance(g(0, 1), g(2, 1)) - 4.0) <= 1e-9
        assert abs(frechet_distance(g(0, 1), g(0, 4)) - 1.0) <= 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_against_denman_beavers(self, seed):
        rng = np.random.default_rng(seed)
        m1, m2 = rng.standard_normal(3), rng.standard_normal(3)
        c1, c2 = random_spd(rng, 3), random_spd(rng, 3)
        got = frechet_distance(GaussianStats(m1, c1), GaussianStats(m2, c2))
        assert got == pytest.approx(oracle_fd(m1, c1, m2, c2), abs=1e-6)

    def test_symmetry_and_translation(self, rng):
        c1, c2 = random_spd(rng, 4), random_spd(rng, 4)
        m1, m2 = np.array([1.0, 2.0, 0.0, -1.0]), np.array([0.0, 3.0, 1.0, 1.0])
        a = frechet_distance(GaussianStats(m1, c1), GaussianStats(m2, c2))
        assert a == pytest.approx(frechet_distance(GaussianStats(m2, c2), GaussianStats(m1, c1)), abs=1e-9)
        shift = np.array([4.0, -8.0, 16.0, 2.0])
        assert frechet_distance(GaussianStats(m1 + shift, c1), GaussianStats(m2 + shift, c2)) == a

    def test_self_distance_zero(self, rng):
        g = fit_gaussian(rng.standard_normal((50, 5)))
        assert abs(frechet_distance(g, g)) <= 1e-9

    def test_errors(self):
        with pytest.raises(ValueError, match="dimension"):
            frechet_distance(GaussianStats([0.0], [[1.0]]), GaussianStats([0.0, 0.0], np.eye(2)))
        with pytest.raises(ValueError):
            frechet_distance(GaussianStats([0.0, 0.0], np.diag([1.0, -1.0])), GaussianStats([0.0, 0.0], np.eye(2)))


class TestFitGaussian:
    def test_two_points(self):
        g = fit_gaussian([[0.0], [2.0]])
        assert g.mu[0] == 1.0
        assert g.cov[0, 0] == pytest.approx(2.0 * (1 + 1e-6))

    def test_identical_points(self):
        g = fit_gaussian(np.ones((5, 2)))
        np.testing.assert_array_equal(g.cov, 0.0)  # zero trace: ridge vanishes too

    def test_monte_carlo(self):
        rng = np.random.default_rng(0)
        mu = np.array([1.0, -2.0, 0.5])
        cov = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, -0.2], [0.0, -0.2, 0.5]])
        n = 100_000
        g = fit_gaussian(rng.multivariate_normal(mu, cov, n))
        se_mu = np.sqrt(np.diag(cov) / n)
        assert np.all(np.abs(g.mu - mu) <= 3 * se_mu)
        se_cov = np.sqrt((cov ** 2 + np.outer(np.diag(cov), np.diag(cov))) / n)
        assert np.all(np.abs(g.cov - cov) <= 3 * se_cov + 1e-6 * np.trace(cov))

    def test_needs_two(self):
        with pytest.raises(ValueError):
            fit_gaussian([[1.0, 2.0]])


class TestMsd:
    def test_hand_cases(self):
        assert msd([0.0, 2.0]) == 4.0
        assert msd([0.0, 1.0, 2.0]) == 2.0
        assert msd(np.ones((4, 3))) == 0.0

    def test_trace_identity(self, rng):
        x = rng.standard_normal((37, 6)) * rng.random(6) * 5
        n = x.shape[0]
        biased = np.trace(np.cov(x.T, bias=True))
        assert abs(msd(x) - 2 * n / (n - 1) * biased) <= 1e-10 * msd(x)

    def test_invariances(self, rng):
        x = rng.standard_normal((20, 3))
        assert msd(x[rng.permutation(20)]) == pytest.approx(msd(x), rel=1e-13)
        assert msd(x + 100.0) == pytest.approx(msd(x), rel=1e-10)
        with pytest.raises(ValueError):
            msd([[1.0]])

    def test_external(self, tmp_path, rng):
        write_embeddings(tmp_path / "a.emb", [[0.0, 0.0], [1.0, 1.0]])
        assert msd_external(tmp_path / "a.emb") == 2.0
        write_embeddings(tmp_path / "b.emb", [[3.0, 1.0], [3.0, 1.0]])
        assert msd_external(tmp_path / "b.emb") == 0.0
        x = rng.standard_normal((9, 4))
        write_embeddings(tmp_path / "c.emb", x)
        assert msd_external(tmp_path / "c.emb") == msd(x)


def test_report_round_trip(tmp_path):
    rows = [("fad:diffusion:average", "rain", 1.0 / 3.0), ("msd_f:ar:prototype", "average", 12.5)]
    write_report(tmp_path / "r.csv", rows)
    assert read_report(tmp_path / "r.csv") == rows
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "metric,scope,value"
