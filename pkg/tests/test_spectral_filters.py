import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import PROPERTY_CASES
from gel.exceptions import InstabilityError, ParameterError
from gel.experiments import ExperimentConfig, _study3_rep
from gel.filters import (FilterSpec, GarmaSpec, apply_polynomial_filter, design_polynomial_filter,
                         detect_outliers, filter_rmse, frequency_order, garma1_run, garma_k_design,
                         garma_k_run, garma_spectral_output, garma_states, gft, highpass_response,
                         inverse_gft, max_filtered_gft, save_filter_json,
                         translated_normalized_laplacian, SpectralDecomposition)
from gel.graphs import erdos_renyi, knn_weighted, random_geometric


def sym_random(rng, n):
    M = rng.standard_normal((n, n))
    M = (M + M.T) / 2
    np.fill_diagonal(M, 0)
    return M


class TestFrequencyOrder:
    def test_empty_graph(self):
        dec = frequency_order(np.zeros((4, 4)))
        assert np.all(dec.eigenvalues == 0) and np.all(dec.distances == 0)

    def test_three_cycle(self):
        W = np.ones((3, 3)) - np.eye(3)
        dec = frequency_order(W)
        assert np.allclose(dec.eigenvalues, [2, -1, -1])
        assert np.allclose(dec.distances, [0, 3, 3])

    def test_rejects_asymmetric(self):
        with pytest.raises(ParameterError):
            frequency_order(np.array([[0, 1.0], [0, 0]]))

    def test_eigenpairs(self, rng):
        W = sym_random(rng, 25)
        dec = frequency_order(W)
        V = dec.vectors
        assert np.abs(V.T @ V - np.eye(25)).max() <= 1e-8
        assert np.abs(W @ V - V * dec.eigenvalues).max() <= 1e-8 * np.linalg.norm(W, 2)
        assert dec.distances[0] == dec.distances.min()
        assert np.all(np.diff(dec.distances) >= 0)


class TestPolynomialFilter:
    def test_constant_response(self, rng):
        dec = frequency_order(sym_random(rng, 10))
        spec = design_polynomial_filter(dec, np.ones(10), 3)
        assert spec.coeffs == pytest.approx([1, 0, 0, 0], abs=1e-10)
        assert spec.residual <= 1e-10

    def test_interpolation(self):
        W = np.ones((4, 4)) - np.eye(4)  # eigenvalues 3, -1, -1, -1
        dec = frequency_order(W)
        resp = np.where(dec.eigenvalues > 0, 2.0, -0.5)
        spec = design_polynomial_filter(dec, resp, 1)
        assert spec.residual <= 1e-8
        spec3 = design_polynomial_filter(dec, resp, 3)
        assert spec3.rank_deficient and spec3.residual <= 1e-8

    def test_matches_normal_equations(self, rng):
        dec = frequency_order(sym_random(rng, 20))
        resp = highpass_response(dec)
        spec = design_polynomial_filter(dec, resp, 5)
        V = np.vander(dec.eigenvalues, 6, increasing=True)
        h = np.linalg.solve(V.T @ V, V.T @ resp)
        assert np.allclose(spec.coeffs, h, atol=1e-8)

    def test_order_bounds(self, rng):
        dec = frequency_order(sym_random(rng, 5))
        with pytest.raises(ParameterError):
            design_polynomial_filter(dec, np.ones(5), 5)

    def test_identity_filter(self, rng):
        x = rng.standard_normal(7)
        spec = FilterSpec(np.array([1.0, 0.0, 0.0]))
        assert np.array_equal(apply_polynomial_filter(sym_random(rng, 7), spec, x), x)

    def test_dense_power_oracle(self, rng):
        W = sym_random(rng, 50) / 5
        spec = FilterSpec(rng.standard_normal(6))
        x = rng.standard_normal(50)
        dense = sum(h * np.linalg.matrix_power(W, k) @ x for k, h in enumerate(spec.coeffs))
        assert np.abs(apply_polynomial_filter(W, spec, x) - dense).max() <= 1e-10 * max(1, np.abs(dense).max())

    def test_eigenvector_action(self, rng):
        W = sym_random(rng, 12)
        dec = frequency_order(W)
        resp = rng.random(12)
        spec = design_polynomial_filter(dec, resp, 11)
        for n in range(12):
            v = dec.vectors[:, n]
            assert np.allclose(apply_polynomial_filter(W, spec, v), resp[n] * v, atol=1e-6)


class TestGft:
    def test_basis_and_parseval(self, rng):
        dec = frequency_order(sym_random(rng, 9))
        e = gft(dec, dec.vectors[:, 4])
        assert np.allclose(e, np.eye(9)[4], atol=1e-12)
        x = rng.standard_normal(9)
        assert np.linalg.norm(gft(dec, x)) == pytest.approx(np.linalg.norm(x))
        assert np.allclose(inverse_gft(dec, gft(dec, x)), x, atol=1e-10)

    def test_highpass_rule(self):
        dec = SpectralDecomposition(np.zeros(4), np.eye(4), np.array([0.0, 1, 2, 3]))
        assert list(highpass_response(dec)) == [0, 0, 1, 1]
        flat = SpectralDecomposition(np.zeros(4), np.eye(4), np.ones(4))
        assert not highpass_response(flat).any()

    def test_half_band(self, rng):
        W = knn_weighted(rng.random((150, 2)), 6, 0.05).adj
        assert highpass_response(frequency_order(W)).sum() == 75


class TestOutliers:
    def setup_graph(self, rng):
        W = knn_weighted(rng.random((40, 2)) * 1000, 6, 20.0).adj
        dec = frequency_order(W)
        return W, dec, design_polynomial_filter(dec, highpass_response(dec), 5)

    def test_constant_days_never_flagged(self, rng):
        W, dec, spec = self.setup_graph(rng)
        res = detect_outliers(np.tile(rng.standard_normal(40), (10, 1)), W, spec, dec)
        assert not res.flags.any()
        assert list(res.days) == list(range(4, 11))

    def test_needs_four_days(self, rng):
        W, dec, spec = self.setup_graph(rng)
        with pytest.raises(ParameterError):
            detect_outliers(rng.standard_normal((3, 40)), W, spec)

    def test_null_rate(self, rng):
        W, dec, spec = self.setup_graph(rng)
        days = rng.standard_normal((10000, 40))
        res = detect_outliers(days, W, spec, dec)
        assert abs(res.flags.mean() - 0.25) <= 0.02

    def test_threshold_definition(self, rng):
        W, dec, spec = self.setup_graph(rng)
        days = rng.standard_normal((8, 40))
        m = max_filtered_gft(days, W, spec, dec)
        res = detect_outliers(days, W, spec, dec)
        for i, t in enumerate(range(3, 8)):
            assert res.thresholds[i] == m[t - 3:t].max()
            assert res.flags[i] == (m[t] > m[t - 3:t].max())

    def test_csv_format(self, rng, tmp_path):
        W, dec, spec = self.setup_graph(rng)
        res = detect_outliers(rng.standard_normal((6, 40)), W, spec, dec)
        path = tmp_path / "d.csv"
        res.save(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "day,flag,max_gft,threshold"
        assert len(lines) == 4

    def test_spec_json(self, rng, tmp_path):
        _, _, spec = self.setup_graph(rng)
        save_filter_json(spec, tmp_path / "f.json")
        obj = json.loads((tmp_path / "f.json").read_text())
        assert np.allclose(obj["coeffs"], spec.coeffs)


class TestLaplacian:
    def test_empty(self):
        assert not translated_normalized_laplacian(np.zeros((3, 3))).any()

    def test_triangle(self):
        W = np.ones((3, 3)) - np.eye(3)
        L = translated_normalized_laplacian(W)
        assert np.allclose(L, -W / 2)
        assert np.allclose(np.sort(np.linalg.eigvalsh(L)), [-1, 0.5, 0.5])

    def test_negative_rejected(self):
        with pytest.raises(ParameterError):
            translated_normalized_laplacian(np.array([[0, -1.0], [-1.0, 0]]))

    def test_spectral_radius_on_geometric_graphs(self, rng):
        for _ in range(100):
            L = translated_normalized_laplacian(random_geometric(60, 0.2, rng).adj)
            assert np.abs(np.linalg.eigvalsh(L)).max() <= 1 + 1e-10


class TestGarma:
    def geo_L(self, rng, n=40):
        return translated_normalized_laplacian(random_geometric(n, 0.3, rng).adj)

    def test_zero_pole(self, rng):
        L = self.geo_L(rng)
        x = rng.standard_normal(L.shape[0])
        assert np.allclose(garma1_run(L, 0.0, 0.7, 0.2, x), 0.9 * x)

    def test_eigenvector_response(self, rng):
        L = self.geo_L(rng)
        lam, V = np.linalg.eigh(L)
        v = V[:, 3]
        z = garma1_run(L, 0.6, 1.3, 0.1, v)
        assert np.allclose(z, (1.3 / (1 - 0.6 * lam[3]) + 0.1) * v, atol=1e-8)

    def test_matches_linear_solve(self, rng):
        L = self.geo_L(rng)
        x = rng.standard_normal(L.shape[0])
        tol = 1e-10
        for phi in (-0.9, 0.5, 0.95):
            y = garma1_run(L, phi, 1.0, 0.0, x, tol=tol)
            direct = np.linalg.solve(np.eye(len(x)) - phi * L, x)
            assert np.linalg.norm(y - direct) <= 10 * tol * np.linalg.norm(direct) / (1 - abs(phi))
            assert np.linalg.norm(y - phi * L @ y - x) <= 10 * tol * np.linalg.norm(x)

    def test_instability_detected(self, rng):
        L = self.geo_L(rng)
        x = rng.standard_normal(L.shape[0])
        with pytest.raises(InstabilityError):
            garma1_run(L, 1.5, 1.0, 0.0, x)
        with pytest.raises(InstabilityError):
            garma_states(L, [1.5], [1.0], x, check_stability=False)

    def test_spec_rejects_unstable_pole(self):
        with pytest.raises(ParameterError):
            GarmaSpec([(1.0, 1.0)])

    def test_constant_design(self, rng):
        lam = np.linspace(-1, 1, 50)
        spec = garma_k_design(lam, lambda l: np.full_like(l, 0.7), 1)
        assert spec.c + spec.psis[0] / (1 - spec.phis[0] * lam) == pytest.approx(np.full(50, 0.7), abs=1e-8)
        assert spec.residual <= 1e-8

    def test_realisable_design(self, rng):
        lam = np.linspace(-1, 1, 60)
        spec = garma_k_design(lam, lambda l: 1 / (1 - 0.5 * l), 1, rng=rng)
        assert spec.phis[0] == pytest.approx(0.5, abs=1e-6)
        assert spec.psis[0] == pytest.approx(1.0, abs=1e-6)
        assert spec.c == pytest.approx(0.0, abs=1e-6)
        assert spec.residual <= 1e-6

    def test_lowpass_residual_decreases_with_order(self, rng):
        lam = frequency_order(translated_normalized_laplacian(
            random_geometric(100, 0.15 * np.sqrt(2), rng).adj)).eigenvalues
        target = (lam < 0).astype(float)
        res, prev = [], None
        for K in (1, 3, 5, 7):
            spec = garma_k_design(lam, target, K, rng=rng, init_phis=prev)
            prev = spec.phis
            res.append(spec.residual)
        assert all(b < a for a, b in zip(res, res[1:]))

    def test_order_k_run(self, rng):
        L = self.geo_L(rng)
        x = rng.standard_normal(L.shape[0])
        spec = GarmaSpec([(0.5, 1.0), (-0.3, 0.4), (0.8, -0.2)], c=0.1)
        z = garma_k_run(L, spec, x)
        I = np.eye(len(x))
        direct = spec.c * x + sum(psi * np.linalg.solve(I - phi * L, x) for phi, psi in spec.branches)
        assert np.linalg.norm(z - direct) <= 10 * 1e-10 * np.linalg.norm(direct) / 0.2
        one = GarmaSpec([(0.5, 1.0)], c=0.1)
        assert np.allclose(garma_k_run(L, one, x), garma1_run(L, 0.5, 1.0, 0.1, x))
        dec = frequency_order(L)
        assert np.allclose(garma_spectral_output(dec, spec, x), direct, atol=1e-10)

    def test_rmse(self, rng):
        assert filter_rmse(np.ones(5), np.ones(5)) == 0.0
        assert filter_rmse(np.ones(7), np.zeros(7)) == pytest.approx(1.0)
        a, b = rng.standard_normal((2, 100))
        assert filter_rmse(a, b) == pytest.approx(np.sqrt(np.mean((a - b) ** 2)), rel=1e-12)


@pytest.fixture(scope="module")
def mismatch_pairs():
    # paired sigma_e with the true graph and with W = M2(A, 0.1, 0) over 2000 reps
    cfg = ExperimentConfig.defaults("garma_filter", grid={"eps1": [0.0, 0.1], "eps2": [0.0]},
                                    params={"evaluation": "spectral"}).to_dict()
    return np.array([_study3_rep(cfg, r) for r in range(2000)])


@pytest.mark.parametrize("j,K", [
    pytest.param(0, 1, marks=pytest.mark.xfail(
        strict=True, reason="a single fixed-pole branch fits the low-pass target better on graphs "
                            "with a few edges removed; mean sigma_e drops by about 0.004")),
    (1, 3), (2, 5), (3, 7)])
def test_mismatch_never_helps_on_average(mismatch_pairs, j, K):
    d = mismatch_pairs[:, 1, j] - mismatch_pairs[:, 0, j]
    assert d.mean() >= 0


@st.composite
def garma_cases(draw):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    n = draw(st.integers(2, 12))
    W = np.where(rng.random((n, n)) < draw(st.floats(0.1, 1)), rng.random((n, n)), 0.0)
    W = np.tril(W, -1)
    W = W + W.T
    phi = draw(st.floats(-0.95, 0.95))
    return translated_normalized_laplacian(W), phi, draw(st.floats(-3, 3)), rng.standard_normal(n)


@settings(max_examples=PROPERTY_CASES)
@given(garma_cases())
def test_garma1_fixed_point_residual(case):
    L, phi, psi, x = case
    tol = 1e-10
    y = garma1_run(L, phi, psi, 0.0, x, tol=tol)
    # the stopping rule bounds the last step, which equals the fixed-point residual, by tol*|y|
    assert np.linalg.norm(y - phi * L @ y - psi * x) <= 10 * tol * np.linalg.norm(y) + 1e-300


@settings(max_examples=PROPERTY_CASES)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 12))
def test_polynomial_filter_spectral_action(seed, n):
    rng = np.random.default_rng(seed)
    W = sym_random(rng, n) / n
    dec = frequency_order(W)
    spec = FilterSpec(rng.standard_normal(rng.integers(1, 6)))
    for lam, v in zip(dec.eigenvalues, dec.vectors.T):
        assert np.linalg.norm(apply_polynomial_filter(W, spec, v) - spec.response(lam) * v) <= 1e-6
