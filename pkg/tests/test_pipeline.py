import json

import numpy as np
import pytest

from lrinfer.errors import LrinferWarning, ValidationError
from lrinfer.linalg import projector
from lrinfer.nuclear import NuclearConfig, build_init
from lrinfer.panel import GroupSpec, HeterogeneityWeights, Mode, ObservedPanel, compute_heterogeneity
from lrinfer.pipeline import (
    PipelineConfig,
    bias1,
    bias2,
    diversified_factors,
    estimate_sigma2,
    project,
    run_pipeline,
)
from lrinfer.weights import DiversifiedWeights

from conftest import general_panel, masked_panel, oracle_weights, random_weights
from oracles import bias2_alt, heterogeneity_loops


def _rank(M, rtol=1e-8):
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0


class TestBias1:
    def test_exact_fit_is_zero(self, rng):
        Y = rng.standard_normal((4, 5))
        panel = ObservedPanel(Y, np.ones_like(Y))
        assert not bias1(panel, compute_heterogeneity(panel), Y).any()

    def test_naive_equals_y_with_unit_x(self, rng):
        Y = rng.standard_normal((4, 5))
        panel = ObservedPanel(Y, np.ones_like(Y))
        M = rng.standard_normal((4, 5))
        np.testing.assert_allclose(M - bias1(panel, compute_heterogeneity(panel), M), Y, atol=1e-14)

    def test_zero_off_mask(self, rng):
        panel, *_ = masked_panel(rng, 8, 6)
        B1 = bias1(panel, compute_heterogeneity(panel), rng.standard_normal((8, 6)))
        assert np.all(B1[panel.X == 0] == 0)

    def test_formula_loops(self, rng):
        panel, *_ = general_panel(rng, 10, 12)
        hw = compute_heterogeneity(panel)
        M = rng.standard_normal((10, 12))
        B1 = bias1(panel, hw, M)
        p, _ = heterogeneity_loops(panel.X)
        for i in range(10):
            for t in range(12):
                x = panel.X[i, t]
                assert abs(B1[i, t] - x * (x * M[i, t] - panel.Y[i, t]) / p[i]) <= 1e-8

    def test_shape_check(self, rng):
        panel, *_ = masked_panel(rng, 4, 4)
        with pytest.raises(ValidationError):
            bias1(panel, compute_heterogeneity(panel), np.zeros((3, 4)))


class TestDiversifiedFactors:
    def test_noiseless_recovery(self, rng):
        beta, F = rng.standard_normal((10, 2)), rng.standard_normal((8, 2))
        bt, _ = diversified_factors(beta @ F.T, DiversifiedWeights(beta, F))
        np.testing.assert_allclose(bt, beta @ (F.T @ F / 8), atol=1e-12)
        np.testing.assert_allclose(projector(bt), projector(beta), atol=1e-10)

    def test_zero(self, rng):
        bt, Ft = diversified_factors(np.zeros((5, 4)), random_weights(rng, 5, 4, 2))
        assert not bt.any() and not Ft.any()

    def test_loops(self, rng):
        M = rng.standard_normal((10, 12))
        w = random_weights(rng, 10, 12, 3)
        bt, Ft = diversified_factors(M, w)
        for i in range(10):
            for k in range(3):
                assert abs(bt[i, k] - sum(M[i, t] * w.W_F[t, k] for t in range(12)) / 12) <= 1e-12
        for t in range(12):
            for k in range(3):
                assert abs(Ft[t, k] - sum(M[i, t] * w.W_beta[i, k] for i in range(10)) / 10) <= 1e-12

    def test_shape_check(self, rng):
        with pytest.raises(ValidationError):
            diversified_factors(np.zeros((5, 4)), random_weights(rng, 4, 4, 2))


class TestProject:
    def test_exact_span(self, rng):
        beta, F = rng.standard_normal((10, 2)), rng.standard_normal((8, 2))
        M = beta @ F.T
        bt, Ft = diversified_factors(M, DiversifiedWeights(beta, F))
        assert np.abs(project(M, bt, Ft) - M).max() <= 1e-9

    def test_overspecified_exact_span(self, rng):
        beta, F = rng.standard_normal((12, 2)), rng.standard_normal((9, 2))
        M = beta @ F.T
        bt, Ft = diversified_factors(M, oracle_weights(rng, beta, F, 4))
        assert np.abs(project(M, bt, Ft) - M).max() <= 1e-9

    def test_noisy_idempotent(self, rng):
        M = rng.standard_normal((15, 12))
        bt, Ft = diversified_factors(M, random_weights(rng, 15, 12, 3))
        for B in (bt, Ft):
            P = projector(B)
            assert np.abs(P @ P - P).max() <= 1e-9
        assert _rank(project(M, bt, Ft)) <= 3

    def test_both_zero_warns(self):
        with pytest.warns(LrinferWarning):
            out = project(np.ones((3, 3)), np.zeros((3, 1)), np.zeros((3, 1)))
        assert not out.any()


class TestSigma2:
    def test_exact_fit(self, rng):
        Y = rng.standard_normal((4, 5))
        assert estimate_sigma2(ObservedPanel(Y, np.ones_like(Y)), Y) == 0.0

    def test_binary_constant_residual(self, rng):
        panel, *_ = masked_panel(rng, 6, 5)
        M = panel.Y - 0.3
        # residual Y - X*M is 0.3 on observed cells and 0 elsewhere
        assert estimate_sigma2(panel, M) == pytest.approx(0.09, rel=1e-12)

    def test_general_divides_by_all_cells(self, rng):
        Y = np.ones((2, 2))
        X = np.array([[1.0, 0.5], [2.0, 1.0]])
        s2 = estimate_sigma2(ObservedPanel(Y, X), np.zeros((2, 2)))
        assert s2 == 1.0

    def test_simulated_noise_level(self, quiet):
        for seed in range(100):
            g = np.random.default_rng(seed)
            beta, F = g.standard_normal((150, 2)), g.standard_normal((150, 2))
            X = (g.random((150, 150)) < 0.8).astype(float)
            panel = ObservedPanel(X * (beta @ F.T + 1.5 * g.standard_normal((150, 150))), X, Mode.BINARY)
            hw = compute_heterogeneity(panel)
            init = build_init(panel, hw, GroupSpec.block(range(5), range(5), (150, 150)), rank=4)
            assert 1.8 <= estimate_sigma2(panel, init.M_init) <= 2.7


class TestBias2:
    def _instance(self, rng, N=8, T=8, R=3):
        panel, *_ = masked_panel(rng, N, T)
        hw = compute_heterogeneity(panel)
        w = random_weights(rng, N, T, R)
        bt, Ft = diversified_factors(rng.standard_normal((N, T)), w)
        return panel, hw, w, bt, Ft

    def test_zero_sigma(self, rng):
        _, hw, w, bt, Ft = self._instance(rng)
        assert not bias2(w, hw, bt, Ft, 0.0).any()

    def test_linear_in_sigma(self, rng):
        _, hw, w, bt, Ft = self._instance(rng)
        np.testing.assert_allclose(bias2(w, hw, bt, Ft, 2.5), 2.5 * bias2(w, hw, bt, Ft, 1.0), rtol=1e-13)

    def test_alternative_path(self, rng):
        _, hw, w, bt, Ft = self._instance(rng)
        ours = bias2(w, hw, bt, Ft, 0.7)
        alt = bias2_alt(w.W_beta, w.W_F, hw.p_hat, hw.psi_hat, bt, Ft, 0.7)
        assert np.abs(ours - alt).max() <= 1e-8

    def test_rank_deficient_warns(self, rng):
        _, hw, w, bt, Ft = self._instance(rng)
        bt = np.column_stack([bt[:, :2], bt[:, 0]])
        with pytest.warns(LrinferWarning, match="rank"):
            out = bias2(w, hw, bt, Ft, 1.0)
        assert np.all(np.isfinite(out))


class TestRunPipeline:
    @pytest.mark.parametrize("R", [2, 4])
    def test_noiseless_exact(self, rng, R):
        beta, F = rng.standard_normal((30, 2)), rng.standard_normal((30, 2))
        M = beta @ F.T
        panel = ObservedPanel(M, np.ones_like(M))
        group = GroupSpec.block(range(3), range(3), M.shape)
        cfg = PipelineConfig(NuclearConfig(lam=1e-8), force_sigma0=True)
        fit = run_pipeline(panel, oracle_weights(rng, beta, F, R), group, cfg)
        assert np.abs(fit.M_hat - M).max() <= 1e-6
        assert fit.sigma2_tilde == 0.0 and not fit.B2.any()

    def test_intermediates(self, rng, quiet):
        panel, M, beta, F = masked_panel(rng, 30, 25)
        w = oracle_weights(rng, beta, F, 4)
        fit = run_pipeline(panel, w, GroupSpec.block([0, 1], [0, 1], panel.shape))
        assert np.array_equal(fit.M_naive, fit.M_init - fit.B1)
        assert np.array_equal(fit.M_hat, fit.M_proj - fit.B2)
        assert _rank(fit.M_proj) <= 4
        assert _rank(fit.M_hat) <= 8

    def test_ablation(self, rng, quiet):
        panel, M, beta, F = masked_panel(rng, 30, 25)
        w = oracle_weights(rng, beta, F, 4)
        fit = run_pipeline(panel, w, GroupSpec.block([0], [0], panel.shape), PipelineConfig(ablate_B2=True))
        assert np.array_equal(fit.M_hat, fit.M_proj)
        assert fit.ablation_no_B2 and fit.B2.any()

    def test_recombination_invariance(self, rng, quiet):
        panel, M, beta, F = masked_panel(rng, 30, 25)
        w = oracle_weights(rng, beta, F, 4)
        group = GroupSpec.block([0, 1], [0, 1], panel.shape)
        hw = compute_heterogeneity(panel)
        init = build_init(panel, hw, group, rank=4)
        A = rng.standard_normal((4, 4)) + 3 * np.eye(4)
        B = rng.standard_normal((4, 4)) + 3 * np.eye(4)
        a = run_pipeline(panel, w, group, hw=hw, init=init)
        b = run_pipeline(panel, w.recombined(A, B), group, hw=hw, init=init)
        assert np.abs(a.M_hat - b.M_hat).max() <= 1e-8 * np.abs(a.M_hat).max()

    @pytest.mark.parametrize("c", [0.5, 3.0])
    def test_joint_scaling(self, rng, c, quiet):
        panel, M, beta, F = masked_panel(rng, 30, 25)
        w = oracle_weights(rng, beta, F, 4)
        group = GroupSpec.block([0, 1], [0, 1], panel.shape)
        a = run_pipeline(panel, w, group, PipelineConfig(NuclearConfig(lam=3.0)))
        scaled = ObservedPanel(c * panel.Y, panel.X, panel.mode)
        b = run_pipeline(scaled, w, group, PipelineConfig(NuclearConfig(lam=3.0 * c)))
        for name, power in [("M_hat", 1), ("B1", 1), ("B2", 1)]:
            x, y = getattr(a, name), getattr(b, name)
            assert np.abs(y - c**power * x).max() <= 1e-7 * c**power * np.abs(x).max()
        assert b.sigma2_tilde == pytest.approx(c**2 * a.sigma2_tilde, rel=1e-7)

    def test_weight_shape_check(self, rng):
        panel, *_ = masked_panel(rng, 10, 10)
        with pytest.raises(ValidationError):
            run_pipeline(panel, random_weights(rng, 9, 10, 2), GroupSpec.block([0], [0], (10, 10)))

    def test_save(self, rng, tmp_path, quiet):
        panel, M, beta, F = masked_panel(rng, 20, 20)
        fit = run_pipeline(panel, oracle_weights(rng, beta, F, 3), GroupSpec.block([0], [0], panel.shape))
        path = fit.save(tmp_path / "fit")
        doc = json.loads(path.read_text())
        assert doc["R"] == 3 and doc["rank_M_proj"] <= 3
        np.testing.assert_array_equal(np.load(tmp_path / "fit" / doc["matrices"]["M_hat"]), fit.M_hat)

    def test_general_mode(self, rng, quiet):
        panel, M, beta, F = general_panel(rng, 40, 40, sigma=0.3)
        fit = run_pipeline(panel, oracle_weights(rng, beta, F, 3), GroupSpec.block([0], [0], panel.shape))
        assert np.abs(fit.M_hat - M).mean() < 0.3


def test_hw_override_is_used(rng, quiet):
    panel, M, beta, F = masked_panel(rng, 20, 20)
    hw = HeterogeneityWeights(np.full(20, 0.5), np.full(20, 2.0))
    fit = run_pipeline(panel, oracle_weights(rng, beta, F, 3), GroupSpec.block([0], [0], panel.shape), hw=hw)
    assert fit.hw is hw
