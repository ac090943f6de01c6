import math

import numpy as np
import pytest
from conftest import random_probes
from scipy import stats

from seqcurve.asymptotics import (
    CovProbe,
    KernelModel,
    NumericalError,
    StudyShape,
    _finalize,
    kernel_density_plugin,
    kiefer_cov,
    npv_fpf_cov,
    npv_pct_cov,
    npv_pct_var,
    percentile_point,
    ppv_fpf_cov,
    ppv_fpf_delta,
    ppv_fpf_process_cov,
    ppv_npv_cross_cov,
    ppv_pct_cov,
    ppv_pct_process_cov,
    ppv_pct_var,
    ppv_pct_var_kiefer,
    roc_estimator_cov,
    roc_process_cov,
    silverman_bandwidth,
)
from seqcurve.curves import BinormalModel, MarkerModel, roc_true
from seqcurve.empirical import DomainError, MarkerSample, SequentialView

TABLE1_THEORY = np.array(
    [
        [0.104, 0.129, 0.081, 0.104],
        [0.129, 0.322, 0.104, 0.260],
        [0.081, 0.104, 0.171, 0.225],
        [0.104, 0.260, 0.225, 0.563],
    ]
)


@pytest.fixture(scope="module")
def shape():
    return StudyShape(400, 500)


class TestKiefer:
    def test_bridge_variance(self):
        assert kiefer_cov(0.5, 1, 0.5, 1) == 0.25

    def test_pinned_at_zero(self):
        assert kiefer_cov(0.0, 0.7, 0.3, 0.9) == 0.0

    def test_direct_formula(self):
        assert kiefer_cov(0.3, 0.4, 0.6, 0.9) == pytest.approx(0.048, abs=1e-15)

    def test_symmetric(self):
        assert kiefer_cov(0.2, 0.5, 0.7, 0.3) == kiefer_cov(0.7, 0.3, 0.2, 0.5)

    def test_domain(self):
        with pytest.raises(DomainError):
            kiefer_cov(1.2, 1, 0.5, 1)
        with pytest.raises(DomainError):
            kiefer_cov(0.2, -1, 0.5, 1)


class TestRocCovariance:
    def test_closed_form_table(self, binormal, table_probes):
        m = roc_process_cov(binormal, table_probes, 1.0)
        np.testing.assert_allclose(m, TABLE1_THEORY, atol=1e-3)

    def test_estimator_scale_example(self, binormal):
        m = roc_estimator_cov(binormal, [CovProbe(0.4)], StudyShape(200, 200))
        full = roc_process_cov(binormal, [CovProbe(0.4)], 1.0)[0, 0]
        assert m[0, 0] == pytest.approx(full / 200, rel=1e-14)
        assert m[0, 0] == pytest.approx(0.322 / 200, abs=5e-6)

    def test_process_to_estimator_rescaling(self, binormal):
        # fractions chosen so that n r is an integer in both arms
        shape = StudyShape(200, 250)
        probes = [CovProbe(0.3, 0.5, 0.4), CovProbe(0.6, 0.75, 1.0), CovProbe(0.3, 1.0, 0.8)]
        proc = roc_process_cov(binormal, probes, shape.lam)
        est = roc_estimator_cov(binormal, probes, shape)
        r = np.array([p.r_D for p in probes])
        np.testing.assert_allclose(est, proc / (shape.n_D * np.outer(r, r)), rtol=1e-10)

    def test_fixed_sample_reduction(self, binormal):
        shape = StudyShape(150, 300)
        for t in (0.1, 0.5, 0.8):
            roc = roc_true(binormal, t)
            q = binormal.density_ratio(t)
            expected = roc * (1 - roc) / 150 + q * q * t * (1 - t) / 300
            got = roc_estimator_cov(binormal, [CovProbe(t)], shape)[0, 0]
            assert got == pytest.approx(expected, rel=1e-13)

    def test_window_enforced(self, binormal):
        with pytest.raises(DomainError):
            roc_process_cov(binormal, [CovProbe(0.99)], 1.0)
        with pytest.raises(DomainError):
            roc_process_cov(binormal, [CovProbe(0.5, 0.05, 1.0)], 1.0)

    def test_zero_density_is_numeric_failure(self):
        class Gapped(MarkerModel):
            def cdf_D(self, x):
                return float(stats.norm.cdf(x, 1))

            def cdf_Dbar(self, x):
                return float(stats.uniform.cdf(x, -1, 2))

            def pdf_D(self, x):
                return float(stats.norm.pdf(x, 1))

            def pdf_Dbar(self, x):
                return 0.0

        with pytest.raises(NumericalError):
            roc_process_cov(Gapped(), [CovProbe(0.5)], 1.0)

    def test_psd_violation_surfaces(self):
        with pytest.raises(NumericalError):
            _finalize(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_symmetric_psd(self, binormal, rng):
        probes = random_probes(rng, 30)
        for m in (
            roc_process_cov(binormal, probes, 0.7),
            ppv_fpf_cov(binormal, 0.2, probes, StudyShape(300, 200)),
            ppv_pct_cov(binormal, 0.2, probes, StudyShape(300, 200)),
        ):
            assert np.array_equal(m, m.T)
            assert np.linalg.eigvalsh(m).min() >= -1e-9


def _later_pairs(rng, n):
    """Probe pairs sharing an index, with the first view componentwise earlier."""
    out = []
    for _ in range(n):
        idx = float(rng.uniform(0.1, 0.9))
        a = np.sort(rng.uniform(0.2, 1.0, 2))
        b = np.sort(rng.uniform(0.2, 1.0, 2))
        out.append((CovProbe(idx, a[0], b[0]), CovProbe(idx, a[1], b[1])))
    return out


@pytest.fixture(scope="module")
def pairs():
    return _later_pairs(np.random.default_rng(11), 100)


class TestIndependentIncrements:
    """Cov(early, late) equals Var(late) for every estimator-scale formula."""

    @pytest.mark.parametrize(
        "formula",
        [
            lambda m, p, s: roc_estimator_cov(m, p, s),
            lambda m, p, s: ppv_fpf_cov(m, 0.2, p, s),
            lambda m, p, s: npv_fpf_cov(m, 0.2, p, s),
            lambda m, p, s: ppv_pct_cov(m, 0.2, p, s),
            lambda m, p, s: npv_pct_cov(m, 0.2, p, s),
        ],
        ids=["roc", "ppv_fpf", "npv_fpf", "ppv_pct", "npv_pct"],
    )
    def test_formula(self, binormal, shape, pairs, formula):
        for early, late in pairs:
            m = formula(binormal, [early, late], shape)
            assert m[0, 1] == pytest.approx(m[1, 1], rel=1e-13)

    def test_percentile_variances(self, binormal, shape, pairs):
        for early, late in pairs:
            u = early.index
            c = ppv_pct_cov(binormal, 0.2, [early, late], shape)[0, 1]
            v = ppv_pct_var(binormal, 0.2, u, late.r_D, late.r_Dbar, shape)
            assert c == pytest.approx(v, rel=1e-12)
            cn = npv_pct_cov(binormal, 0.2, [early, late], shape)[0, 1]
            vn = npv_pct_var(binormal, 0.2, u, late.r_D, late.r_Dbar, shape)
            assert cn == pytest.approx(vn, rel=1e-12)

    def test_cross_covariance(self, binormal, shape, pairs):
        for early, late in pairs:
            u = early.index
            ve = SequentialView(early.r_D, early.r_Dbar)
            vl = SequentialView(late.r_D, late.r_Dbar)
            c = ppv_npv_cross_cov(binormal, 0.2, u, u, (ve, vl), shape)
            v = ppv_npv_cross_cov(binormal, 0.2, u, u, (vl, vl), shape)
            assert c == pytest.approx(v, rel=1e-12)


class TestPpvByFpf:
    def test_delta_factor(self):
        # d/dR [R rho / (R rho + t (1 - rho))] by central differences
        R, t, rho = 0.6, 0.3, 0.2
        f = lambda r: r * rho / (r * rho + t * (1 - rho))
        h = 1e-6
        assert ppv_fpf_delta(R, t, rho) == pytest.approx((f(R + h) - f(R - h)) / (2 * h), rel=1e-8)

    def test_delta_no_information(self):
        # ROC(t) = t: t (1 - rho) rho / t^2 = (1 - rho) rho / t
        assert ppv_fpf_delta(0.5, 0.5, 0.2) == pytest.approx(0.16 / 0.5, rel=1e-15)

    def test_single_point_reduction(self, binormal):
        shape = StudyShape(300, 300)
        for t in (0.2, 0.6):
            d = ppv_fpf_delta(roc_true(binormal, t), t, 0.2)
            v = roc_estimator_cov(binormal, [CovProbe(t)], shape)[0, 0]
            assert ppv_fpf_cov(binormal, 0.2, [CovProbe(t)], shape)[0, 0] == pytest.approx(d * d * v, rel=1e-14)

    def test_process_entrywise(self, binormal, table_probes):
        d = np.array([ppv_fpf_delta(roc_true(binormal, p.index), p.index, 0.2) for p in table_probes])
        np.testing.assert_allclose(
            ppv_fpf_process_cov(binormal, 0.2, table_probes, 1.0),
            np.outer(d, d) * roc_process_cov(binormal, table_probes, 1.0),
            rtol=1e-13,
        )


class TestPpvByPercentile:
    @pytest.mark.parametrize("u", [0.1, 0.3, 0.6, 0.9, 0.94])
    def test_dual_form(self, binormal, shape, u):
        for r_D, r_Dbar in ((1.0, 1.0), (0.4, 0.7), (0.25, 0.9)):
            a = ppv_pct_var(binormal, 0.2, u, r_D, r_Dbar, shape)
            b = ppv_pct_var_kiefer(binormal, 0.2, u, r_D, r_Dbar, shape)
            assert a == pytest.approx(b, abs=1e-10, rel=1e-10)

    def test_dual_form_other_models(self, shape):
        for model in (BinormalModel(2.4, 0.5), BinormalModel(0.3, 1.8)):
            for u in (0.15, 0.5, 0.85):
                a = ppv_pct_var(model, 0.35, u, 0.5, 0.6, shape)
                b = ppv_pct_var_kiefer(model, 0.35, u, 0.5, 0.6, shape)
                assert a == pytest.approx(b, abs=1e-10, rel=1e-10)

    def test_diagonal_matches_variance(self, binormal, shape):
        probes = [CovProbe(0.6, 0.5, 0.5), CovProbe(0.9, 1, 1), CovProbe(0.3, 0.2, 0.8)]
        m = ppv_pct_cov(binormal, 0.2, probes, shape)
        for i, p in enumerate(probes):
            assert m[i, i] == pytest.approx(ppv_pct_var(binormal, 0.2, p.index, p.r_D, p.r_Dbar, shape), rel=1e-12)

    def test_branch_symmetry(self, binormal, shape):
        a, b = CovProbe(0.3, 0.5, 0.6), CovProbe(0.8, 0.9, 0.4)
        m1 = ppv_pct_cov(binormal, 0.2, [a, b], shape)
        m2 = ppv_pct_cov(binormal, 0.2, [b, a], shape)
        assert m1[0, 1] == pytest.approx(m2[0, 1], rel=1e-14)

    def test_process_scale_matches_estimator_scale(self, binormal):
        shape = StudyShape(200, 250)
        probes = [CovProbe(0.3, 0.5, 0.4), CovProbe(0.7, 1.0, 0.8), CovProbe(0.5, 0.75, 1.0)]
        proc = ppv_pct_process_cov(binormal, 0.2, probes, shape.lam)
        est = ppv_pct_cov(binormal, 0.2, probes, shape)
        r = np.array([p.r_D for p in probes])
        np.testing.assert_allclose(est, proc / (shape.n_D * np.outer(r, r)), rtol=1e-10)

    def test_npv_is_scaled_ppv(self, binormal, shape):
        for u in (0.3, 0.6, 0.9):
            v_ppv = ppv_pct_var(binormal, 0.2, u, 0.5, 0.7, shape)
            v_npv = npv_pct_var(binormal, 0.2, u, 0.5, 0.7, shape)
            assert v_npv == pytest.approx(((1 - u) / u) ** 2 * v_ppv, rel=1e-12)

    def test_cross_covariance_linear_map(self, binormal, shape):
        for u in (0.3, 0.6, 0.9):
            v = SequentialView(0.6, 0.8)
            c = ppv_npv_cross_cov(binormal, 0.2, u, u, (v, v), shape)
            var = ppv_pct_var(binormal, 0.2, u, 0.6, 0.8, shape)
            assert c == pytest.approx((1 - u) / u * var, rel=1e-12)

    def test_cross_covariance_branches_agree_with_matrix(self, binormal, shape):
        # Cov[PPV(u1), NPV(u2)] = ((1 - u2) / u2) Cov[PPV(u1), PPV(u2)]
        for u1, u2 in ((0.9, 0.6), (0.3, 0.7)):
            v1, v2 = SequentialView(0.5, 0.9), SequentialView(0.8, 0.6)
            c = ppv_npv_cross_cov(binormal, 0.2, u1, u2, (v1, v2), shape)
            m = ppv_pct_cov(binormal, 0.2, [CovProbe(u1, 0.5, 0.9), CovProbe(u2, 0.8, 0.6)], shape)
            assert c == pytest.approx((1 - u2) / u2 * m[0, 1], rel=1e-12)

    def test_hypothesised_value_override(self, binormal, shape):
        pt = percentile_point(binormal, 0.2, 0.9)
        assert ppv_pct_var(binormal, 0.2, 0.9, 1, 1, shape, ppv=pt.ppv) == ppv_pct_var(binormal, 0.2, 0.9, 1, 1, shape)
        assert ppv_pct_var(binormal, 0.2, 0.9, 1, 1, shape, ppv=0.5) != ppv_pct_var(binormal, 0.2, 0.9, 1, 1, shape)


class TestKernelPlugin:
    def test_density_at_zero(self):
        x = np.random.default_rng(5).standard_normal(500)
        s = MarkerSample(x, x)
        km = kernel_density_plugin(s)
        assert km.pdf_Dbar(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=0.05)

    def test_silverman_rule(self):
        x = np.random.default_rng(2).standard_normal(300)
        iqr = np.subtract(*np.percentile(x, [75, 25]))
        expected = 0.9 * min(x.std(ddof=1), iqr / 1.34) * 300 ** (-0.2)
        assert silverman_bandwidth(x) == pytest.approx(expected, rel=1e-14)

    def test_bandwidth_echo(self):
        rng = np.random.default_rng(1)
        s = MarkerSample(rng.normal(1, 1, 50), rng.normal(0, 1, 50))
        km = kernel_density_plugin(s, bandwidth_rule=(0.123456789, 0.314159))
        assert km.metadata["bw_D"] == 0.123456789
        assert km.metadata["bw_Dbar"] == 0.314159
        assert km.metadata["bandwidth_rule"] == "fixed"
        assert "kernel" in km.metadata["density_estimator"]

    def test_small_prefix_rejected(self):
        s = MarkerSample(np.arange(20.0), np.arange(20.0))
        with pytest.raises(DomainError):
            kernel_density_plugin(s, SequentialView(0.4, 1.0))

    def test_agrees_with_binormal_formulas(self, binormal):
        # One n=2000 draw has density-ratio noise near 7% per arm, so the
        # agreement is judged on the median over independent samples.
        us = (0.3, 0.5, 0.7, 0.9)
        shape = StudyShape(2000, 2000)
        ref = np.array([ppv_pct_var(binormal, 0.2, u, 1, 1, shape) for u in us])
        errs = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            s = MarkerSample(rng.normal(1, 1, 2000), rng.normal(0, 1, 2000))
            km = kernel_density_plugin(s)
            assert isinstance(km, KernelModel)
            errs.append(np.array([ppv_pct_var(km, 0.2, u, 1, 1, shape) for u in us]) / ref - 1)
        assert np.all(np.median(np.abs(errs), axis=0) < 0.10)
