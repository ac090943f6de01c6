import numpy as np
import pytest

from seqcurve.asymptotics import CovProbe, ppv_fpf_process_cov, ppv_pct_process_cov, roc_process_cov
from seqcurve.curves import BinormalModel
from seqcurve.design import calibrate_binormal
from seqcurve.empirical import DomainError
from seqcurve.montecarlo import (
    PERCENTILES,
    TABLE1_PROBES,
    SimScenario,
    run_ppv_validation,
    run_table1,
    simulate_sample,
)


def z_scores(report):
    return (report.observed_cov - report.theoretical_cov) / report.observed_cov_se


@pytest.fixture(scope="module")
def table_run():
    return run_table1(SimScenario(replications=4000, seed=19))


class TestSimulateSample:
    def test_reproducible(self):
        m = BinormalModel(1, 1)
        a = simulate_sample(m, 0.2, 30, 40, np.random.default_rng(4))
        b = simulate_sample(m, 0.2, 30, 40, np.random.default_rng(4))
        assert np.array_equal(a.cases, b.cases) and np.array_equal(a.controls, b.controls)
        assert a.n_D == 30 and a.n_Dbar == 40

    def test_sample_means(self):
        m = BinormalModel(1.0, 2.0)
        rng = np.random.default_rng(17)
        n = 100
        for _ in range(1000):
            s = simulate_sample(m, 0.2, n, n, rng)
            assert abs(s.cases.mean() - 1.0) < 4 * 2.0 / np.sqrt(n)
            assert abs(s.controls.mean()) < 4 / np.sqrt(n)

    @pytest.mark.parametrize("n_D, n_Dbar", [(0, 5), (5, 0)])
    def test_empty_arm_rejected(self, n_D, n_Dbar):
        with pytest.raises(DomainError):
            simulate_sample(BinormalModel(), 0.2, n_D, n_Dbar, np.random.default_rng(0))
        with pytest.raises(DomainError):
            SimScenario(n_D=n_D, n_Dbar=n_Dbar)

    def test_replications_positive(self):
        with pytest.raises(DomainError):
            SimScenario(replications=0)


class TestTableRun:
    def test_theory_is_asymptotics_output(self, table_run, binormal):
        expected = roc_process_cov(binormal, list(TABLE1_PROBES), 1.0)
        assert np.array_equal(table_run.theoretical_cov, expected)

    def test_shapes_and_ranges(self, table_run):
        assert table_run.coverage.shape == (4, len(PERCENTILES))
        assert np.all((table_run.coverage >= 0) & (table_run.coverage <= 1))
        assert np.all(np.diff(table_run.coverage, axis=1) >= 0)

    def test_thread_invariance(self):
        s = SimScenario(replications=1700, seed=23)
        a, b = run_table1(s, threads=1), run_table1(s, threads=3)
        assert np.array_equal(a.observed_cov, b.observed_cov)
        assert np.array_equal(a.coverage, b.coverage)
        assert a.to_csv() == b.to_csv()

    def test_reports_render(self, table_run):
        md = table_run.to_markdown()
        assert "Observed covariance" in md and "Theoretical covariance" in md
        rows = table_run.to_csv().splitlines()
        assert rows[0] == "section,row,column,value,se,source"
        assert len(rows) == 1 + 4 * (1 + len(PERCENTILES)) + 2 * 16

    def test_labels(self, table_run):
        assert table_run.labels()[0] == "R_0.4,0.7(0.4)"

    def test_converges_along_n(self):
        dist = {}
        for n in (50, 100, 200):
            d = []
            for seed in range(1, 6):
                r = run_table1(SimScenario(n_D=n, n_Dbar=n, replications=10_000, seed=seed))
                d.append(np.linalg.norm(r.observed_cov - r.theoretical_cov))
            dist[n] = np.mean(d)
        assert dist[50] > dist[100] > dist[200]


class TestPpvValidation:
    def test_fpf_covariance(self, binormal):
        s = SimScenario(n_D=1000, n_Dbar=1000, seed=11)
        r = run_ppv_validation(s, "fpf")
        assert np.array_equal(r.theoretical_cov, ppv_fpf_process_cov(binormal, 0.2, list(s.probes), 1.0))
        assert np.all(np.abs(z_scores(r)) < 3)

    def test_pct_covariance(self, binormal):
        probes = (CovProbe(0.6, 0.4, 0.7), CovProbe(0.9), CovProbe(0.6), CovProbe(0.9, 0.4, 0.7))
        s = SimScenario(n_D=1000, n_Dbar=1000, probes=probes, seed=11)
        r = run_ppv_validation(s, "pct")
        assert np.array_equal(r.theoretical_cov, ppv_pct_process_cov(binormal, 0.2, list(probes), 1.0))
        assert np.all(np.abs(z_scores(r)) < 3)
        assert r.extras["identity_max_abs"] < 1e-12

    def test_pct_pair_at_moderate_size(self):
        r = run_ppv_validation(SimScenario(probes=(CovProbe(0.6), CovProbe(0.9)), seed=11), "pct")
        assert np.all(np.abs(z_scores(r)) < 3)

    def test_design_point_variance(self):
        alt = calibrate_binormal(0.2, 0.6, 0.95, 0.9, 0.90)
        s = SimScenario(model=alt, n_D=702, n_Dbar=702, probes=(CovProbe(0.9), CovProbe(0.6)), seed=11)
        r = run_ppv_validation(s, "pct")
        assert np.all(np.abs(z_scores(r)) < 3)

    def test_fpf_median_coverage_equals_roc(self):
        # PPV(t) is increasing in ROC(t), so both fall below their truth together
        s = SimScenario(seed=11)
        median = PERCENTILES.index(0.5)
        a = run_ppv_validation(s, "fpf").coverage[:, median]
        assert np.array_equal(a, run_table1(s).coverage[:, median])

    @pytest.mark.parametrize("kind", ["fpf", "pct"])
    def test_median_coverage_approaches_half(self, kind):
        probes = TABLE1_PROBES if kind == "fpf" else (CovProbe(0.6, 0.4, 0.7), CovProbe(0.9))
        gap = []
        for n in (200, 1000):
            r = run_ppv_validation(SimScenario(n_D=n, n_Dbar=n, probes=probes, seed=11), kind)
            gap.append(np.abs(r.coverage[:, 2] - 0.5).mean())
        assert gap[1] < gap[0]
        assert gap[1] < 0.02

    def test_unknown_index_kind(self):
        with pytest.raises(DomainError):
            run_ppv_validation(SimScenario(replications=10), "tpf")
