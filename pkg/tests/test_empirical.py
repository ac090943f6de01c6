import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqcurve.empirical import (
    DomainError,
    MarkerSample,
    SampleFormatError,
    SequentialView,
    ValidityWindow,
    as_fraction,
    batch_count_le,
    batch_mixture_quantile,
    batch_order_statistic,
    batch_prefix_sort,
    mixture_ecdf,
    mixture_quantile,
    prefix_length,
    read_marker_csv,
    seq_ecdf,
    seq_quantile,
    seq_survival,
    seq_survival_quantile,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def brute_ecdf(values, k, x):
    return sum(1 for v in values[:k] if v <= x) / k


def brute_count(values, k, x):
    return sum(1 for v in values[:k] if v <= x)


def brute_quantile(values, k, t):
    prefix = sorted(values[:k])
    if t == 0:
        return prefix[0]
    # smallest j with t <= j/k
    for j in range(1, k + 1):
        if Fraction(t) <= Fraction(j, k):
            return prefix[j - 1]
    raise AssertionError


class TestPrefix:
    def test_floor_rule(self):
        assert prefix_length(2 / 3, 3) == 2
        assert prefix_length(0.7, 10) == 7
        assert prefix_length(1, 5) == 5

    def test_empty_prefix_rejected(self):
        with pytest.raises(DomainError):
            prefix_length(0.2, 4)

    def test_fraction_out_of_range(self):
        with pytest.raises(DomainError):
            prefix_length(1.5, 4)

    def test_as_fraction_absorbs_float_noise(self):
        assert as_fraction(1 - 0.4) == Fraction(3, 5)
        assert as_fraction(2 / 3) == Fraction(2, 3)

    def test_view_bounds(self):
        with pytest.raises(DomainError):
            SequentialView(0.0, 1.0)
        with pytest.raises(DomainError):
            SequentialView(1.0, 1.2)

    def test_window_invariants(self):
        with pytest.raises(DomainError):
            ValidityWindow(a=0.6, b=0.4)
        w = ValidityWindow()
        w.check(0.5, 0.5, 0.5)
        with pytest.raises(DomainError):
            w.check(0.01, 1, 1)
        with pytest.raises(DomainError):
            w.check(0.5, 0.05, 1)


class TestSequentialEcdf:
    values = [2.0, 1.0, 3.0]

    def test_full_count(self):
        assert seq_ecdf(self.values, 1, 1.5) == pytest.approx(1 / 3, abs=0)

    def test_prefix_count(self):
        assert seq_ecdf(self.values, 2 / 3, 1.5) == 0.5

    def test_total_mass(self):
        assert seq_ecdf(self.values, 1, math.inf) == 1.0

    def test_empty_prefix(self):
        with pytest.raises(DomainError):
            seq_ecdf(self.values, 0.2, 0.0)

    def test_right_continuous_at_atoms(self):
        assert seq_ecdf(self.values, 1, 2.0) == 2 / 3
        assert seq_ecdf(self.values, 1, np.nextafter(2.0, -np.inf)) == 1 / 3


class TestSequentialQuantile:
    values = [5.0, 1.0, 3.0]

    def test_median(self):
        assert seq_quantile(self.values, 1, 0.5) == 3

    def test_zero_gives_minimum(self):
        assert seq_quantile(self.values, 1, 0) == 1

    def test_prefix_max(self):
        assert seq_quantile(self.values, 2 / 3, 1) == 5

    def test_level_outside_unit_interval(self):
        with pytest.raises(DomainError):
            seq_quantile(self.values, 1, 1.01)
        with pytest.raises(DomainError):
            seq_quantile(self.values, 1, -0.1)

    def test_grid_boundary_is_left_closed_interval_end(self):
        # t = 1/3 belongs to (0, 1/3] -> first order statistic
        assert seq_quantile(self.values, 1, 1 / 3) == 1
        assert seq_quantile(self.values, 1, 1 / 3 + 1e-9) == 3

    def test_ties_are_deterministic(self):
        assert seq_quantile([2.0, 2.0, 1.0, 2.0], 1, 0.5) == 2.0


class TestSurvival:
    values = [5.0, 1.0, 3.0]

    def test_complement(self):
        assert seq_survival(self.values, 1, 2) == pytest.approx(2 / 3)

    def test_quantile_identity(self):
        assert seq_survival_quantile(self.values, 1, 0.5) == seq_quantile(self.values, 1, 0.5) == 3

    def test_total_mass(self):
        assert seq_survival(self.values, 1, -math.inf) == 1.0


class TestMixture:
    def test_two_point(self):
        s = MarkerSample([1.0], [0.0])
        assert mixture_ecdf(s, SequentialView(), 0.2, 0.5) == pytest.approx(0.8)

    def test_symmetric_samples(self):
        vals = [0.3, -1.2, 2.5, 0.9]
        s = MarkerSample(vals, vals)
        for x in (-2, 0, 1, 3):
            assert mixture_ecdf(s, SequentialView(), 0.5, x) == pytest.approx(seq_ecdf(vals, 1, x))

    def test_hand_count(self):
        s = MarkerSample([1.0, 2.0], [0.0, 3.0])
        assert mixture_ecdf(s, SequentialView(), 0.2, 2.5) == pytest.approx(0.6)

    @pytest.mark.parametrize("u, expected", [(0.5, 0.0), (0.9, 1.0)])
    def test_quantile_two_atoms(self, u, expected):
        s = MarkerSample([1.0], [0.0])
        assert mixture_quantile(s, SequentialView(), 0.2, u) == expected

    def test_quantile_four_atoms(self):
        # mixture ECDF over atoms 0, 1, 2, 3 is 0.4, 0.5, 0.6, 1.0
        s = MarkerSample([1.0, 2.0], [0.0, 3.0])
        v = SequentialView()
        assert mixture_quantile(s, v, 0.2, 0.65) == 3.0
        assert mixture_quantile(s, v, 0.2, 0.6) == 2.0
        assert mixture_quantile(s, v, 0.2, 0.55) == 2.0

    def test_quantile_domain(self):
        s = MarkerSample([1.0], [0.0])
        for u in (0.0, 1.0):
            with pytest.raises(DomainError):
                mixture_quantile(s, SequentialView(), 0.2, u)

    def test_prevalence_domain(self):
        s = MarkerSample([1.0], [0.0])
        with pytest.raises(DomainError):
            mixture_ecdf(s, SequentialView(), 1.0, 0.0)

    def test_prefix_consistency(self):
        rng = np.random.default_rng(3)
        s = MarkerSample(rng.normal(1, 1, 40), rng.normal(0, 1, 30))
        view = SequentialView(0.45, 0.7)
        trunc = s.truncated(view)
        for u in (0.1, 0.37, 0.5, 0.82):
            assert mixture_quantile(s, view, 0.2, u) == mixture_quantile(trunc, SequentialView(), 0.2, u)
        for x in (-1.0, 0.2, 1.7):
            assert mixture_ecdf(s, view, 0.2, x) == mixture_ecdf(trunc, SequentialView(), 0.2, x)


class TestBruteForceOracle:
    """Exhaustive agreement on every ordering of small distinct samples."""

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
    def test_ecdf_and_quantile(self, n):
        base = [0.5 * i - 1 for i in range(n)]
        probes = [b + d for b in base for d in (-0.1, 0.0)] + [base[-1] + 1]
        for perm in itertools.permutations(base):
            for k in range(1, n + 1):
                r = Fraction(k, n)
                for x in probes:
                    assert seq_ecdf(perm, r, x) == brute_ecdf(perm, k, x)
                for j in range(0, 2 * k + 1):
                    t = Fraction(j, 2 * k)
                    assert seq_quantile(perm, r, t) == brute_quantile(perm, k, t)

    @pytest.mark.parametrize("n_D, n_Dbar", [(1, 1), (2, 3), (3, 2), (2, 2)])
    def test_mixture_quantile(self, n_D, n_Dbar):
        atoms = [0.0, 1.0, 2.0, 3.0, 4.0][: n_D + n_Dbar]
        rho = Fraction(1, 5)
        for perm in itertools.permutations(atoms):
            s = MarkerSample(perm[:n_D], perm[n_D:])
            for j in range(1, 20):
                u = Fraction(j, 20)

                def F(x):
                    return rho * Fraction(sum(c <= x for c in perm[:n_D]), n_D) + (1 - rho) * Fraction(
                        sum(c <= x for c in perm[n_D:]), n_Dbar
                    )

                expected = min(x for x in atoms if F(x) >= u)
                assert mixture_quantile(s, SequentialView(), 0.2, float(u)) == expected


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(finite, min_size=1, max_size=30), st.floats(0.01, 1.0), st.floats(0.0, 1.0))
    def test_quantile_inverts_ecdf(self, values, r, t):
        k = math.floor(as_fraction(r) * len(values))
        if k < 1:
            return
        tf = as_fraction(t)
        q = seq_quantile(values, r, t)
        F = Fraction(brute_count(values, k, q), k)
        assert F >= tf
        if tf > 0 and (tf * k).denominator == 1 and len(set(values[:k])) == k:
            assert F == tf

    @settings(max_examples=100, deadline=None)
    @given(st.lists(finite, min_size=1, max_size=25), st.lists(finite, min_size=2, max_size=25))
    def test_ecdf_monotone_in_x(self, values, xs):
        xs = sorted(xs)
        F = [seq_ecdf(values, 1, x) for x in xs]
        assert all(a <= b for a, b in zip(F, F[1:]))
        assert all(0 <= f <= 1 for f in F)

    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(1, 12),
        st.integers(1, 12),
        st.floats(0.02, 0.98),
        st.floats(0.01, 0.99),
        st.integers(0, 2**32 - 1),
    )
    def test_batch_matches_scalar(self, n_D, n_Dbar, rho, u, seed):
        rng = np.random.default_rng(seed)
        # coarse grid so ties occur
        cases = np.round(rng.normal(0.5, 1, (3, n_D)), 1)
        controls = np.round(rng.normal(0, 1, (3, n_Dbar)), 1)
        sc, sb = batch_prefix_sort(cases, n_D), batch_prefix_sort(controls, n_Dbar)
        xq = batch_mixture_quantile(sc, sb, rho, u)
        os_ = batch_order_statistic(sb, u)
        cnt = batch_count_le(sc, xq)
        for i in range(3):
            s = MarkerSample(cases[i], controls[i])
            assert xq[i] == mixture_quantile(s, SequentialView(), rho, u)
            assert os_[i] == seq_quantile(controls[i], 1, u)
            assert cnt[i] / n_D == seq_ecdf(cases[i], 1, xq[i])


class TestCsv:
    def test_roundtrip_keeps_arrival_order(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("value,label\n3.0,case\n1.0,control\n2.0,case\n0.5,control\n")
        s = read_marker_csv(p)
        assert list(s.cases) == [3.0, 2.0]
        assert list(s.controls) == [1.0, 0.5]

    def test_missing_label_column(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("value\n1.0\n")
        with pytest.raises(SampleFormatError) as err:
            read_marker_csv(p)
        assert err.value.line == 1
        assert "line 1" in str(err.value)

    def test_bad_value_reports_line(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("value,label\n1.0,case\nabc,control\n")
        with pytest.raises(SampleFormatError) as err:
            read_marker_csv(p)
        assert err.value.line == 3

    def test_bad_label_reports_line(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("value,label\n1.0,case\n2.0,control\n3.0,sick\n")
        with pytest.raises(SampleFormatError) as err:
            read_marker_csv(p)
        assert err.value.line == 4

    def test_needs_both_arms(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("value,label\n1.0,case\n")
        with pytest.raises(SampleFormatError):
            read_marker_csv(p)
