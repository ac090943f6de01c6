"""Sequential empirical distribution and quantile functions.

A "sequential" estimator looks only at the first ``floor(r * n)`` arrivals of
an arm. Cases and controls accrue separately, so every estimator here is
indexed by a pair of observed fractions ``(r_D, r_Dbar)``.

Counting is done in integers and fractional inputs are rationalised before
any floor/ceil, so the step functions are bit-reproducible: ``r = 2/3`` on
three observations always selects two of them, however the float was formed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "DomainError",
    "MarkerSample",
    "SequentialView",
    "ValidityWindow",
    "SampleFormatError",
    "as_fraction",
    "prefix_length",
    "seq_ecdf",
    "seq_quantile",
    "seq_survival",
    "seq_survival_quantile",
    "mixture_ecdf",
    "mixture_quantile",
    "read_marker_csv",
]

_MAX_DENOMINATOR = 10**9


class DomainError(ValueError):
    """An argument lies outside the domain of the estimator."""


class SampleFormatError(ValueError):
    """A marker CSV could not be parsed.

    ``line`` is the 1-based line number of the offending row (0 when the
    problem is not tied to a single row).
    """

    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


def as_fraction(x) -> Fraction:
    """Rationalise ``x`` to the closest fraction with denominator <= 1e9.

    Floats such as ``2/3`` or ``1 - 0.4`` carry representation error that
    would otherwise leak into ``floor``/``ceil`` of grid positions.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    xf = float(x)
    if not math.isfinite(xf):
        raise DomainError(f"non-finite fraction {x!r}")
    return Fraction(xf).limit_denominator(_MAX_DENOMINATOR)


def prefix_length(r, n: int) -> int:
    """Number of arrivals ``floor(r * n)`` observed at fraction ``r``."""
    rf = as_fraction(r)
    if rf < 0 or rf > 1:
        raise DomainError(f"observed fraction must lie in [0, 1], got {r!r}")
    k = math.floor(rf * n)
    if k < 1:
        raise DomainError(f"fraction {r!r} of {n} observations selects an empty prefix")
    return k


@dataclass(frozen=True)
class SequentialView:
    """Observed fractions of cases and controls at one analysis time."""

    r_D: float = 1.0
    r_Dbar: float = 1.0

    def __post_init__(self):
        for name in ("r_D", "r_Dbar"):
            r = as_fraction(getattr(self, name))
            if not 0 < r <= 1:
                raise DomainError(f"{name} must lie in (0, 1], got {getattr(self, name)!r}")


@dataclass(frozen=True)
class ValidityWindow:
    """Region on which the limit theorems hold uniformly.

    Index points must lie in ``(a, b)``; case and control fractions must be at
    least ``c`` and ``d``. The defaults are configuration, not doctrine.
    """

    a: float = 0.05
    b: float = 0.95
    c: float = 0.1
    d: float = 0.05

    def __post_init__(self):
        if not 0 < self.a < self.b < 1:
            raise DomainError("need 0 < a < b < 1")
        if not (0 < self.c < 1 and 0 < self.d < 1):
            raise DomainError("need 0 < c < 1 and 0 < d < 1")

    def check(self, index: float, r_D: float, r_Dbar: float) -> None:
        if not self.a < index < self.b:
            raise DomainError(f"index {index} outside validity window ({self.a}, {self.b})")
        if r_D < self.c or r_Dbar < self.d:
            raise DomainError(
                f"fractions ({r_D}, {r_Dbar}) below validity minimums ({self.c}, {self.d})"
            )


@dataclass(frozen=True)
class MarkerSample:
    """Case and control marker values in arrival order.

    Arrays are copied and made read-only on construction; sorted prefixes are
    cached per prefix length.
    """

    cases: np.ndarray
    controls: np.ndarray
    _sorted: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("cases", "controls"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            if arr.size == 0:
                raise DomainError(f"{name} must be nonempty")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite marker values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_D(self) -> int:
        return self.cases.size

    @property
    def n_Dbar(self) -> int:
        return self.controls.size

    def sorted_prefix(self, arm: str, k: int) -> np.ndarray:
        key = (arm, k)
        if key not in self._sorted:
            values = self.cases if arm == "cases" else self.controls
            out = np.sort(values[:k], kind="stable")
            out.setflags(write=False)
            self._sorted[key] = out
        return self._sorted[key]

    def prefixes(self, view: SequentialView) -> tuple[np.ndarray, np.ndarray]:
        """Sorted case and control prefixes selected by ``view``."""
        k_D = prefix_length(view.r_D, self.n_D)
        k_Dbar = prefix_length(view.r_Dbar, self.n_Dbar)
        return self.sorted_prefix("cases", k_D), self.sorted_prefix("controls", k_Dbar)

    def truncated(self, view: SequentialView) -> "MarkerSample":
        """The sample consisting only of the arrivals visible at ``view``."""
        k_D = prefix_length(view.r_D, self.n_D)
        k_Dbar = prefix_length(view.r_Dbar, self.n_Dbar)
        return MarkerSample(self.cases[:k_D], self.controls[:k_Dbar])


def _sorted_prefix(values: Sequence[float], r) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    k = prefix_length(r, arr.size)
    return np.sort(arr[:k], kind="stable")


def _count_le(sorted_values: np.ndarray, x: float) -> int:
    return int(np.searchsorted(sorted_values, x, side="right"))


def _order_statistic(sorted_values: np.ndarray, t) -> float:
    # ((j-1)/k, j/k] -> j-th order statistic; t = 0 -> minimum.
    tf = as_fraction(t)
    if tf < 0 or tf > 1:
        raise DomainError(f"quantile level must lie in [0, 1], got {t!r}")
    k = sorted_values.size
    j = max(1, math.ceil(tf * k))
    return float(sorted_values[j - 1])


def seq_ecdf(values: Sequence[float], r, x: float) -> float:
    """Empirical CDF at ``x`` of the first ``floor(r * n)`` values."""
    prefix = _sorted_prefix(values, r)
    return _count_le(prefix, x) / prefix.size


def seq_quantile(values: Sequence[float], r, t) -> float:
    """Left-continuous inverse of :func:`seq_ecdf`.

    Returns the ``ceil(t * k)``-th order statistic of the prefix, and the
    minimum at ``t = 0``.
    """
    return _order_statistic(_sorted_prefix(values, r), t)


def seq_survival(values: Sequence[float], r, x: float) -> float:
    return 1.0 - seq_ecdf(values, r, x)


def seq_survival_quantile(values: Sequence[float], r, t) -> float:
    tf = as_fraction(t)
    if tf < 0 or tf > 1:
        raise DomainError(f"quantile level must lie in [0, 1], got {t!r}")
    return seq_quantile(values, r, 1 - tf)


def _check_rho(rho) -> Fraction:
    rf = as_fraction(rho)
    if not 0 < rf < 1:
        raise DomainError(f"prevalence must lie in (0, 1), got {rho!r}")
    return rf


def mixture_ecdf(sample: MarkerSample, view: SequentialView, rho: float, x: float) -> float:
    """Prevalence-weighted mixture of the case and control sequential ECDFs."""
    _check_rho(rho)
    cases, controls = sample.prefixes(view)
    F_D = _count_le(cases, x) / cases.size
    F_Dbar = _count_le(controls, x) / controls.size
    return rho * F_D + (1 - rho) * F_Dbar


def mixture_quantile(sample: MarkerSample, view: SequentialView, rho: float, u: float) -> float:
    """Smallest pooled observation at which the mixture ECDF reaches ``u``.

    The comparison ``rho*a/k_D + (1-rho)*b/k_Dbar >= u`` is done in exact
    rational arithmetic over the merged prefixes.
    """
    rf = _check_rho(rho)
    uf = as_fraction(u)
    if not 0 < uf < 1:
        raise DomainError(f"percentile must lie in (0, 1), got {u!r}")
    cases, controls = sample.prefixes(view)
    k_D, k_Dbar = cases.size, controls.size
    pooled = np.concatenate([cases, controls])
    is_case = np.concatenate([np.ones(k_D, bool), np.zeros(k_Dbar, bool)])
    order = np.argsort(pooled, kind="stable")
    a = b = 0
    for idx in order:
        if is_case[idx]:
            a += 1
        else:
            b += 1
        if rf * Fraction(a, k_D) + (1 - rf) * Fraction(b, k_Dbar) >= uf:
            return float(pooled[idx])
    return float(pooled[order[-1]])  # unreachable for u < 1


def read_marker_csv(path: str | Path) -> MarkerSample:
    """Load a ``value,label`` CSV (label in {case, control}) in file order."""
    cases: list[float] = []
    controls: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SampleFormatError("empty file", 1) from None
        cols = [h.strip().lower() for h in header]
        if "value" not in cols or "label" not in cols:
            raise SampleFormatError(f"header must contain 'value' and 'label', got {header}", 1)
        iv, il = cols.index("value"), cols.index("label")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) <= max(iv, il):
                raise SampleFormatError(f"expected {len(cols)} fields, got {len(row)}", lineno)
            try:
                value = float(row[iv])
            except ValueError:
                raise SampleFormatError(f"bad marker value {row[iv]!r}", lineno) from None
            label = row[il].strip().lower()
            if label == "case":
                cases.append(value)
            elif label == "control":
                controls.append(value)
            else:
                raise SampleFormatError(f"label must be 'case' or 'control', got {row[il]!r}", lineno)
    if not cases or not controls:
        raise SampleFormatError("need at least one case and one control")
    return MarkerSample(cases, controls)


def batch_prefix_sort(values: np.ndarray, k: int) -> np.ndarray:
    """Row-wise sorted first ``k`` columns of a (reps, n) array."""
    return np.sort(values[:, :k], axis=1, kind="stable")


def batch_order_statistic(sorted_rows: np.ndarray, t) -> np.ndarray:
    """Vectorised :func:`seq_quantile` over rows that are already sorted."""
    tf = as_fraction(t)
    k = sorted_rows.shape[1]
    j = max(1, math.ceil(tf * k))
    return sorted_rows[:, j - 1]


def batch_mixture_quantile(
    sorted_cases: np.ndarray, sorted_controls: np.ndarray, rho, u
) -> np.ndarray:
    """Vectorised :func:`mixture_quantile` for rows of sorted prefixes.

    The rational comparison is cleared of denominators and carried out in
    64-bit integers, so it agrees exactly with the scalar routine.
    """
    rf, uf = as_fraction(rho), as_fraction(u)
    reps, k_D = sorted_cases.shape
    k_Dbar = sorted_controls.shape[1]
    pooled = np.concatenate([sorted_cases, sorted_controls], axis=1)
    is_case = np.concatenate(
        [np.ones((reps, k_D), np.int64), np.zeros((reps, k_Dbar), np.int64)], axis=1
    )
    order = np.argsort(pooled, axis=1, kind="stable")
    flags = np.take_along_axis(is_case, order, axis=1)
    a = np.cumsum(flags, axis=1)
    b = np.arange(1, k_D + k_Dbar + 1, dtype=np.int64)[None, :] - a
    # rho*a/k_D + (1-rho)*b/k_Dbar >= u with rho = p/q, u = s/w
    p, q = rf.numerator, rf.denominator
    s, w = uf.numerator, uf.denominator
    if q * w * k_D * k_Dbar < 2**62:
        lhs = (p * k_Dbar * a + (q - p) * k_D * b) * w
        reached = lhs >= s * q * k_D * k_Dbar
    else:
        # denominators too large for int64; fall back to a guarded float test
        mix = float(rf) * a / k_D + float(1 - rf) * b / k_Dbar
        reached = mix >= float(uf) - 1e-12
    first = np.argmax(reached, axis=1)
    idx = np.take_along_axis(order, first[:, None], axis=1)
    return np.take_along_axis(pooled, idx, axis=1)[:, 0]


def batch_count_le(sorted_rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-row count of entries ``<= x[row]``."""
    return (sorted_rows <= x[:, None]).sum(axis=1)
