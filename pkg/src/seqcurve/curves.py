"""True and empirical ROC, PPV and NPV curves.

Curves are indexed by the false positive fraction ``t``, the true positive
fraction ``v`` (inverse ROC) or the population percentile ``u``. Empirical
curves are step-function compositions of the sequential estimators in
:mod:`seqcurve.empirical`; nothing is interpolated or smoothed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import special

from .empirical import (
    DomainError,
    MarkerSample,
    SequentialView,
    _count_le,
    _order_statistic,
    as_fraction,
    mixture_quantile,
)

__all__ = [
    "MarkerModel",
    "BinormalModel",
    "roc_true",
    "roc_inverse_true",
    "roc_empirical",
    "roc_inverse_empirical",
    "ppv_fpf",
    "npv_fpf",
    "ppv_fpf_empirical",
    "npv_fpf_empirical",
    "npv_from_ppv",
    "ppv_pct",
    "npv_pct",
    "ppv_pct_true",
    "npv_pct_true",
]

_BISECT_TOL = 1e-12
_SQRT_2PI = math.sqrt(2 * math.pi)


def _open_unit(name: str, x: float) -> None:
    if not 0 < x < 1:
        raise DomainError(f"{name} must lie in (0, 1), got {x!r}")


class MarkerModel:
    """Distribution pair for cases (D) and controls (Dbar).

    Subclasses supply the CDFs and densities of each arm; quantiles and the
    mixture quantile default to bisection. This is the density interface the
    variance formulas consume.
    """

    def cdf_D(self, x: float) -> float:
        raise NotImplementedError

    def cdf_Dbar(self, x: float) -> float:
        raise NotImplementedError

    def pdf_D(self, x: float) -> float:
        raise NotImplementedError

    def pdf_Dbar(self, x: float) -> float:
        raise NotImplementedError

    def _bracket(self) -> tuple[float, float]:
        return -1e3, 1e3

    def _bisect(self, fn, target: float) -> float:
        lo, hi = self._bracket()
        while fn(lo) > target:
            lo = 2 * lo - hi
        while fn(hi) < target:
            hi = 2 * hi - lo
        for _ in range(400):
            mid = 0.5 * (lo + hi)
            val = fn(mid) - target
            if abs(val) <= _BISECT_TOL or hi - lo <= 1e-15 * max(1.0, abs(mid)):
                return mid
            if val < 0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def ppf_D(self, p: float) -> float:
        return self._bisect(self.cdf_D, p)

    def ppf_Dbar(self, p: float) -> float:
        return self._bisect(self.cdf_Dbar, p)

    def mixture_cdf(self, rho: float, x: float) -> float:
        return rho * self.cdf_D(x) + (1 - rho) * self.cdf_Dbar(x)

    def mixture_pdf(self, rho: float, x: float) -> float:
        return rho * self.pdf_D(x) + (1 - rho) * self.pdf_Dbar(x)

    def mixture_ppf(self, rho: float, u: float) -> float:
        """Population quantile ``F^{-1}(u)``, bisection to ``|F(x) - u| <= 1e-12``."""
        return self._bisect(lambda x: self.mixture_cdf(rho, x), u)

    def density_ratio(self, t: float) -> float:
        """``f_D / f_Dbar`` at the control threshold with FPF ``t``."""
        x = self.ppf_Dbar(1 - t)
        return self.pdf_D(x) / self.pdf_Dbar(x)


@dataclass(frozen=True)
class BinormalModel(MarkerModel):
    """Controls ~ N(0, 1); cases ~ N(mu_D, sigma_D**2)."""

    mu_D: float = 1.0
    sigma_D: float = 1.0

    def __post_init__(self):
        if not self.sigma_D > 0:
            raise DomainError(f"sigma_D must be positive, got {self.sigma_D!r}")

    def cdf_D(self, x):
        return float(special.ndtr((x - self.mu_D) / self.sigma_D))

    def cdf_Dbar(self, x):
        return float(special.ndtr(x))

    def pdf_D(self, x):
        z = (x - self.mu_D) / self.sigma_D
        return math.exp(-0.5 * z * z) / (_SQRT_2PI * self.sigma_D)

    def pdf_Dbar(self, x):
        return math.exp(-0.5 * x * x) / _SQRT_2PI

    def ppf_D(self, p):
        return float(self.mu_D + self.sigma_D * special.ndtri(p))

    def ppf_Dbar(self, p):
        return float(special.ndtri(p))

    def _bracket(self):
        lo = min(-40.0, self.mu_D - 40 * self.sigma_D)
        hi = max(40.0, self.mu_D + 40 * self.sigma_D)
        return lo, hi

    def sample(self, rng, n_D: int, n_Dbar: int, reps: int | None = None):
        """Draw case and control markers; shapes are ``(reps, n)`` when ``reps`` is given."""
        shape_D = (n_D,) if reps is None else (reps, n_D)
        shape_Dbar = (n_Dbar,) if reps is None else (reps, n_Dbar)
        cases = self.mu_D + self.sigma_D * rng.standard_normal(shape_D)
        controls = rng.standard_normal(shape_Dbar)
        return cases, controls


def roc_true(model: MarkerModel, t: float) -> float:
    """``ROC(t) = S_D(S_Dbar^{-1}(t))``."""
    _open_unit("t", t)
    if isinstance(model, BinormalModel):
        return float(special.ndtr((model.mu_D + special.ndtri(t)) / model.sigma_D))
    return 1.0 - model.cdf_D(model.ppf_Dbar(1 - t))


def roc_inverse_true(model: MarkerModel, v: float) -> float:
    """FPF achieved at TPF ``v``: ``S_Dbar(S_D^{-1}(v))``."""
    _open_unit("v", v)
    return 1.0 - model.cdf_Dbar(model.ppf_D(1 - v))


def roc_empirical(sample: MarkerSample, view: SequentialView, t: float) -> float:
    _open_unit("t", t)
    cases, controls = sample.prefixes(view)
    threshold = _order_statistic(controls, 1 - as_fraction(t))
    return 1.0 - _count_le(cases, threshold) / cases.size


def roc_inverse_empirical(sample: MarkerSample, view: SequentialView, v: float) -> float:
    _open_unit("v", v)
    cases, controls = sample.prefixes(view)
    threshold = _order_statistic(cases, 1 - as_fraction(v))
    return 1.0 - _count_le(controls, threshold) / controls.size


def ppv_fpf(roc_value: float, t: float, rho: float) -> float:
    """PPV at FPF ``t`` from the ROC value there."""
    _open_unit("rho", rho)
    denom = roc_value * rho + t * (1 - rho)
    if denom <= 0:
        raise DomainError("PPV undefined: ROC(t) = 0 and t = 0")
    return roc_value * rho / denom


def npv_fpf(roc_value: float, t: float, rho: float) -> float:
    _open_unit("rho", rho)
    denom = (1 - roc_value) * rho + (1 - t) * (1 - rho)
    if denom <= 0:
        raise DomainError("NPV undefined: ROC(t) = 1 and t = 1")
    return (1 - t) * (1 - rho) / denom


def ppv_fpf_empirical(sample: MarkerSample, view: SequentialView, t: float, rho: float) -> float:
    return ppv_fpf(roc_empirical(sample, view, t), t, rho)


def npv_fpf_empirical(sample: MarkerSample, view: SequentialView, t: float, rho: float) -> float:
    return npv_fpf(roc_empirical(sample, view, t), t, rho)


def npv_from_ppv(ppv: float, u: float, rho: float) -> float:
    """NPV at percentile ``u`` implied by the PPV there."""
    return (u - rho) / u + (1 - u) / u * ppv


def ppv_pct(sample: MarkerSample, view: SequentialView, rho: float, u: float) -> float:
    """Empirical PPV of the top ``1 - u`` of the population."""
    _open_unit("u", u)
    x = mixture_quantile(sample, view, rho, u)
    cases, _ = sample.prefixes(view)
    surv = 1.0 - _count_le(cases, x) / cases.size
    return surv * rho / (1 - u)


def npv_pct(sample: MarkerSample, view: SequentialView, rho: float, u: float) -> float:
    return npv_from_ppv(ppv_pct(sample, view, rho, u), u, rho)


def ppv_pct_true(model: MarkerModel, rho: float, u: float) -> float:
    _open_unit("u", u)
    _open_unit("rho", rho)
    x = model.mixture_ppf(rho, u)
    return (1.0 - model.cdf_D(x)) * rho / (1 - u)


def npv_pct_true(model: MarkerModel, rho: float, u: float) -> float:
    _open_unit("u", u)
    _open_unit("rho", rho)
    x = model.mixture_ppf(rho, u)
    return (1 - rho) * model.cdf_Dbar(x) / u

