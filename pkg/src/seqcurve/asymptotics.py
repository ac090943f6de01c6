"""Closed-form asymptotic (co)variances of the sequential curve estimators.

Two scales are exposed and kept apart on purpose:

* process scale: covariance of the scaled processes
  ``R = n_D^{-1/2} [n_D r_D] (ROC_hat - ROC)`` (and the analogous PPV ones),
  parametrised by ``lam = n_D / n_Dbar``;
* estimator scale: covariance of the raw estimates for a concrete study
  ``(n_D, n_Dbar)``. Fractions are replaced by the realised ones
  ``floor(n r) / n`` so independent increments hold exactly.

Every formula takes a :class:`~seqcurve.curves.MarkerModel` for the
densities: a parametric model at design time, or :func:`kernel_density_plugin`
fitted to data at analysis time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .curves import MarkerModel, npv_from_ppv, roc_true
from .empirical import (
    DomainError,
    MarkerSample,
    SequentialView,
    ValidityWindow,
    prefix_length,
)

__all__ = [
    "NumericalError",
    "StudyShape",
    "CovProbe",
    "KernelModel",
    "kiefer_cov",
    "roc_process_cov",
    "roc_estimator_cov",
    "ppv_fpf_delta",
    "npv_fpf_delta",
    "ppv_fpf_process_cov",
    "ppv_fpf_cov",
    "npv_fpf_cov",
    "PercentilePoint",
    "percentile_point",
    "ppv_pct_process_cov",
    "ppv_pct_var",
    "npv_pct_var",
    "ppv_pct_var_kiefer",
    "ppv_pct_cov",
    "npv_pct_cov",
    "ppv_npv_cross_cov",
    "kernel_density_plugin",
    "silverman_bandwidth",
]

DEFAULT_WINDOW = ValidityWindow()


class NumericalError(ArithmeticError):
    """A formula could not be evaluated (zero density, non-PSD result)."""


@dataclass(frozen=True)
class StudyShape:
    """Numbers of cases and controls in the full study."""

    n_D: int
    n_Dbar: int

    def __post_init__(self):
        if self.n_D < 1 or self.n_Dbar < 1:
            raise DomainError("n_D and n_Dbar must be positive")

    @property
    def lam(self) -> float:
        return self.n_D / self.n_Dbar

    def realised(self, r_D: float, r_Dbar: float) -> tuple[float, float]:
        """Fractions actually observed: ``floor(n r) / n`` for each arm."""
        k_D = prefix_length(r_D, self.n_D)
        k_Dbar = prefix_length(r_Dbar, self.n_Dbar)
        return k_D / self.n_D, k_Dbar / self.n_Dbar


@dataclass(frozen=True)
class CovProbe:
    """An index point (``t`` or ``u``) observed at fractions ``(r_D, r_Dbar)``."""

    index: float
    r_D: float = 1.0
    r_Dbar: float = 1.0


def kiefer_cov(t1: float, r1: float, t2: float, r2: float) -> float:
    """Covariance of a Kiefer process at ``(t1, r1)`` and ``(t2, r2)``."""
    if not (0 <= t1 <= 1 and 0 <= t2 <= 1):
        raise DomainError("Kiefer index must lie in [0, 1]")
    if r1 < 0 or r2 < 0:
        raise DomainError("Kiefer time must be nonnegative")
    return (min(t1, t2) - t1 * t2) * min(r1, r2)


def _kiefer_matrix(idx: np.ndarray, time: np.ndarray) -> np.ndarray:
    return (np.minimum.outer(idx, idx) - np.outer(idx, idx)) * np.minimum.outer(time, time)


def _finalize(m: np.ndarray) -> np.ndarray:
    m = 0.5 * (m + m.T)
    if m.size and np.linalg.eigvalsh(m).min() < -1e-9:
        raise NumericalError("covariance matrix is not positive semidefinite")
    return m


def _probe_arrays(probes: Sequence[CovProbe], window: ValidityWindow | None):
    if not probes:
        raise DomainError("need at least one probe")
    for p in probes:
        if window is not None:
            window.check(p.index, p.r_D, p.r_Dbar)
        elif not (0 < p.index < 1 and 0 < p.r_D <= 1 and 0 < p.r_Dbar <= 1):
            raise DomainError(f"invalid probe {p}")
    idx = np.array([p.index for p in probes], float)
    r_D = np.array([p.r_D for p in probes], float)
    r_Dbar = np.array([p.r_Dbar for p in probes], float)
    return idx, r_D, r_Dbar


def _realised_arrays(shape: StudyShape, r_D: np.ndarray, r_Dbar: np.ndarray):
    pairs = [shape.realised(a, b) for a, b in zip(r_D, r_Dbar)]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


# --------------------------------------------------------------------------
# ROC curve indexed by FPF


def _roc_terms(model: MarkerModel, t: np.ndarray):
    roc = np.array([roc_true(model, ti) for ti in t])
    q = np.empty_like(t)
    for i, ti in enumerate(t):
        x = model.ppf_Dbar(1 - ti)
        fD, fDbar = model.pdf_D(x), model.pdf_Dbar(x)
        if not fDbar > 0 or not math.isfinite(fD / fDbar):
            raise NumericalError(f"density ratio unbounded at t={ti}")
        q[i] = fD / fDbar
    return roc, q


def _roc_process(roc, q, t, r_D, r_Dbar, lam):
    case_part = _kiefer_matrix(roc, r_D)
    scale = q * r_D / r_Dbar
    control_part = lam * np.outer(scale, scale) * _kiefer_matrix(t, r_Dbar)
    return case_part + control_part


def roc_process_cov(
    model: MarkerModel,
    probes: Sequence[CovProbe],
    lam: float,
    window: ValidityWindow | None = DEFAULT_WINDOW,
) -> np.ndarray:
    """Covariance of the limit of ``R_{r_D, r_Dbar}(t)`` across probes."""
    if lam < 0:
        raise DomainError("lam must be nonnegative")
    t, r_D, r_Dbar = _probe_arrays(probes, window)
    roc, q = _roc_terms(model, t)
    return _finalize(_roc_process(roc, q, t, r_D, r_Dbar, lam))


def roc_estimator_cov(
    model: MarkerModel,
    probes: Sequence[CovProbe],
    shape: StudyShape,
    window: ValidityWindow | None = DEFAULT_WINDOW,
) -> np.ndarray:
    """Covariance of the ROC estimates themselves for a study of ``shape``."""
    t, r_D, r_Dbar = _probe_arrays(probes, window)
    e_D, e_Dbar = _realised_arrays(shape, r_D, r_Dbar)
    roc, q = _roc_terms(model, t)
    case_part = _kiefer_matrix(roc, e_D) / (shape.n_D * np.outer(e_D, e_D))
    control_part = (
        np.outer(q, q) * _kiefer_matrix(t, e_Dbar) / (shape.n_Dbar * np.outer(e_Dbar, e_Dbar))
    )
    return _finalize(case_part + control_part)


def ppv_fpf_delta(roc_value: float, t: float, rho: float) -> float:
    """Derivative of PPV(t) with respect to ROC(t)."""
    return t * (1 - rho) * rho / (roc_value * rho + t * (1 - rho)) ** 2


def npv_fpf_delta(roc_value: float, t: float, rho: float) -> float:
    """Derivative of NPV(t) with respect to ROC(t)."""
    return (1 - t) * (1 - rho) * rho / ((1 - roc_value) * rho + (1 - t) * (1 - rho)) ** 2


def _deltas(model, rho, probes, fn):
    return np.array([fn(roc_true(model, p.index), p.index, rho) for p in probes])


def ppv_fpf_process_cov(model, rho, probes, lam, window=DEFAULT_WINDOW) -> np.ndarray:
    """Covariance of the limit of the scaled PPV-by-FPF process."""
    d = _deltas(model, rho, probes, ppv_fpf_delta)
    return _finalize(np.outer(d, d) * roc_process_cov(model, probes, lam, window))


def ppv_fpf_cov(model, rho, probes, shape, window=DEFAULT_WINDOW) -> np.ndarray:
    d = _deltas(model, rho, probes, ppv_fpf_delta)
    return _finalize(np.outer(d, d) * roc_estimator_cov(model, probes, shape, window))


def npv_fpf_cov(model, rho, probes, shape, window=DEFAULT_WINDOW) -> np.ndarray:
    d = _deltas(model, rho, probes, npv_fpf_delta)
    return _finalize(np.outer(d, d) * roc_estimator_cov(model, probes, shape, window))


# --------------------------------------------------------------------------
# PPV / NPV curves indexed by population percentile


@dataclass(frozen=True)
class PercentilePoint:
    """Everything the percentile-indexed formulas need at one ``u``."""

    u: float
    rho: float
    x: float  # F^{-1}(u)
    F_D: float
    F_Dbar: float
    g_D: float  # f_D / f at x
    g_Dbar: float  # f_Dbar / f at x
    ppv: float
    npv: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "npv", npv_from_ppv(self.ppv, self.u, self.rho))


def percentile_point(model: MarkerModel, rho: float, u: float) -> PercentilePoint:
    if not 0 < u < 1:
        raise DomainError(f"u must lie in (0, 1), got {u!r}")
    if not 0 < rho < 1:
        raise DomainError(f"rho must lie in (0, 1), got {rho!r}")
    x = model.mixture_ppf(rho, u)
    fD, fDbar = model.pdf_D(x), model.pdf_Dbar(x)
    f = rho * fD + (1 - rho) * fDbar
    if not f > 0:
        raise NumericalError(f"mixture density vanishes at F^-1({u})")
    F_D = model.cdf_D(x)
    return PercentilePoint(
        u=u,
        rho=rho,
        x=x,
        F_D=F_D,
        F_Dbar=model.cdf_Dbar(x),
        g_D=fD / f,
        g_Dbar=fDbar / f,
        ppv=(1.0 - F_D) * rho / (1 - u),
    )


def ppv_pct_process_cov(
    model: MarkerModel,
    rho: float,
    probes: Sequence[CovProbe],
    lam: float,
    window: ValidityWindow | None = DEFAULT_WINDOW,
) -> np.ndarray:
    """Covariance of the limit of ``P_{r_D, r_Dbar}(u)`` (two Kiefer processes)."""
    u, r_D, r_Dbar = _probe_arrays(probes, window)
    pts = [percentile_point(model, rho, ui) for ui in u]
    amp = np.array([rho * (1 - rho) / (1 - p.u) for p in pts])
    case_w = amp * np.array([p.g_Dbar for p in pts])
    ctrl_w = amp * np.array([p.g_D for p in pts]) * r_D / r_Dbar
    F_D = np.array([p.F_D for p in pts])
    F_Dbar = np.array([p.F_Dbar for p in pts])
    m = np.outer(case_w, case_w) * _kiefer_matrix(F_D, r_D)
    m += lam * np.outer(ctrl_w, ctrl_w) * _kiefer_matrix(F_Dbar, r_Dbar)
    return _finalize(m)


def ppv_pct_var(
    model: MarkerModel,
    rho: float,
    u: float,
    r_D: float,
    r_Dbar: float,
    shape: StudyShape,
    ppv: float | None = None,
    window: ValidityWindow | None = DEFAULT_WINDOW,
) -> float:
    """Variance of the sequential PPV estimate at percentile ``u``.

    Written in terms of PPV(u) and the density ratios at ``F^{-1}(u)``.
    Passing ``ppv`` evaluates the same expression at a hypothesised PPV
    value while keeping the model's density ratios (null standard errors).
    """
    if window is not None:
        window.check(u, r_D, r_Dbar)
    pt = percentile_point(model, rho, u)
    e_D, e_Dbar = shape.realised(r_D, r_Dbar)
    p = pt.ppv if ppv is None else ppv
    case_term = (pt.g_Dbar * (1 - rho)) ** 2 * p * (rho / (1 - u) - p) / (shape.n_D * e_D)
    ctrl_term = (
        (pt.g_D * rho) ** 2 * (1 - p) * ((u - rho) / (1 - u) + p) / (shape.n_Dbar * e_Dbar)
    )
    return case_term + ctrl_term


def npv_pct_var(
    model: MarkerModel,
    rho: float,
    u: float,
    r_D: float,
    r_Dbar: float,
    shape: StudyShape,
    npv: float | None = None,
    window: ValidityWindow | None = DEFAULT_WINDOW,
) -> float:
    """Variance of the sequential NPV estimate at percentile ``u``."""
    if window is not None:
        window.check(u, r_D, r_Dbar)
    pt = percentile_point(model, rho, u)
    e_D, e_Dbar = shape.realised(r_D, r_Dbar)
    n = pt.npv if npv is None else npv
    case_term = (pt.g_Dbar * (1 - rho)) ** 2 * (n + (rho - u) / u) * (1 - n) / (shape.n_D * e_D)
    ctrl_term = (pt.g_D * rho) ** 2 * n * ((1 - rho) / u - n) / (shape.n_Dbar * e_Dbar)
    return case_term + ctrl_term


def ppv_pct_var_kiefer(model, rho, u, r_D, r_Dbar, shape, window=DEFAULT_WINDOW) -> float:
    """Same variance, evaluated from ``F_D(F^{-1}(u))`` and ``F_Dbar(F^{-1}(u))``."""
    if window is not None:
        window.check(u, r_D, r_Dbar)
    pt = percentile_point(model, rho, u)
    e_D, e_Dbar = shape.realised(r_D, r_Dbar)
    amp2 = (rho * (1 - rho) / (1 - u)) ** 2
    return amp2 * (
        pt.g_Dbar**2 * pt.F_D * (1 - pt.F_D) / (shape.n_D * e_D)
        + pt.g_D**2 * pt.F_Dbar * (1 - pt.F_Dbar) / (shape.n_Dbar * e_Dbar)
    )


def _ppv_pair(p1: PercentilePoint, e1, p2: PercentilePoint, e2, shape: StudyShape) -> float:
    # Branch u1 <= u2: the lower percentile contributes NPV, the upper one PPV.
    rho = p1.rho
    (eD1, eDb1), (eD2, eDb2) = e1, e2
    lo, hi = (p1, p2) if p1.u <= p2.u else (p2, p1)
    lead = lo.u / (1 - lo.u)
    case_term = (
        (1 - rho) ** 2 * lead * p1.g_Dbar * p2.g_Dbar
        * min(eD1, eD2) * (1 - lo.npv) * hi.ppv / (shape.n_D * eD1 * eD2)
    )
    ctrl_term = (
        rho**2 * lead * p1.g_D * p2.g_D
        * min(eDb1, eDb2) * lo.npv * (1 - hi.ppv) / (shape.n_Dbar * eDb1 * eDb2)
    )
    return case_term + ctrl_term


def ppv_pct_cov(
    model: MarkerModel,
    rho: float,
    probes: Sequence[CovProbe],
    shape: StudyShape,
    window: ValidityWindow | None = DEFAULT_WINDOW,
) -> np.ndarray:
    """Covariance matrix of PPV estimates at several percentiles and views."""
    u, r_D, r_Dbar = _probe_arrays(probes, window)
    pts = [percentile_point(model, rho, ui) for ui in u]
    real = [shape.realised(a, b) for a, b in zip(r_D, r_Dbar)]
    k = len(pts)
    m = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            m[i, j] = _ppv_pair(pts[i], real[i], pts[j], real[j], shape)
    return _finalize(m)


def npv_pct_cov(model, rho, probes, shape, window=DEFAULT_WINDOW) -> np.ndarray:
    scale = np.array([(1 - p.index) / p.index for p in probes])
    return _finalize(np.outer(scale, scale) * ppv_pct_cov(model, rho, probes, shape, window))


def ppv_npv_cross_cov(
    model: MarkerModel,
    rho: float,
    u1: float,
    u2: float,
    views: tuple[SequentialView, SequentialView],
    shape: StudyShape,
    window: ValidityWindow | None = DEFAULT_WINDOW,
) -> float:
    """Covariance of the PPV estimate at ``u1`` and the NPV estimate at ``u2``."""
    v1, v2 = views
    for u, v in ((u1, v1), (u2, v2)):
        if window is not None:
            window.check(u, v.r_D, v.r_Dbar)
    p1, p2 = percentile_point(model, rho, u1), percentile_point(model, rho, u2)
    (eD1, eDb1) = shape.realised(v1.r_D, v1.r_Dbar)
    (eD2, eDb2) = shape.realised(v2.r_D, v2.r_Dbar)
    mD = min(eD1, eD2) / (shape.n_D * eD1 * eD2)
    mDb = min(eDb1, eDb2) / (shape.n_Dbar * eDb1 * eDb2)
    gB = p1.g_Dbar * p2.g_Dbar
    gD = p1.g_D * p2.g_D
    if u1 <= u2:
        lead = u1 * (1 - u2) / ((1 - u1) * u2)
        return lead * (
            (1 - rho) ** 2 * gB * mD * (1 - p1.npv) * p2.ppv
            + rho**2 * gD * mDb * p1.npv * (1 - p2.ppv)
        )
    return (
        (1 - rho) ** 2 * gB * mD * (1 - p2.npv) * p1.ppv
        + rho**2 * gD * mDb * p2.npv * (1 - p1.ppv)
    )


# --------------------------------------------------------------------------
# Kernel plug-in densities


def silverman_bandwidth(x: np.ndarray) -> float:
    """Silverman's rule of thumb ``0.9 * min(sd, IQR / 1.34) * n^{-1/5}``."""
    x = np.asarray(x, float)
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    if not spread > 0:
        raise NumericalError("cannot choose a bandwidth for a constant sample")
    return 0.9 * spread * x.size ** (-0.2)


class KernelModel(MarkerModel):
    """Gaussian-kernel smoothed case and control distributions."""

    def __init__(self, cases, controls, bw_D: float, bw_Dbar: float, metadata: dict):
        self.cases = np.asarray(cases, float)
        self.controls = np.asarray(controls, float)
        self.bw_D = float(bw_D)
        self.bw_Dbar = float(bw_Dbar)
        self.metadata = metadata

    def _bracket(self):
        lo = min(self.cases.min() - 10 * self.bw_D, self.controls.min() - 10 * self.bw_Dbar)
        hi = max(self.cases.max() + 10 * self.bw_D, self.controls.max() + 10 * self.bw_Dbar)
        return lo, hi

    def cdf_D(self, x):
        return float(special.ndtr((x - self.cases) / self.bw_D).mean())

    def cdf_Dbar(self, x):
        return float(special.ndtr((x - self.controls) / self.bw_Dbar).mean())

    def pdf_D(self, x):
        z = (x - self.cases) / self.bw_D
        return float(np.exp(-0.5 * z * z).mean() / (math.sqrt(2 * math.pi) * self.bw_D))

    def pdf_Dbar(self, x):
        z = (x - self.controls) / self.bw_Dbar
        return float(np.exp(-0.5 * z * z).mean() / (math.sqrt(2 * math.pi) * self.bw_Dbar))


def kernel_density_plugin(
    sample: MarkerSample,
    view: SequentialView = SequentialView(),
    bandwidth_rule: str | float | tuple[float, float] = "silverman",
) -> KernelModel:
    """Fit per-arm Gaussian kernel densities to the prefixes visible at ``view``.

    ``bandwidth_rule`` is ``"silverman"``, a single bandwidth for both arms,
    or a ``(case, control)`` pair. The chosen values are echoed verbatim in
    ``model.metadata``.
    """
    cases, controls = sample.prefixes(view)
    if cases.size < 10 or controls.size < 10:
        raise DomainError("kernel plug-in needs at least 10 observations per arm")
    if bandwidth_rule == "silverman":
        bw_D, bw_Dbar = silverman_bandwidth(cases), silverman_bandwidth(controls)
        rule = "silverman"
    elif isinstance(bandwidth_rule, tuple):
        bw_D, bw_Dbar = bandwidth_rule
        rule = "fixed"
    else:
        bw_D = bw_Dbar = bandwidth_rule
        rule = "fixed"
    if not (bw_D > 0 and bw_Dbar > 0):
        raise DomainError("bandwidths must be positive")
    metadata = {
        "density_estimator": "gaussian kernel plug-in (not from the limit theory)",
        "bandwidth_rule": rule,
        "bw_D": bw_D,
        "bw_Dbar": bw_Dbar,
        "n_D": int(cases.size),
        "n_Dbar": int(controls.size),
    }
    return KernelModel(cases, controls, bw_D, bw_Dbar, metadata)
