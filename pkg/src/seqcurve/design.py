"""Group-sequential design with co-primary NPV and PPV endpoints.

The endpoints are ``NPV(u_npv)`` and ``PPV(u_ppv)`` estimated from a
case-control study. Each has its own one-sided test; the null hypothesis
is rejected only when both statistics cross their efficacy boundary, and the
study stops for futility as soon as either statistic falls below its futility
boundary.

Boundaries come from Hwang-Shih-DeCani error spending on the canonical
independent-increments Gaussian sequence (recursive numerical integration).
The fixed-sample size solves the joint (bivariate normal) power equation and
the maximum group-sequential size multiplies it by the inflation factor of
the canonical design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import optimize, special

from .asymptotics import NumericalError, StudyShape, npv_pct_var, ppv_npv_cross_cov, ppv_pct_var
from .curves import BinormalModel, MarkerModel, npv_pct, npv_pct_true, ppv_pct, ppv_pct_true
from .empirical import (
    DomainError,
    MarkerSample,
    SequentialView,
    batch_count_le,
    batch_mixture_quantile,
    batch_prefix_sort,
    prefix_length,
)
from .rng import run_blocks

__all__ = [
    "ConfigError",
    "GSDesignSpec",
    "Boundaries",
    "FixedDesign",
    "MaxSampleSize",
    "OperatingCharacteristics",
    "hsd_spend",
    "calibrate_binormal",
    "design_models",
    "z_statistics",
    "bvn_upper_orthant",
    "joint_power",
    "boundaries_from_spending",
    "crossing_probabilities",
    "fixed_sample_size",
    "max_sample_size",
    "decide",
    "simulate_oc",
    "with_looks",
]


class ConfigError(DomainError):
    """Inconsistent design configuration."""


@dataclass(frozen=True)
class GSDesignSpec:
    """Design inputs.

    ``alpha`` follows the two-sided convention: each statistic is compared
    with ``z_{1 - alpha/2}``. ``null_se_model`` picks the model whose density
    ratios enter the null standard errors (``"alternative"`` or ``"null"``);
    the hypothesised null value is always plugged in.
    """

    rho: float = 0.2
    u_npv: float = 0.6
    u_ppv: float = 0.9
    npv0: float = 0.90
    ppv0: float = 0.80
    npv1: float = 0.95
    ppv1: float = 0.90
    alpha: float = 0.05
    power: float = 0.90
    looks: int = 1
    fractions: tuple[float, ...] | None = None
    gamma_e: float = -4.0
    gamma_f: float | None = -2.0
    controls_per_case: float = 1.0
    binding: bool = True
    null_se_model: str = "alternative"

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ConfigError("rho must lie in (0, 1)")
        if not (0 < self.u_npv < 1 and 0 < self.u_ppv < 1):
            raise ConfigError("percentiles must lie in (0, 1)")
        if not 0 < self.npv0 < self.npv1 < 1:
            raise ConfigError("need 0 < npv0 < npv1 < 1")
        if not 0 < self.ppv0 < self.ppv1 < 1:
            raise ConfigError("need 0 < ppv0 < ppv1 < 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0.5 < self.power < 1:
            raise ConfigError("power must lie in (0.5, 1)")
        if int(self.looks) != self.looks or self.looks < 1:
            raise ConfigError("looks must be a positive integer")
        if self.controls_per_case <= 0:
            raise ConfigError("controls_per_case must be positive")
        if self.null_se_model not in ("alternative", "null"):
            raise ConfigError("null_se_model must be 'alternative' or 'null'")
        if self.fractions is not None:
            fr = tuple(float(f) for f in self.fractions)
            if len(fr) != self.looks:
                raise ConfigError("need one information fraction per look")
            if any(b <= a for a, b in zip(fr, fr[1:])) or fr[0] <= 0 or fr[-1] != 1.0:
                raise ConfigError("fractions must increase strictly and end at 1")
            object.__setattr__(self, "fractions", fr)

    @property
    def alpha_one_sided(self) -> float:
        return self.alpha / 2

    @property
    def beta(self) -> float:
        return 1 - self.power

    @property
    def info_fractions(self) -> np.ndarray:
        if self.fractions is not None:
            return np.asarray(self.fractions)
        return np.arange(1, self.looks + 1) / self.looks

    def n_controls(self, n_D: int) -> int:
        return max(1, int(round(n_D * self.controls_per_case)))


@dataclass
class Boundaries:
    """Per-look z thresholds shared by the NPV and PPV statistics.

    Both statistics are tested at the same one-sided level with the same
    spending functions, so one pair of sequences serves both.
    """

    fractions: np.ndarray
    efficacy: np.ndarray
    futility: np.ndarray
    drift: float
    binding: bool
    alpha_spend: np.ndarray
    beta_spend: np.ndarray
    statistics: tuple[str, str] = ("npv", "ppv")

    def as_dict(self) -> dict:
        return {
            "fractions": self.fractions.tolist(),
            "efficacy": self.efficacy.tolist(),
            "futility": self.futility.tolist(),
            "drift": self.drift,
            "binding": self.binding,
            "alpha_spend": self.alpha_spend.tolist(),
            "beta_spend": self.beta_spend.tolist(),
        }


@dataclass
class FixedDesign:
    n_D: int
    n_Dbar: int
    power: float
    correlation: float
    mean_z: tuple[float, float]  # (npv, ppv) under the alternative
    sd_z: tuple[float, float]


@dataclass
class MaxSampleSize:
    n_fixed: int
    inflation: float
    n_max: int
    boundaries: Boundaries


@dataclass
class OperatingCharacteristics:
    label: str
    p_reject: float
    expected_n_D: float
    max_n_D: int
    stop_probs: np.ndarray
    reject_probs: np.ndarray
    reps: int
    seed: int
    paths: dict | None = field(default=None, repr=False)

    @property
    def se_reject(self) -> float:
        return math.sqrt(self.p_reject * (1 - self.p_reject) / self.reps)


# --------------------------------------------------------------------------
# spending and calibration


def hsd_spend(gamma: float, s, total: float):
    """Hwang-Shih-DeCani cumulative spend at information fraction ``s``."""
    s = np.asarray(s, float)
    if np.any((s < 0) | (s > 1)):
        raise DomainError("information fraction must lie in [0, 1]")
    if gamma == 0:
        out = total * s
    else:
        out = total * -np.expm1(-gamma * s) / -np.expm1(-gamma)
    return float(out) if out.ndim == 0 else out


def calibrate_binormal(
    rho: float, u_npv: float, npv_target: float, u_ppv: float, ppv_target: float, tol: float = 1e-9
) -> BinormalModel:
    """Binormal model (controls standard normal) hitting both targets.

    Solved for ``(mu_D, log sigma_D)`` by damped Newton; if that stalls, a
    nested bisection (inner on ``mu_D``, outer on ``sigma_D``) takes over.
    """
    if abs(ppv_target - rho) <= tol and abs(npv_target - (1 - rho)) <= tol:
        return BinormalModel(0.0, 1.0)
    if not (npv_target > 1 - rho and ppv_target > rho and npv_target < 1 and ppv_target < 1):
        raise ConfigError(
            f"no binormal model attains NPV={npv_target}, PPV={ppv_target} at rho={rho}"
        )

    def resid(p):
        m = BinormalModel(p[0], math.exp(p[1]))
        return np.array(
            [npv_pct_true(m, rho, u_npv) - npv_target, ppv_pct_true(m, rho, u_ppv) - ppv_target]
        )

    p = np.array([1.0, 0.0])
    r = resid(p)
    for _ in range(100):
        if np.max(np.abs(r)) <= tol:
            return BinormalModel(float(p[0]), math.exp(p[1]))
        jac = np.empty((2, 2))
        for j in range(2):
            h = 1e-6
            dp = p.copy()
            dp[j] += h
            jac[:, j] = (resid(dp) - r) / h
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        while lam > 1e-4:
            cand = p + lam * step
            rc = resid(cand)
            if np.all(np.isfinite(rc)) and np.max(np.abs(rc)) < np.max(np.abs(r)):
                p, r = cand, rc
                break
            lam /= 2
        else:
            break
    return _calibrate_bisection(rho, u_npv, npv_target, u_ppv, ppv_target, tol)


def _calibrate_bisection(rho, u_npv, npv_target, u_ppv, ppv_target, tol):
    def mu_for(sigma):
        f = lambda mu: ppv_pct_true(BinormalModel(mu, sigma), rho, u_ppv) - ppv_target
        return optimize.brentq(f, -50, 50, xtol=1e-14)

    def g(log_sigma):
        sigma = math.exp(log_sigma)
        return npv_pct_true(BinormalModel(mu_for(sigma), sigma), rho, u_npv) - npv_target

    try:
        ls = optimize.brentq(g, -5, 5, xtol=1e-14)
    except ValueError:
        raise ConfigError(
            f"no binormal model attains NPV={npv_target}, PPV={ppv_target} at rho={rho}"
        ) from None
    model = BinormalModel(mu_for(math.exp(ls)), math.exp(ls))
    res = max(
        abs(npv_pct_true(model, rho, u_npv) - npv_target),
        abs(ppv_pct_true(model, rho, u_ppv) - ppv_target),
    )
    if res > tol:
        raise NumericalError(f"calibration residual {res:.3e} exceeds {tol:.0e}")
    return model


def design_models(spec: GSDesignSpec) -> tuple[BinormalModel, BinormalModel]:
    """Calibrated ``(null, alternative)`` models."""
    null = calibrate_binormal(spec.rho, spec.u_npv, spec.npv0, spec.u_ppv, spec.ppv0)
    alt = calibrate_binormal(spec.rho, spec.u_npv, spec.npv1, spec.u_ppv, spec.ppv1)
    return null, alt


def _se_model(spec: GSDesignSpec) -> MarkerModel:
    null, alt = design_models(spec)
    return alt if spec.null_se_model == "alternative" else null


def _null_sds(spec, se_model, shape: StudyShape, r_D: float, r_Dbar: float):
    s_npv = npv_pct_var(se_model, spec.rho, spec.u_npv, r_D, r_Dbar, shape, npv=spec.npv0)
    s_ppv = ppv_pct_var(se_model, spec.rho, spec.u_ppv, r_D, r_Dbar, shape, ppv=spec.ppv0)
    return math.sqrt(s_npv), math.sqrt(s_ppv)


def z_statistics(
    sample: MarkerSample,
    view: SequentialView,
    spec: GSDesignSpec,
    se_model: MarkerModel | None = None,
) -> tuple[float, float]:
    """``(Z_npv, Z_ppv)`` for the data visible at ``view``.

    Standard errors are the null-hypothesis ones for the study size of
    ``sample`` at the realised accrual fractions.
    """
    se_model = _se_model(spec) if se_model is None else se_model
    shape = StudyShape(sample.n_D, sample.n_Dbar)
    sd_npv, sd_ppv = _null_sds(spec, se_model, shape, view.r_D, view.r_Dbar)
    z_npv = (npv_pct(sample, view, spec.rho, spec.u_npv) - spec.npv0) / sd_npv
    z_ppv = (ppv_pct(sample, view, spec.rho, spec.u_ppv) - spec.ppv0) / sd_ppv
    return z_npv, z_ppv


# --------------------------------------------------------------------------
# bivariate normal and joint power

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(61)
_TAIL = 9.0


def _gl(a: float, b: float, fn) -> float:
    if b <= a:
        return 0.0
    x = 0.5 * (b - a) * _GL_NODES + 0.5 * (b + a)
    return 0.5 * (b - a) * float(np.dot(_GL_WEIGHTS, fn(x)))


def _phi(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def bvn_upper_orthant(h: float, k: float, r: float) -> float:
    """``P(X > h, Y > k)`` for standard bivariate normal with correlation ``r``.

    Integrates ``phi(x) Phi((r x - k) / sqrt(1 - r^2))`` over ``x > h`` with
    61-node Gauss-Legendre panels, split where the inner argument changes
    sign.
    """
    if not -1 <= r <= 1:
        raise DomainError("correlation must lie in [-1, 1]")
    if r == 1:
        return float(special.ndtr(-max(h, k)))
    if r == -1:
        return float(max(0.0, special.ndtr(-h) - special.ndtr(k)))
    s = math.sqrt(1 - r * r)
    lo = max(h, -_TAIL)
    hi = _TAIL
    fn = lambda x: _phi(x) * special.ndtr((r * x - k) / s)
    cuts = [lo, hi]
    if r != 0 and lo < k / r < hi:
        cuts.insert(1, k / r)
    # narrow kink regions need extra panels
    pieces = []
    for a, b in zip(cuts, cuts[1:]):
        n = max(1, int(math.ceil((b - a) / max(4 * s, 0.5))))
        edges = np.linspace(a, b, n + 1)
        pieces.extend(zip(edges, edges[1:]))
    return float(min(1.0, max(0.0, sum(_gl(a, b, fn) for a, b in pieces))))


def joint_power(mean: Sequence[float], sd: Sequence[float], corr: float, crit: float) -> float:
    """``P(Z_1 > crit, Z_2 > crit)`` for ``Z_i ~ N(mean_i, sd_i^2)``."""
    h = (crit - mean[0]) / sd[0]
    k = (crit - mean[1]) / sd[1]
    return bvn_upper_orthant(h, k, corr)


def _design_moments(spec, null_se: MarkerModel, alt: MarkerModel, n_D: int, corr=None):
    shape = StudyShape(n_D, spec.n_controls(n_D))
    sd0_npv, sd0_ppv = _null_sds(spec, null_se, shape, 1.0, 1.0)
    sd1_npv = math.sqrt(npv_pct_var(alt, spec.rho, spec.u_npv, 1.0, 1.0, shape))
    sd1_ppv = math.sqrt(ppv_pct_var(alt, spec.rho, spec.u_ppv, 1.0, 1.0, shape))
    if corr is None:
        full = (SequentialView(), SequentialView())
        cov = ppv_npv_cross_cov(alt, spec.rho, spec.u_ppv, spec.u_npv, full, shape)
        corr = cov / (sd1_npv * sd1_ppv)
    mean = ((spec.npv1 - spec.npv0) / sd0_npv, (spec.ppv1 - spec.ppv0) / sd0_ppv)
    sd = (sd1_npv / sd0_npv, sd1_ppv / sd0_ppv)
    return mean, sd, float(corr)


def fixed_sample_size(
    spec: GSDesignSpec, correlation: float | None = None, n_cap: int = 10**7
) -> FixedDesign:
    """Smallest ``n_D`` whose joint rejection probability reaches ``spec.power``.

    ``correlation`` overrides the model-based correlation of the two
    statistics (e.g. 0 for an independence bound).
    """
    null, alt = design_models(spec)
    null_se = alt if spec.null_se_model == "alternative" else null
    crit = float(special.ndtri(1 - spec.alpha_one_sided))

    def pw(n):
        mean, sd, corr = _design_moments(spec, null_se, alt, n, correlation)
        return joint_power(mean, sd, corr, crit)

    hi = 2
    while pw(hi) < spec.power:
        hi *= 2
        if hi > n_cap:
            raise NumericalError("target power is unreachable for this design")
    lo = max(1, hi // 2)
    if pw(lo) >= spec.power:
        return _fixed(spec, null_se, alt, lo, correlation, crit)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pw(mid) >= spec.power:
            hi = mid
        else:
            lo = mid
    return _fixed(spec, null_se, alt, hi, correlation, crit)


def _fixed(spec, null_se, alt, n, correlation, crit):
    mean, sd, corr = _design_moments(spec, null_se, alt, n, correlation)
    return FixedDesign(
        n_D=n,
        n_Dbar=spec.n_controls(n),
        power=joint_power(mean, sd, corr, crit),
        correlation=corr,
        mean_z=mean,
        sd_z=sd,
    )


# --------------------------------------------------------------------------
# recursive integration for the canonical sequence


def _grid(mean: float, lo: float, hi: float, r: int = 18):
    """Jennison-Turnbull grid on ``[lo, hi]`` with Simpson weights."""
    i = np.arange(1, 6 * r)
    x = np.where(
        i < r,
        mean - 3 - 4 * np.log(r / i),
        np.where(i <= 5 * r, mean - 3 + 3 * (i - r) / (2 * r), mean + 3 + 4 * np.log(r / np.maximum(6 * r - i, 1))),
    )
    x = x[(x > lo) & (x < hi)]
    parts = [x]
    if np.isfinite(lo):
        parts.insert(0, [lo])
    if np.isfinite(hi):
        parts.append([hi])
    x = np.concatenate(parts)
    z = np.empty(2 * x.size - 1)
    z[0::2] = x
    z[1::2] = 0.5 * (x[1:] + x[:-1])
    d = np.diff(x)
    w = np.zeros(z.size)
    w[0:-1:2] += d / 6
    w[2::2] += d / 6
    w[1::2] = 4 * d / 6
    return z, w


class _Sequence:
    """Sub-density of ``Z_k`` on the continuation region, look by look."""

    def __init__(self, drift: float, fractions: np.ndarray):
        self.drift = drift
        self.t = fractions
        self.z = self.w = self.h = None
        self.k = -1

    def _kernel_args(self, thr, k):
        tk, tp = self.t[k], self.t[k - 1]
        d = tk - tp
        return (thr * math.sqrt(tk) - self.z * math.sqrt(tp) - self.drift * d) / math.sqrt(d)

    def upper(self, k: int, thr: float) -> float:
        """``P(continue to look k, Z_k > thr)``."""
        if k == 0:
            return float(special.ndtr(self.drift * math.sqrt(self.t[0]) - thr))
        return float(np.sum(self.w * self.h * special.ndtr(-self._kernel_args(thr, k))))

    def lower(self, k: int, thr: float) -> float:
        if k == 0:
            return float(special.ndtr(thr - self.drift * math.sqrt(self.t[0])))
        return float(np.sum(self.w * self.h * special.ndtr(self._kernel_args(thr, k))))

    def advance(self, k: int, lo: float, hi: float) -> None:
        """Condition on ``lo < Z_k < hi`` and move to look ``k``."""
        tk = self.t[k]
        z, w = _grid(self.drift * math.sqrt(tk), lo, hi)
        if k == 0:
            h = _phi(z - self.drift * math.sqrt(tk))
        else:
            tp = self.t[k - 1]
            d = tk - tp
            arg = (
                z[:, None] * math.sqrt(tk) - self.z[None, :] * math.sqrt(tp) - self.drift * d
            ) / math.sqrt(d)
            h = (_phi(arg) * math.sqrt(tk / d)) @ (self.w * self.h)
        self.z, self.w, self.h, self.k = z, w, h, k


def _root(fn, lo=-12.0, hi=12.0) -> float:
    f_lo, f_hi = fn(lo), fn(hi)
    if f_lo * f_hi > 0:
        return lo if abs(f_lo) < abs(f_hi) else hi
    return optimize.brentq(fn, lo, hi, xtol=1e-12)


def _spends(cum: np.ndarray, what: str) -> np.ndarray:
    inc = np.diff(np.concatenate([[0.0], cum]))
    if np.any(inc < 0):
        raise ConfigError(f"{what} spending must be nondecreasing")
    return inc


def _bounds_for_drift(
    fractions, alpha_cum, beta_cum, drift, binding
) -> tuple[np.ndarray, np.ndarray, float]:
    """Boundaries for a given drift; returns the final-look beta mismatch."""
    K = fractions.size
    a_inc = _spends(alpha_cum, "alpha")
    b_inc = _spends(beta_cum, "beta") if beta_cum is not None else None
    eff = np.empty(K)
    fut = np.full(K, -np.inf)
    h0 = _Sequence(0.0, fractions)
    h1 = _Sequence(drift, fractions)
    for k in range(K):
        eff[k] = _root(lambda x: h0.upper(k, x) - a_inc[k])
        if b_inc is None:
            if k < K - 1:
                h0.advance(k, -np.inf, eff[k])
            continue
        if k == K - 1:
            fut[k] = eff[k]
            return eff, fut, h1.lower(k, eff[k]) - b_inc[k]
        fut[k] = min(_root(lambda x: h1.lower(k, x) - b_inc[k]), eff[k])
        h0.advance(k, fut[k] if binding else -np.inf, eff[k])
        h1.advance(k, fut[k], eff[k])
    return eff, fut, 0.0


def boundaries_from_spending(
    spec: GSDesignSpec,
    alpha_spend: Sequence[float] | None = None,
    beta_spend: Sequence[float] | None = None,
) -> Boundaries:
    """Efficacy and futility boundaries for the canonical design.

    By default spending follows Hwang-Shih-DeCani with ``spec.gamma_e`` and
    ``spec.gamma_f``; explicit cumulative spends can be passed instead. With
    futility the drift is solved so that the last futility and efficacy
    boundaries meet. Without futility (``gamma_f=None``) the drift is the one
    giving ``spec.power`` to the efficacy boundaries alone.
    """
    t = spec.info_fractions
    a1, beta = spec.alpha_one_sided, spec.beta
    alpha_cum = np.asarray(alpha_spend if alpha_spend is not None else hsd_spend(spec.gamma_e, t, a1))
    alpha_cum = np.atleast_1d(alpha_cum).astype(float)
    if alpha_cum.size != t.size:
        raise ConfigError("need one cumulative alpha spend per look")
    with_futility = beta_spend is not None or spec.gamma_f is not None
    if with_futility:
        beta_cum = np.atleast_1d(
            np.asarray(beta_spend if beta_spend is not None else hsd_spend(spec.gamma_f, t, beta), float)
        )
    else:
        beta_cum = None
    z_fix = float(special.ndtri(1 - a1) + special.ndtri(spec.power))

    if with_futility:
        if t.size == 1:
            drift = z_fix
        else:
            fn = lambda d: _bounds_for_drift(t, alpha_cum, beta_cum, d, spec.binding)[2]
            lo, hi = z_fix * 0.95, z_fix * 1.05
            while fn(hi) > 0:
                hi *= 1.1
            drift = optimize.brentq(fn, lo, hi, xtol=1e-10)
        eff, fut, _ = _bounds_for_drift(t, alpha_cum, beta_cum, drift, spec.binding)
    else:
        eff, fut, _ = _bounds_for_drift(t, alpha_cum, None, 0.0, False)
        fn = lambda d: _upper_power(t, eff, d) - spec.power
        drift = optimize.brentq(fn, 0.5 * z_fix, 2 * z_fix, xtol=1e-10) if t.size > 1 else z_fix
        beta_cum = np.zeros_like(t)
    return Boundaries(
        fractions=t,
        efficacy=eff,
        futility=fut,
        drift=float(drift),
        binding=spec.binding,
        alpha_spend=alpha_cum,
        beta_spend=beta_cum,
    )


def _upper_power(t, eff, drift) -> float:
    seq = _Sequence(drift, t)
    total = 0.0
    for k in range(t.size):
        total += seq.upper(k, eff[k])
        if k < t.size - 1:
            seq.advance(k, -np.inf, eff[k])
    return total


def crossing_probabilities(b: Boundaries, drift: float = 0.0, use_futility: bool = True):
    """Per-look probabilities of first crossing the efficacy / futility boundary."""
    t = b.fractions
    seq = _Sequence(drift, t)
    up, down = np.zeros(t.size), np.zeros(t.size)
    for k in range(t.size):
        lo = b.futility[k] if use_futility else -np.inf
        up[k] = seq.upper(k, b.efficacy[k])
        if np.isfinite(lo):
            down[k] = seq.lower(k, lo)
        if k < t.size - 1:
            seq.advance(k, lo, b.efficacy[k])
    return up, down


def max_sample_size(spec: GSDesignSpec, fixed: FixedDesign | None = None) -> MaxSampleSize:
    """Fixed-sample size times the inflation factor, rounded up."""
    fixed = fixed_sample_size(spec) if fixed is None else fixed
    b = boundaries_from_spending(spec)
    if spec.looks == 1:
        return MaxSampleSize(fixed.n_D, 1.0, fixed.n_D, b)
    z_fix = float(special.ndtri(1 - spec.alpha_one_sided) + special.ndtri(spec.power))
    infl = (b.drift / z_fix) ** 2
    return MaxSampleSize(fixed.n_D, infl, int(math.ceil(fixed.n_D * infl - 1e-9)), b)


# --------------------------------------------------------------------------
# operating characteristics


def decide(z_npv: np.ndarray, z_ppv: np.ndarray, b: Boundaries):
    """Apply the joint stopping rule to Z paths of shape ``(reps, looks)``.

    Returns ``(reject, stop_look)`` with zero-based ``stop_look``. Efficacy
    needs both statistics over the boundary; futility needs either below it;
    the last look always stops.
    """
    z_npv = np.atleast_2d(z_npv)
    z_ppv = np.atleast_2d(z_ppv)
    reps, K = z_npv.shape
    reject = np.zeros(reps, bool)
    stop = np.full(reps, K - 1)
    alive = np.ones(reps, bool)
    for k in range(K):
        eff = (z_npv[:, k] >= b.efficacy[k]) & (z_ppv[:, k] >= b.efficacy[k])
        if k == K - 1:
            fut = ~eff
        else:
            fut = (z_npv[:, k] < b.futility[k]) | (z_ppv[:, k] < b.futility[k])
        now = alive & (eff | fut)
        reject |= alive & eff
        stop[now] = k
        alive &= ~now
    return reject, stop


def _batch_estimates(sc, sb, rho, u_npv, u_ppv):
    k_D = sc.shape[1]

    def ppv_at(u):
        x = batch_mixture_quantile(sc, sb, rho, u)
        return rho * (1 - batch_count_le(sc, x) / k_D) / (1 - u)

    p = ppv_at(u_ppv)
    n = (u_npv - rho) / u_npv + (1 - u_npv) / u_npv * ppv_at(u_npv)
    return n, p


def simulate_oc(
    spec: GSDesignSpec,
    truth: MarkerModel | tuple[float, float],
    reps: int,
    seed: int,
    n_max: int | None = None,
    threads: int | None = None,
    keep_paths: bool = False,
    label: str | None = None,
) -> OperatingCharacteristics:
    """Simulated rejection rate and expected number of cases.

    ``truth`` is a binormal model or an ``(NPV, PPV)`` target pair that is
    calibrated first. ``n_max`` defaults to the design's maximum size.
    """
    if isinstance(truth, tuple):
        label = label or f"NPV={truth[0]:g},PPV={truth[1]:g}"
        truth = calibrate_binormal(spec.rho, spec.u_npv, truth[0], spec.u_ppv, truth[1])
    if not isinstance(truth, BinormalModel):
        raise DomainError("operating characteristics are simulated from binormal truths")
    b = boundaries_from_spending(spec)
    if n_max is None:
        n_max = max_sample_size(spec).n_max
    n_ctrl = spec.n_controls(n_max)
    se_model = _se_model(spec)
    shape = StudyShape(n_max, n_ctrl)
    t = spec.info_fractions
    k_D = [prefix_length(f, n_max) for f in t]
    k_Dbar = [prefix_length(f, n_ctrl) for f in t]
    sds = [_null_sds(spec, se_model, shape, f, f) for f in t]

    def block(rng, size):
        cases, controls = truth.sample(rng, n_max, n_ctrl, reps=size)
        zn = np.empty((size, t.size))
        zp = np.empty((size, t.size))
        for k in range(t.size):
            sc = batch_prefix_sort(cases, k_D[k])
            sb = batch_prefix_sort(controls, k_Dbar[k])
            npv_hat, ppv_hat = _batch_estimates(sc, sb, spec.rho, spec.u_npv, spec.u_ppv)
            zn[:, k] = (npv_hat - spec.npv0) / sds[k][0]
            zp[:, k] = (ppv_hat - spec.ppv0) / sds[k][1]
        return zn, zp

    parts = run_blocks(block, reps, seed, threads)
    zn = np.concatenate([p[0] for p in parts])
    zp = np.concatenate([p[1] for p in parts])
    reject, stop = decide(zn, zp, b)
    sizes = np.asarray(k_D, float)
    stop_probs = np.bincount(stop, minlength=t.size) / reps
    reject_probs = np.bincount(stop[reject], minlength=t.size) / reps
    return OperatingCharacteristics(
        label=label or "custom",
        p_reject=float(reject.mean()),
        expected_n_D=float(np.dot(stop_probs, sizes)),
        max_n_D=n_max,
        stop_probs=stop_probs,
        reject_probs=reject_probs,
        reps=reps,
        seed=seed,
        paths={"z_npv": zn, "z_ppv": zp, "reject": reject, "stop": stop} if keep_paths else None,
    )


def with_looks(spec: GSDesignSpec, looks: int) -> GSDesignSpec:
    """Copy of ``spec`` with ``looks`` equally spaced analyses."""
    return replace(spec, looks=looks, fractions=None)
