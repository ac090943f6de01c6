"""Finite-sample validation of the limit theory by simulation.

Each replicate draws a binormal case-control sample, evaluates the scaled
processes ``n_D^{-1/2} [n_D r_D] (estimate - truth)`` at a set of probes and
the aggregates are compared with the closed-form covariances: mean,
coverage of the percentiles of ``N(0, theoretical variance)`` and the
observed covariance matrix.
"""

from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .asymptotics import CovProbe, ppv_fpf_process_cov, ppv_pct_process_cov, roc_process_cov
from .curves import BinormalModel, ppv_fpf, ppv_pct_true, roc_true
from .empirical import (
    DomainError,
    MarkerSample,
    as_fraction,
    batch_count_le,
    batch_mixture_quantile,
    batch_order_statistic,
    batch_prefix_sort,
    prefix_length,
)
from .rng import run_blocks

__all__ = [
    "PERCENTILES",
    "TABLE1_PROBES",
    "SimScenario",
    "SimReport",
    "simulate_sample",
    "run_table1",
    "run_ppv_validation",
]

PERCENTILES = (0.05, 0.25, 0.50, 0.75, 0.95)
TABLE1_PROBES = (
    CovProbe(0.4, 0.4, 0.7),
    CovProbe(0.4, 1.0, 1.0),
    CovProbe(0.2, 0.4, 0.7),
    CovProbe(0.2, 1.0, 1.0),
)


@dataclass(frozen=True)
class SimScenario:
    model: BinormalModel = BinormalModel(1.0, 1.0)
    rho: float = 0.2
    n_D: int = 200
    n_Dbar: int = 200
    probes: tuple[CovProbe, ...] = TABLE1_PROBES
    replications: int = 10_000
    seed: int = 7

    def __post_init__(self):
        if self.replications < 1:
            raise DomainError("replications must be >= 1")
        if self.n_D < 1 or self.n_Dbar < 1:
            raise DomainError("sample sizes must be >= 1")
        if not 0 < self.rho < 1:
            raise DomainError("rho must lie in (0, 1)")
        object.__setattr__(self, "probes", tuple(self.probes))
        if not self.probes:
            raise DomainError("need at least one probe")

    @property
    def lam(self) -> float:
        return self.n_D / self.n_Dbar


@dataclass
class SimReport:
    """Aggregates of one validation run; every SE is a Monte Carlo SE."""

    kind: str
    scenario: SimScenario
    mean: np.ndarray
    mean_se: np.ndarray
    coverage: np.ndarray  # (probes, percentiles)
    coverage_se: np.ndarray
    observed_cov: np.ndarray
    observed_cov_se: np.ndarray
    theoretical_cov: np.ndarray
    extras: dict = field(default_factory=dict)

    def labels(self) -> list[str]:
        return [f"{self.kind}_{p.r_D:g},{p.r_Dbar:g}({p.index:g})" for p in self.scenario.probes]

    def to_markdown(self) -> str:
        s = self.scenario
        lines = [
            f"## {self.kind} validation: n_D={s.n_D}, n_Dbar={s.n_Dbar}, "
            f"replications={s.replications}, seed={s.seed}",
            "",
            "Monte Carlo estimates with Monte Carlo SEs in parentheses.",
            "",
            "| Probe | Mean | " + " | ".join(f"{int(p * 100)}th %tile" for p in PERCENTILES) + " |",
            "|---" * (2 + len(PERCENTILES)) + "|",
        ]
        for i, lab in enumerate(self.labels()):
            cells = [f"{self.mean[i]:.3f} ({self.mean_se[i]:.3f})"]
            cells += [
                f"{self.coverage[i, j]:.3f} ({self.coverage_se[i, j]:.3f})"
                for j in range(len(PERCENTILES))
            ]
            lines.append(f"| {lab} | " + " | ".join(cells) + " |")
        lines += ["", "Observed covariance matrix (Monte Carlo, SE in parentheses)", ""]
        lines += _matrix_md(self.labels(), self.observed_cov, self.observed_cov_se)
        lines += ["", "Theoretical covariance matrix (closed form)", ""]
        lines += _matrix_md(self.labels(), self.theoretical_cov, None)
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["section", "row", "column", "value", "se", "source"])
        labels = self.labels()
        for i, lab in enumerate(labels):
            w.writerow(["mean", lab, "", _fmt(self.mean[i]), _fmt(self.mean_se[i]), "monte_carlo"])
            for j, p in enumerate(PERCENTILES):
                w.writerow(
                    ["coverage", lab, f"{p:g}", _fmt(self.coverage[i, j]),
                     _fmt(self.coverage_se[i, j]), "monte_carlo"]
                )
        for i, a in enumerate(labels):
            for j, b in enumerate(labels):
                w.writerow(
                    ["observed_cov", a, b, _fmt(self.observed_cov[i, j]),
                     _fmt(self.observed_cov_se[i, j]), "monte_carlo"]
                )
        for i, a in enumerate(labels):
            for j, b in enumerate(labels):
                w.writerow(["theoretical_cov", a, b, _fmt(self.theoretical_cov[i, j]), "", "closed_form"])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


def _matrix_md(labels, m, se) -> list[str]:
    out = ["| | " + " | ".join(labels) + " |", "|---" * (len(labels) + 1) + "|"]
    for i, lab in enumerate(labels):
        cells = []
        for j in range(len(labels)):
            if j < i:
                cells.append("")
            elif se is None:
                cells.append(f"{m[i, j]:.3f}")
            else:
                cells.append(f"{m[i, j]:.3f} ({se[i, j]:.3f})")
        out.append(f"| {lab} | " + " | ".join(cells) + " |")
    return out


def simulate_sample(model: BinormalModel, rho: float, n_D: int, n_Dbar: int, rng) -> MarkerSample:
    """One case-control sample; arrival order is draw order.

    ``rho`` does not affect the draws (sampling is case-control) but is
    validated so scenarios fail early.
    """
    if n_D < 1 or n_Dbar < 1:
        raise DomainError("sample sizes must be >= 1")
    if not 0 < rho < 1:
        raise DomainError("rho must lie in (0, 1)")
    cases, controls = model.sample(rng, n_D, n_Dbar)
    return MarkerSample(cases, controls)


class _SortedPrefixes:
    """Row-sorted prefixes, computed once per (arm, length)."""

    def __init__(self, cases: np.ndarray, controls: np.ndarray):
        self.arms = {"D": cases, "Dbar": controls}
        self.cache: dict = {}

    def __call__(self, arm: str, k: int) -> np.ndarray:
        key = (arm, k)
        if key not in self.cache:
            self.cache[key] = batch_prefix_sort(self.arms[arm], k)
        return self.cache[key]


def _roc_hat(prefixes: _SortedPrefixes, probe: CovProbe, n_D: int, n_Dbar: int) -> np.ndarray:
    k_D = prefix_length(probe.r_D, n_D)
    k_Dbar = prefix_length(probe.r_Dbar, n_Dbar)
    thr = batch_order_statistic(prefixes("Dbar", k_Dbar), 1 - as_fraction(probe.index))
    return 1.0 - batch_count_le(prefixes("D", k_D), thr) / k_D


def _ppv_pct_hat(prefixes, probe, rho, n_D, n_Dbar) -> np.ndarray:
    k_D = prefix_length(probe.r_D, n_D)
    k_Dbar = prefix_length(probe.r_Dbar, n_Dbar)
    sc = prefixes("D", k_D)
    x = batch_mixture_quantile(sc, prefixes("Dbar", k_Dbar), rho, probe.index)
    return rho * (1.0 - batch_count_le(sc, x) / k_D) / (1 - probe.index)


def _scaled(values: np.ndarray, truth: float, probe: CovProbe, n_D: int) -> np.ndarray:
    return prefix_length(probe.r_D, n_D) / math.sqrt(n_D) * (values - truth)


def _simulate(scenario: SimScenario, statistic, threads) -> np.ndarray:
    s = scenario

    def block(rng, size):
        cases, controls = s.model.sample(rng, s.n_D, s.n_Dbar, reps=size)
        prefixes = _SortedPrefixes(cases, controls)
        return np.column_stack([statistic(prefixes, p) for p in s.probes])

    return np.concatenate(run_blocks(block, s.replications, s.seed, threads), axis=0)


def _report(kind: str, scenario: SimScenario, draws: np.ndarray, theory: np.ndarray, extras=None):
    n = draws.shape[0]
    mean = draws.mean(axis=0)
    sd = draws.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    centred = draws - mean
    if n > 1:
        observed = centred.T @ centred / (n - 1)
        prods = centred[:, :, None] * centred[:, None, :]
        cov_se = prods.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        observed = np.zeros((draws.shape[1],) * 2)
        cov_se = np.zeros_like(observed)
    z = special.ndtri(np.asarray(PERCENTILES))
    cut = np.sqrt(np.diag(theory))[:, None] * z[None, :]
    coverage = (draws[:, :, None] <= cut[None, :, :]).mean(axis=0)
    return SimReport(
        kind=kind,
        scenario=scenario,
        mean=mean,
        mean_se=sd / math.sqrt(n),
        coverage=coverage,
        coverage_se=np.sqrt(coverage * (1 - coverage) / n),
        observed_cov=observed,
        observed_cov_se=cov_se,
        theoretical_cov=theory,
        extras=extras or {},
    )


def run_table1(scenario: SimScenario, threads: int | None = None) -> SimReport:
    """Scaled ROC process ``R`` at each probe versus its limit covariance."""
    s = scenario
    truth = [roc_true(s.model, p.index) for p in s.probes]
    theory = roc_process_cov(s.model, list(s.probes), s.lam)

    def stat(prefixes, probe):
        i = s.probes.index(probe)
        return _scaled(_roc_hat(prefixes, probe, s.n_D, s.n_Dbar), truth[i], probe, s.n_D)

    return _report("R", s, _simulate(s, stat, threads), theory)


def run_ppv_validation(
    scenario: SimScenario, index_kind: str, threads: int | None = None
) -> SimReport:
    """Scaled PPV process indexed by FPF (``"fpf"``) or by percentile (``"pct"``).

    For the percentile index the report also carries the largest pathwise
    deviation from the linear PPV/NPV relation.
    """
    s = scenario
    probes = list(s.probes)
    extras = {}
    if index_kind == "fpf":
        truth = [ppv_fpf(roc_true(s.model, p.index), p.index, s.rho) for p in probes]
        theory = ppv_fpf_process_cov(s.model, s.rho, probes, s.lam)

        def stat(prefixes, probe):
            i = s.probes.index(probe)
            roc_hat = _roc_hat(prefixes, probe, s.n_D, s.n_Dbar)
            t = probe.index
            ppv_hat = roc_hat * s.rho / (roc_hat * s.rho + t * (1 - s.rho))
            return _scaled(ppv_hat, truth[i], probe, s.n_D)

        draws = _simulate(s, stat, threads)
    elif index_kind == "pct":
        truth = [ppv_pct_true(s.model, s.rho, p.index) for p in probes]
        theory = ppv_pct_process_cov(s.model, s.rho, probes, s.lam)
        worst = [0.0]
        lock = threading.Lock()

        def stat(prefixes, probe):
            i = s.probes.index(probe)
            u = probe.index
            ppv_hat = _ppv_pct_hat(prefixes, probe, s.rho, s.n_D, s.n_Dbar)
            npv_hat = (u - s.rho) / u + (1 - u) / u * ppv_hat
            npv_true = (u - s.rho) / u + (1 - u) / u * truth[i]
            p_proc = _scaled(ppv_hat, truth[i], probe, s.n_D)
            n_proc = _scaled(npv_hat, npv_true, probe, s.n_D)
            gap = np.max(np.abs(n_proc - (1 - u) / u * p_proc))
            with lock:
                worst[0] = max(worst[0], float(gap))
            return p_proc

        draws = _simulate(s, stat, threads)
        extras["identity_max_abs"] = worst[0]
    else:
        raise DomainError("index_kind must be 'fpf' or 'pct'")
    return _report(f"P[{index_kind}]", s, draws, theory, extras)
