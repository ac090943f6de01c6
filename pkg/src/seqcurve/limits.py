"""Simulation of the Gaussian limit processes on finite grids.

Kiefer fields are drawn either by a Cholesky factor of the full grid
covariance or by the Brownian-sheet construction
``K(t, r) = W(t, r) - t W(1, r)``. The limit processes for the ROC and
percentile-indexed PPV/NPV curves are then assembled from two independent
Kiefer fields evaluated at model-dependent index points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .asymptotics import CovProbe, NumericalError, _kiefer_matrix, percentile_point
from .curves import MarkerModel, roc_true
from .empirical import DomainError
from .rng import run_blocks

__all__ = [
    "GridSpec",
    "LimitProcessSample",
    "kiefer_grid_cov",
    "brownian_sheet_kiefer",
    "sample_kiefer",
    "sample_limit_roc",
    "sample_limit_ppv_pct",
]

CONSTRUCTIONS = ("cholesky", "sheet")
MAX_CHOLESKY_POINTS = 10_000
JITTER = 1e-10


@dataclass(frozen=True)
class GridSpec:
    index_grid: tuple[float, ...]
    time_grid: tuple[float, ...]

    def __post_init__(self):
        idx = np.asarray(self.index_grid, float)
        tim = np.asarray(self.time_grid, float)
        if idx.size == 0 or tim.size == 0:
            raise DomainError("grids must be nonempty")
        if np.any(np.diff(idx) <= 0) or np.any(np.diff(tim) <= 0):
            raise DomainError("grids must be strictly increasing")
        if idx[0] <= 0 or idx[-1] >= 1:
            raise DomainError("index grid must lie in (0, 1)")
        if tim[0] <= 0 or tim[-1] > 1:
            raise DomainError("time grid must lie in (0, 1]")
        object.__setattr__(self, "index_grid", tuple(float(v) for v in idx))
        object.__setattr__(self, "time_grid", tuple(float(v) for v in tim))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.index_grid), len(self.time_grid)


@dataclass
class LimitProcessSample:
    """Draws of a limit process.

    ``values`` has one leading axis for draws; the remaining axes follow
    ``labels`` (a grid shape for raw Kiefer fields, one entry per probe for
    the curve processes).
    """

    values: np.ndarray
    seed: int
    construction: str
    labels: object = None
    metadata: dict = field(default_factory=dict)


def kiefer_grid_cov(grid: GridSpec) -> np.ndarray:
    """Covariance of the row-major flattened field over ``grid``."""
    t, r = np.meshgrid(grid.index_grid, grid.time_grid, indexing="ij")
    return _kiefer_matrix(t.ravel(), r.ravel())


def brownian_sheet_kiefer(index: np.ndarray, time: np.ndarray, rng, draws: int) -> np.ndarray:
    """Kiefer field on ``index x time`` built from a Brownian sheet.

    ``index`` may include the endpoints 0 and 1 (where the field is pinned to
    zero exactly). Returns an array of shape ``(draws, len(index), len(time))``.
    """
    index = np.asarray(index, float)
    time = np.asarray(time, float)
    aug = index if index[-1] == 1.0 else np.append(index, 1.0)
    d_idx = np.diff(aug, prepend=0.0)
    d_time = np.diff(time, prepend=0.0)
    cell_sd = np.sqrt(np.outer(d_idx, d_time))
    increments = rng.standard_normal((draws, aug.size, time.size)) * cell_sd
    sheet = np.cumsum(np.cumsum(increments, axis=1), axis=2)
    top = sheet[:, -1:, :]
    return sheet[:, : index.size, :] - index[None, :, None] * top


def _cholesky(cov: np.ndarray) -> tuple[np.ndarray, float]:
    try:
        return np.linalg.cholesky(cov), 0.0
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + JITTER * np.eye(cov.shape[0])), JITTER
    except np.linalg.LinAlgError:
        raise NumericalError(
            "Kiefer covariance is not numerically positive definite on this grid; "
            "thin the grid or add diagonal jitter explicitly"
        ) from None


def _kiefer_block_sampler(grid: GridSpec, construction: str):
    """Return ``(draw(rng, n) -> (n, I, T), jitter)``."""
    n_i, n_t = grid.shape
    if construction == "cholesky":
        if n_i * n_t > MAX_CHOLESKY_POINTS:
            raise DomainError(f"Cholesky path limited to {MAX_CHOLESKY_POINTS} grid points")
        chol, jitter = _cholesky(kiefer_grid_cov(grid))

        def draw(rng, n):
            z = rng.standard_normal((n, n_i * n_t))
            return (z @ chol.T).reshape(n, n_i, n_t)

        return draw, jitter
    if construction == "sheet":
        idx = np.asarray(grid.index_grid)
        tim = np.asarray(grid.time_grid)
        return (lambda rng, n: brownian_sheet_kiefer(idx, tim, rng, n)), 0.0
    raise DomainError(f"construction must be one of {CONSTRUCTIONS}")


def sample_kiefer(
    grid: GridSpec,
    seed: int,
    draws: int = 1,
    construction: str = "cholesky",
    threads: int | None = None,
) -> LimitProcessSample:
    draw, jitter = _kiefer_block_sampler(grid, construction)
    blocks = run_blocks(draw, draws, seed, threads)
    return LimitProcessSample(
        values=np.concatenate(blocks, axis=0),
        seed=seed,
        construction=construction,
        labels=grid,
        metadata={"jitter": jitter},
    )


def _positions(values: np.ndarray) -> tuple[GridSpec, np.ndarray]:
    grid_vals = np.unique(values)
    return grid_vals, np.searchsorted(grid_vals, values)


def _two_field_sampler(idx1, time1, idx2, time2, construction):
    """Sampler for independent Kiefer fields K1 at (idx1, time1) and K2 at (idx2, time2)."""
    g1, p1 = _positions(idx1)
    s1, q1 = _positions(time1)
    g2, p2 = _positions(idx2)
    s2, q2 = _positions(time2)
    draw1, j1 = _kiefer_block_sampler(GridSpec(tuple(g1), tuple(s1)), construction)
    draw2, j2 = _kiefer_block_sampler(GridSpec(tuple(g2), tuple(s2)), construction)

    def draw(rng, n):
        k1 = draw1(rng, n)[:, p1, q1]
        k2 = draw2(rng, n)[:, p2, q2]
        return k1, k2

    return draw, max(j1, j2)


def _check_probes(probes: Sequence[CovProbe]):
    if not probes:
        raise DomainError("need at least one probe")
    for p in probes:
        if not (0 < p.index < 1 and 0 < p.r_D <= 1 and 0 < p.r_Dbar <= 1):
            raise DomainError(f"invalid probe {p}")
    return (
        np.array([p.index for p in probes]),
        np.array([p.r_D for p in probes]),
        np.array([p.r_Dbar for p in probes]),
    )


def sample_limit_roc(
    model: MarkerModel,
    probes: Sequence[CovProbe],
    lam: float,
    seed: int,
    draws: int = 1,
    construction: str = "cholesky",
    threads: int | None = None,
) -> LimitProcessSample:
    """Draws of ``K1(ROC(t), r_D) + sqrt(lam) (r_D / r_Dbar) q(t) K2(t, r_Dbar)``.

    ``q(t)`` is the density ratio ``f_D / f_Dbar`` at the control threshold.
    """
    t, r_D, r_Dbar = _check_probes(probes)
    roc = np.array([roc_true(model, ti) for ti in t])
    q = np.array([model.density_ratio(ti) for ti in t])
    draw2, jitter = _two_field_sampler(roc, r_D, t, r_Dbar, construction)
    weight = np.sqrt(lam) * r_D / r_Dbar * q

    def draw(rng, n):
        k1, k2 = draw2(rng, n)
        return k1 + weight * k2

    values = np.concatenate(run_blocks(draw, draws, seed, threads), axis=0)
    return LimitProcessSample(values, seed, construction, list(probes), {"jitter": jitter})


def sample_limit_ppv_pct(
    model: MarkerModel,
    rho: float,
    probes: Sequence[CovProbe],
    lam: float,
    seed: int,
    draws: int = 1,
    construction: str = "cholesky",
    kind: str = "ppv",
    threads: int | None = None,
) -> LimitProcessSample:
    """Draws of the limit of the scaled PPV (or NPV) process by percentile."""
    if kind not in ("ppv", "npv"):
        raise DomainError("kind must be 'ppv' or 'npv'")
    u, r_D, r_Dbar = _check_probes(probes)
    pts = [percentile_point(model, rho, ui) for ui in u]
    amp = rho * (1 - rho) / (1 - u)
    case_w = -amp * np.array([p.g_Dbar for p in pts])
    ctrl_w = amp * np.array([p.g_D for p in pts]) * np.sqrt(lam) * r_D / r_Dbar
    F_D = np.array([p.F_D for p in pts])
    F_Dbar = np.array([p.F_Dbar for p in pts])
    draw2, jitter = _two_field_sampler(F_D, r_D, F_Dbar, r_Dbar, construction)
    scale = (1 - u) / u if kind == "npv" else np.ones_like(u)

    def draw(rng, n):
        k1, k2 = draw2(rng, n)
        return scale * (case_w * k1 + ctrl_w * k2)

    values = np.concatenate(run_blocks(draw, draws, seed, threads), axis=0)
    return LimitProcessSample(values, seed, construction, list(probes), {"jitter": jitter, "kind": kind})
