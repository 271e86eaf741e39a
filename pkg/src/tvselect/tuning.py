"""Penalty selection: extended BIC over a grid, or subject-wise K-fold CV.

The group-penalty grid is anchored at lambda1_max, the smallest level that
zeroes every spline block on the first sweep when started from zero.  Grids
are stored descending; the lambda1 path is traversed from large to small
with warm starts at fixed lambda2.  Ties in the criterion go to the larger
lambda1, then the larger lambda2 (sparser, smoother).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import CenteredSplineBasis
from .data import DesignBlocks, LongitudinalDataset, build_design
from .errors import ConfigurationError, TuningError
from .solver import (
    METHOD_GROUP_LASSO,
    METHOD_TV_SELECT,
    METHOD_VC_RIDGE,
    ModelFit,
    PenaltyConfig,
    SolverOptions,
    _constants_init,
    fit_baseline,
    fit_bcd,
    precompute_block_factors,
    residuals,
)
from .structure import select_vary

DEFAULT_LAMBDA1_COUNT = 20
DEFAULT_LAMBDA1_MIN_RATIO = 1e-3
DEFAULT_LAMBDA2_GRID = tuple(np.logspace(0.0, -4.0, 5))   # 1 .. 1e-4, descending


@dataclass(frozen=True)
class TuningGrid:
    """Descending penalty grids and the EBIC dimensionality weight gamma."""

    lambda1_values: tuple
    lambda2_values: tuple
    gamma: float = 0.5

    def __post_init__(self):
        for name, vals in (("lambda1_values", self.lambda1_values),
                           ("lambda2_values", self.lambda2_values)):
            arr = np.asarray(vals, dtype=float)
            if arr.size == 0:
                raise ConfigurationError(f"{name} must be non-empty")
            if np.any(arr < 0):
                raise ConfigurationError(f"{name} must be non-negative")
            if np.any(np.diff(arr) > 0):
                raise ConfigurationError(f"{name} must be sorted descending")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")


@dataclass(frozen=True)
class TuningResult:
    best_lambda1: float
    best_lambda2: float
    criterion_surface: np.ndarray      # (len(lambda1_values), len(lambda2_values))
    best_fit: ModelFit
    grid: TuningGrid
    criterion: str = "ebic"

    def surface_rows(self):
        """(lambda1, lambda2, criterion) triples for CSV export."""
        for i, l1 in enumerate(self.grid.lambda1_values):
            for j, l2 in enumerate(self.grid.lambda2_values):
                yield l1, l2, self.criterion_surface[i, j]


def lambda1_max(design: DesignBlocks) -> float:
    """max_k ||Z_k' y0 / n||_2 with y0 the constants-only residual.

    At or above this level a zero-started sweep zeroes every block.
    """
    beta0, mu = _constants_init(design.y, design.X, design.intercept_included)
    y0 = design.y - beta0 - design.X @ mu
    n = design.n
    return max(float(np.linalg.norm(Zk.T @ y0 / n)) for Zk in design.Z)


def default_grid(design: DesignBlocks, gamma: float = 0.5,
                 lambda1_count: int = DEFAULT_LAMBDA1_COUNT,
                 lambda1_min_ratio: float = DEFAULT_LAMBDA1_MIN_RATIO,
                 lambda2_values=DEFAULT_LAMBDA2_GRID) -> TuningGrid:
    """Log-spaced lambda1 path from lambda1_max down, default lambda2 grid."""
    top = lambda1_max(design)
    if top <= 0.0:
        lam1 = tuple(np.zeros(1))
    else:
        lam1 = tuple(np.logspace(np.log10(top), np.log10(top * lambda1_min_ratio),
                                 lambda1_count))
    lam2 = tuple(sorted((float(v) for v in lambda2_values), reverse=True))
    return TuningGrid(lambda1_values=lam1, lambda2_values=lam2, gamma=gamma)


def ebic(fit: ModelFit, design: DesignBlocks, gamma: float = 0.5) -> float:
    """log(RSS/n) + (log n / n) df + (2 gamma log p / n) |S_vary|.

    df is the proxy p + q|S_vary|.  RSS exactly zero yields -inf so a
    perfect interpolant wins any comparison.
    """
    n, p, q = design.n, design.p, fit.basis.q
    rss = float(np.sum(residuals(design, fit) ** 2))
    n_vary = len(select_vary(fit))
    if rss == 0.0:
        return float("-inf")
    df = p + q * n_vary
    return float(np.log(rss / n) + np.log(n) / n * df + 2.0 * gamma * np.log(p) / n * n_vary)


def _argmin_with_tiebreak(surface: np.ndarray) -> tuple[int, int]:
    """Smallest value; ties go to the smallest indices (largest penalties)."""
    best = None
    for i in range(surface.shape[0]):
        for j in range(surface.shape[1]):
            v = surface[i, j]
            if np.isnan(v):
                continue
            if best is None or v < surface[best]:
                best = (i, j)
    if best is None:
        raise TuningError("every grid point failed")
    return best


def _fit_grid(design, basis, grid, options, method):
    """All grid fits, warm-started down the lambda1 path at fixed lambda2."""
    fits = {}
    failures = {}
    for j, lam2 in enumerate(grid.lambda2_values):
        factors = precompute_block_factors(design, basis, lam2)
        warm = None
        for i, lam1 in enumerate(grid.lambda1_values):
            pen = PenaltyConfig(lambda1=lam1, lambda2=lam2)
            try:
                if method == METHOD_TV_SELECT:
                    fit = fit_bcd(design, basis, pen, options, init=warm, factors=factors)
                else:
                    fit = fit_baseline(design, basis, method, pen, options,
                                       init=warm, factors=factors)
                fits[(i, j)] = fit
                warm = fit
            except Exception as exc:   # keep scanning; surface records the hole
                failures[(i, j)] = exc
    if not fits:
        raise TuningError(f"all {len(failures)} grid fits failed; "
                          f"first error: {next(iter(failures.values()))}")
    return fits


def tune_ebic(design: DesignBlocks, basis: CenteredSplineBasis, grid: TuningGrid,
              options: SolverOptions = SolverOptions(),
              method: str = METHOD_TV_SELECT) -> TuningResult:
    """Fit every grid point and return the EBIC minimizer."""
    if method == METHOD_GROUP_LASSO and any(v != 0.0 for v in grid.lambda2_values):
        raise ConfigurationError("group-lasso tunes lambda1 only; use lambda2_values=(0,)")
    if method == METHOD_VC_RIDGE and any(v != 0.0 for v in grid.lambda1_values):
        raise ConfigurationError("vc-ridge tunes lambda2 only; use lambda1_values=(0,)")
    fits = _fit_grid(design, basis, grid, options, method)
    surface = np.full((len(grid.lambda1_values), len(grid.lambda2_values)), np.nan)
    for (i, j), fit in fits.items():
        surface[i, j] = ebic(fit, design, grid.gamma)
    i, j = _argmin_with_tiebreak(surface)
    surface.setflags(write=False)
    return TuningResult(
        best_lambda1=grid.lambda1_values[i], best_lambda2=grid.lambda2_values[j],
        criterion_surface=surface, best_fit=fits[(i, j)], grid=grid, criterion="ebic",
    )


def subject_folds(subject_ids, n_folds: int, seed) -> list[list[str]]:
    """Deterministic subject-wise folds from (sorted ids, K, seed)."""
    ids = sorted(set(str(s) for s in subject_ids))
    if n_folds > len(ids):
        raise ConfigurationError(f"K={n_folds} folds exceed N={len(ids)} subjects")
    if n_folds < 2:
        raise ConfigurationError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    return [[ids[i] for i in chunk] for chunk in np.array_split(perm, n_folds)]


def _subset(dataset: LongitudinalDataset, keep_ids) -> LongitudinalDataset:
    keep = set(keep_ids)
    from dataclasses import replace
    subjects = tuple(s for s in dataset.subjects if s.subject_id in keep)
    return replace(dataset, subjects=subjects)


def tune_cv(dataset: LongitudinalDataset, basis: CenteredSplineBasis, grid: TuningGrid,
            n_folds: int = 5, seed: int = 0,
            options: SolverOptions = SolverOptions(),
            method: str = METHOD_TV_SELECT) -> TuningResult:
    """Subject-wise K-fold cross-validation on mean squared prediction error.

    The dataset is used exactly as preprocessed by the caller; whole subjects
    are held out, the criterion pools squared errors over held-out rows, and
    the winning pair is refit on the full data.
    """
    folds = subject_folds([s.subject_id for s in dataset.subjects], n_folds, seed)
    shape = (len(grid.lambda1_values), len(grid.lambda2_values))
    sq_err = np.zeros(shape)
    counts = np.zeros(shape)
    for held_out in folds:
        train = _subset(dataset, [s.subject_id for s in dataset.subjects
                                  if s.subject_id not in set(held_out)])
        test = _subset(dataset, held_out)
        d_train = build_design(train, basis)
        d_test = build_design(test, basis, intercept=d_train.intercept_included)
        fits = _fit_grid(d_train, basis, grid, options, method)
        for (i, j), fit in fits.items():
            pred = fit.beta0 + d_test.X @ fit.mu
            for Zk, th in zip(d_test.Z, fit.theta):
                if np.any(th):
                    pred = pred + Zk @ th
            sq_err[i, j] += float(np.sum((d_test.y - pred) ** 2))
            counts[i, j] += d_test.n
    with np.errstate(invalid="ignore", divide="ignore"):
        surface = np.where(counts > 0, sq_err / counts, np.nan)
    i, j = _argmin_with_tiebreak(surface)
    full_design = build_design(dataset, basis)
    pen = PenaltyConfig(lambda1=grid.lambda1_values[i], lambda2=grid.lambda2_values[j])
    if method == METHOD_TV_SELECT:
        best_fit = fit_bcd(full_design, basis, pen, options)
    else:
        best_fit = fit_baseline(full_design, basis, method, pen, options)
    surface.setflags(write=False)
    return TuningResult(
        best_lambda1=grid.lambda1_values[i], best_lambda2=grid.lambda2_values[j],
        criterion_surface=surface, best_fit=best_fit, grid=grid, criterion="cv-mspe",
    )
