"""Longitudinal data container, preprocessing, and stacked design assembly.

Expected file format: long CSV with header ``subject,time,y,<covariate...>``.
Rows may arrive in any order; they are grouped by subject (first-appearance
order) and sorted by time within subject.  Observation times are rescaled to
[0,1] by the pooled (min, max) so one basis serves all subjects.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import CenteredSplineBasis
from .errors import DegenerateColumnError, DegenerateDesignError, ParseError


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    times: np.ndarray          # sorted, rescaled to [0,1]
    responses: np.ndarray
    covariates: np.ndarray     # (n_i, p)

    @property
    def n_obs(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class PreprocessState:
    demeaned: bool = False
    subject_means_y: dict | None = None     # subject_id -> float
    subject_means_x: dict | None = None     # subject_id -> (p,) array
    center: np.ndarray | None = None        # per-covariate standardization
    scale: np.ndarray | None = None

    @property
    def standardized(self) -> bool:
        return self.center is not None


@dataclass(frozen=True)
class LongitudinalDataset:
    subjects: tuple
    p: int
    covariate_names: tuple
    time_domain: tuple                      # original (min, max) before rescaling
    preprocessing: PreprocessState = field(default_factory=PreprocessState)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_total(self) -> int:
        return sum(s.n_obs for s in self.subjects)

    def stacked(self):
        """(y, X, t) stacked over subjects in order, observations by time."""
        y = np.concatenate([s.responses for s in self.subjects])
        X = np.vstack([s.covariates for s in self.subjects])
        t = np.concatenate([s.times for s in self.subjects])
        return y, X, t

    def rescale_times(self, raw_times: np.ndarray) -> np.ndarray:
        """Map raw times onto the model's [0,1] scale (may fall outside)."""
        lo, hi = self.time_domain
        return (np.asarray(raw_times, dtype=float) - lo) / (hi - lo)


@dataclass(frozen=True)
class DesignBlocks:
    """Stacked response, constant-effect design, and per-covariate spline blocks."""

    y: np.ndarray
    X: np.ndarray                    # (n, p)
    Z: tuple                         # p matrices, each (n, q)
    intercept_included: bool
    subject_slices: tuple            # row ranges per subject, for CV and reporting

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z[0].shape[1] if self.Z else 0


def from_arrays(subject_ids, times, y, X, covariate_names=None,
                rescale: bool = True) -> LongitudinalDataset:
    """Build a dataset from parallel arrays (one entry per observation)."""
    subject_ids = [str(s) for s in subject_ids]
    times = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    p = X.shape[1]
    if covariate_names is None:
        covariate_names = tuple(f"x{k + 1}" for k in range(p))

    lo, hi = float(times.min()), float(times.max())
    if rescale:
        if hi == lo:
            raise DegenerateDesignError("all observation times are identical; cannot rescale to [0,1]")
        t01 = (times - lo) / (hi - lo)
    else:
        t01 = times
        lo, hi = 0.0, 1.0

    order: dict[str, list[int]] = {}
    for i, sid in enumerate(subject_ids):
        order.setdefault(sid, []).append(i)

    subjects = []
    for sid, idx in order.items():
        idx = np.asarray(idx)
        srt = idx[np.argsort(t01[idx], kind="stable")]
        subjects.append(SubjectRecord(
            subject_id=sid,
            times=t01[srt].copy(),
            responses=y[srt].copy(),
            covariates=X[srt].copy(),
        ))
    return LongitudinalDataset(
        subjects=tuple(subjects), p=p,
        covariate_names=tuple(covariate_names),
        time_domain=(lo, hi),
    )


def load_long_csv(path, rescale: bool = True) -> LongitudinalDataset:
    """Read a long-format CSV; times are rescaled to [0,1] by the global range.

    `rescale=False` keeps the times as read (used when scoring new data
    against a previously fitted time domain).
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        required = ("subject", "time", "y")
        for col in required:
            if col not in header:
                raise ParseError(f"{path}: missing required column '{col}'")
        col_idx = {name: header.index(name) for name in required}
        cov_names = [h for h in header if h not in required]
        cov_idx = [header.index(h) for h in cov_names]
        if not cov_names:
            raise ParseError(f"{path}: no covariate columns found beyond subject,time,y")

        sids, times, ys, xs = [], [], [], []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {rownum} has {len(row)} fields, expected {len(header)}")

            def cell(j, name):
                raw = row[j].strip()
                try:
                    val = float(raw)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {rownum}, column '{name}': cannot parse '{raw}' as a number"
                    ) from None
                if math.isnan(val):
                    raise ParseError(f"{path}: row {rownum}, column '{name}': NaN is not allowed")
                return val

            sids.append(row[col_idx["subject"]].strip())
            times.append(cell(col_idx["time"], "time"))
            ys.append(cell(col_idx["y"], "y"))
            xs.append([cell(j, name) for j, name in zip(cov_idx, cov_names)])

    if not sids:
        raise ParseError(f"{path}: no data rows")
    return from_arrays(sids, times, ys, np.array(xs), covariate_names=tuple(cov_names),
                       rescale=rescale)


def demean_within_subject(dataset: LongitudinalDataset) -> LongitudinalDataset:
    """Subtract subject means from the response and every covariate column.

    Absorbs subject-specific intercepts; idempotent.  Note that covariates
    constant within subject are annihilated, so constant effects become
    unidentifiable for purely baseline covariates.
    """
    if dataset.preprocessing.demeaned:
        return dataset
    means_y, means_x, subjects = {}, {}, []
    for s in dataset.subjects:
        my = s.responses.mean()
        mx = s.covariates.mean(axis=0)
        means_y[s.subject_id] = float(my)
        means_x[s.subject_id] = mx
        subjects.append(replace(s, responses=s.responses - my, covariates=s.covariates - mx))
    state = replace(dataset.preprocessing, demeaned=True,
                    subject_means_y=means_y, subject_means_x=means_x)
    return replace(dataset, subjects=tuple(subjects), preprocessing=state)


def standardize(dataset: LongitudinalDataset, binary_columns=()) -> LongitudinalDataset:
    """Scale each covariate column to pooled mean 0, variance 1.

    Columns named in `binary_columns` are passed through untouched
    (center 0, scale 1).  Degenerate (zero-variance) columns raise.
    """
    binary = set(binary_columns)
    unknown = binary - set(dataset.covariate_names)
    if unknown:
        raise DegenerateColumnError(f"unknown binary column(s): {sorted(unknown)}")
    _, X, _ = dataset.stacked()
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    for k, name in enumerate(dataset.covariate_names):
        if name in binary:
            center[k], scale[k] = 0.0, 1.0
        elif scale[k] == 0.0:
            raise DegenerateColumnError(f"covariate '{name}' has zero pooled variance")
    subjects = tuple(
        replace(s, covariates=(s.covariates - center) / scale) for s in dataset.subjects
    )
    state = replace(dataset.preprocessing, center=center, scale=scale)
    return replace(dataset, subjects=subjects, preprocessing=state)


def unstandardize_covariates(dataset: LongitudinalDataset, X: np.ndarray) -> np.ndarray:
    """Invert `standardize` on a covariate matrix."""
    state = dataset.preprocessing
    if not state.standardized:
        return np.asarray(X, dtype=float)
    return np.asarray(X, dtype=float) * state.scale + state.center


def build_design(dataset: LongitudinalDataset, basis: CenteredSplineBasis,
                 intercept: bool | None = None) -> DesignBlocks:
    """Assemble y, X, and the spline blocks Z_k with rows x_ijk * Btilde(t_ij)'.

    The intercept defaults to on unless the data were de-meaned.
    """
    y, X, t = dataset.stacked()
    Btil = basis.eval_centered(t)                  # (n, q)
    Z = tuple(X[:, k:k + 1] * Btil for k in range(dataset.p))
    if intercept is None:
        intercept = not dataset.preprocessing.demeaned
    slices, start = [], 0
    for s in dataset.subjects:
        slices.append((start, start + s.n_obs))
        start += s.n_obs
    for arr in (y, X, *Z):
        arr.setflags(write=False)
    return DesignBlocks(y=y, X=X, Z=Z, intercept_included=bool(intercept),
                        subject_slices=tuple(slices))
