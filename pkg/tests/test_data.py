import numpy as np
import pytest

from tvselect.basis import SplineConfig, build_basis
from tvselect.data import (
    build_design,
    demean_within_subject,
    from_arrays,
    load_long_csv,
    standardize,
    unstandardize_covariates,
)
from tvselect.errors import DegenerateColumnError, DegenerateDesignError, ParseError
from tvselect.solver import PenaltyConfig, SolverOptions, fit_bcd


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


BASIC = """subject,time,y,x1,x2
a,2,1.0,0.5,1.0
a,6,2.0,-0.5,2.0
a,4,3.0,0.25,0.0
b,2,0.0,1.5,1.0
b,4,1.0,0.5,3.0
b,6,-1.0,-1.5,2.0
"""


def test_load_counts_and_rescaling(tmp_path):
    ds = load_long_csv(write_csv(tmp_path / "d.csv", BASIC))
    assert ds.n_subjects == 2
    assert ds.n_total == 6
    assert ds.p == 2
    assert ds.covariate_names == ("x1", "x2")
    # global times {2,4,6} -> {0, 0.5, 1}
    _, _, t = ds.stacked()
    assert sorted(set(np.round(t, 12))) == [0.0, 0.5, 1.0]
    assert ds.time_domain == (2.0, 6.0)


def test_load_sorts_within_subject_by_time(tmp_path):
    ds = load_long_csv(write_csv(tmp_path / "d.csv", BASIC))
    subj_a = ds.subjects[0]
    assert subj_a.subject_id == "a"
    assert np.all(np.diff(subj_a.times) >= 0)
    # y was given in time order 2,6,4 -> sorted 2,4,6 gives 1,3,2
    assert np.allclose(subj_a.responses, [1.0, 3.0, 2.0])


def test_malformed_cell_names_row_and_column(tmp_path):
    bad = BASIC.replace("b,4,1.0,0.5,3.0", "b,4,oops,0.5,3.0")
    with pytest.raises(ParseError, match=r"row 6.*'y'"):
        load_long_csv(write_csv(tmp_path / "d.csv", bad))


def test_nan_rejected(tmp_path):
    bad = BASIC.replace("b,4,1.0,0.5,3.0", "b,4,nan,0.5,3.0")
    with pytest.raises(ParseError, match="NaN"):
        load_long_csv(write_csv(tmp_path / "d.csv", bad))


def test_missing_column(tmp_path):
    with pytest.raises(ParseError, match="'time'"):
        load_long_csv(write_csv(tmp_path / "d.csv", "subject,t,y,x1\na,1,2,3\n"))


def test_empty_file(tmp_path):
    with pytest.raises(ParseError, match="empty"):
        load_long_csv(write_csv(tmp_path / "d.csv", ""))


def test_no_covariates(tmp_path):
    with pytest.raises(ParseError, match="covariate"):
        load_long_csv(write_csv(tmp_path / "d.csv", "subject,time,y\na,1,2\n"))


def test_missing_file():
    with pytest.raises(ParseError, match="nope.csv"):
        load_long_csv("nope.csv")


def test_identical_times_degenerate():
    with pytest.raises(DegenerateDesignError):
        from_arrays(["a", "a"], [3.0, 3.0], [1.0, 2.0], [[1.0], [2.0]])


def test_demean_basic():
    ds = from_arrays(["a"] * 3, [0, 0.5, 1], [1.0, 2.0, 3.0],
                     [[1.0], [2.0], [6.0]], rescale=False)
    out = demean_within_subject(ds)
    assert np.allclose(out.subjects[0].responses, [-1, 0, 1])
    assert np.allclose(out.subjects[0].covariates.ravel(), [-2, -1, 3])
    assert out.preprocessing.subject_means_y["a"] == 2.0


def test_demean_idempotent():
    rng = np.random.default_rng(0)
    ds = from_arrays(np.repeat(["a", "b"], 4), rng.uniform(0, 1, 8),
                     rng.standard_normal(8), rng.standard_normal((8, 2)), rescale=False)
    once = demean_within_subject(ds)
    twice = demean_within_subject(once)
    assert twice is once
    y1, X1, _ = once.stacked()
    y2, X2, _ = twice.stacked()
    assert np.array_equal(y1, y2)
    assert np.array_equal(X1, X2)


def test_demean_within_subject_means_vanish():
    rng = np.random.default_rng(5)
    sids = np.repeat([f"s{i}" for i in range(7)], 5)
    ds = from_arrays(sids, rng.uniform(0, 1, 35), rng.standard_normal(35),
                     rng.standard_normal((35, 3)), rescale=False)
    out = demean_within_subject(ds)
    for s in out.subjects:
        assert abs(s.responses.mean()) < 1e-12
        assert np.abs(s.covariates.mean(axis=0)).max() < 1e-12


def test_demeaned_noiseless_fit_gives_zero_intercept():
    # 3-subject toy with within-subject-varying covariates; after de-meaning,
    # a fit WITH intercept must estimate beta0 ~ 0 on noiseless data
    rng = np.random.default_rng(7)
    sids = np.repeat(["a", "b", "c"], 6)
    t = np.tile(np.linspace(0, 1, 6), 3)
    X = rng.standard_normal((18, 2))
    y = 5.0 + X @ np.array([2.0, -1.0]) + np.repeat(rng.standard_normal(3), 6)
    ds = demean_within_subject(from_arrays(sids, t, y, X, rescale=False))
    basis = build_basis(SplineConfig(degree=3, num_internal_knots=0))
    design = build_design(ds, basis, intercept=True)
    fit = fit_bcd(design, basis, PenaltyConfig(lambda1=1e3, lambda2=0.0),
                  SolverOptions(tol=1e-12, max_iter=2000))
    assert abs(fit.beta0) < 1e-8
    assert np.allclose(fit.mu, [2.0, -1.0], atol=1e-6)


def test_standardize_two_point_column():
    ds = from_arrays(["a", "b"], [0.0, 1.0], [0.0, 0.0], [[0.0], [2.0]], rescale=False)
    out = standardize(ds)
    _, X, _ = out.stacked()
    assert np.allclose(X.ravel(), [-1.0, 1.0])


def test_standardize_pooled_moments():
    rng = np.random.default_rng(1)
    ds = from_arrays(np.repeat(["a", "b", "c"], 10), rng.uniform(0, 1, 30),
                     rng.standard_normal(30), 3 + 2 * rng.standard_normal((30, 4)),
                     rescale=False)
    out = standardize(ds)
    _, X, _ = out.stacked()
    assert np.abs(X.mean(axis=0)).max() < 1e-12
    assert np.abs(X.std(axis=0) - 1).max() < 1e-12


def test_standardize_round_trip():
    rng = np.random.default_rng(2)
    X = 3 + 2 * rng.standard_normal((20, 3))
    ds = from_arrays(["a"] * 20, rng.uniform(0, 1, 20), rng.standard_normal(20),
                     X, rescale=False)
    out = standardize(ds)
    _, Xs, _ = out.stacked()
    back = unstandardize_covariates(out, Xs)
    # stacked() sorts rows by time within subject; compare against its order
    _, X_orig_sorted, _ = ds.stacked()
    assert np.abs(back - X_orig_sorted).max() < 1e-12


def test_standardize_constant_column_errors():
    ds = from_arrays(["a", "a"], [0.0, 1.0], [0.0, 0.0],
                     [[1.0, 2.0], [1.0, 3.0]], rescale=False)
    with pytest.raises(DegenerateColumnError, match="x1"):
        standardize(ds)


def test_standardize_binary_exemption():
    ds = from_arrays(["a", "a", "b", "b"], [0, 1, 0, 1], np.zeros(4),
                     np.array([[1.0, 4.0], [1.0, 6.0], [0.0, 2.0], [0.0, 0.0]]),
                     rescale=False, covariate_names=("sex", "x2"))
    out = standardize(ds, binary_columns=("sex",))
    _, X, _ = out.stacked()
    assert set(X[:, 0]) == {0.0, 1.0}
    assert abs(X[:, 1].mean()) < 1e-12
    with pytest.raises(DegenerateColumnError, match="unknown"):
        standardize(ds, binary_columns=("nope",))


@pytest.fixture()
def small_design():
    rng = np.random.default_rng(3)
    sids = np.repeat(["a", "b"], 3)
    t = np.array([0.0, 0.5, 1.0, 0.25, 0.5, 0.75])
    X = rng.standard_normal((6, 2))
    X[0, 0] = 0.0
    X[3:, 1] = 1.0
    y = rng.standard_normal(6)
    ds = from_arrays(sids, t, y, X, rescale=False)
    basis = build_basis(SplineConfig(degree=3, num_internal_knots=4))
    return ds, basis, build_design(ds, basis)


def test_build_design_shapes(small_design):
    _, basis, design = small_design
    assert len(design.Z) == 2
    assert all(Z.shape == (6, 8) for Z in design.Z)


def test_zero_covariate_gives_zero_row(small_design):
    _, _, design = small_design
    assert np.all(design.Z[0][0] == 0.0)


def test_unit_covariate_rows_are_centered_basis(small_design):
    ds, basis, design = small_design
    # x2 = 1 on subject b's rows: those Z rows equal Btilde(t), summing to 0
    assert np.abs(design.Z[1][3:].sum(axis=1)).max() < 1e-12
    _, _, t = ds.stacked()
    assert np.allclose(design.Z[1][3:], basis.eval_centered(t[3:]))


def test_design_row_ordering_matches_stack(small_design):
    ds, basis, design = small_design
    y, X, t = ds.stacked()
    assert np.array_equal(design.y, y)
    assert np.array_equal(design.X, X)
    for k in range(2):
        assert np.allclose(design.Z[k], X[:, k:k + 1] * basis.eval_centered(t))


def test_intercept_flag_follows_demeaning():
    rng = np.random.default_rng(4)
    ds = from_arrays(np.repeat(["a", "b"], 4), np.tile(np.linspace(0, 1, 4), 2),
                     rng.standard_normal(8), rng.standard_normal((8, 2)), rescale=False)
    basis = build_basis(SplineConfig(degree=3, num_internal_knots=0))
    assert build_design(ds, basis).intercept_included is True
    assert build_design(demean_within_subject(ds), basis).intercept_included is False
    assert build_design(ds, basis, intercept=False).intercept_included is False


def test_pipeline_deterministic(tmp_path):
    path = write_csv(tmp_path / "d.csv", BASIC)

    def digest():
        ds = demean_within_subject(standardize(load_long_csv(path)))
        basis = build_basis(SplineConfig(degree=3, num_internal_knots=2))
        design = build_design(ds, basis)
        parts = [design.y.tobytes(), design.X.tobytes()]
        parts += [Z.tobytes() for Z in design.Z]
        return b"".join(parts)

    assert digest() == digest()


def test_z_row_norm_bound(small_design):
    ds, basis, design = small_design
    _, X, _ = ds.stacked()
    tgrid = np.linspace(0, 1, 2001)
    bmax = np.linalg.norm(basis.eval_centered(tgrid), axis=1).max()
    for k, Z in enumerate(design.Z):
        norms = np.linalg.norm(Z, axis=1)
        assert np.all(norms <= np.abs(X[:, k]) * bmax + 1e-12)
