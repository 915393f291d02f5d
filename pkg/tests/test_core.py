import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from predsel.core import (Dataset, PosteriorDraws, PredictiveMixture, SubmodelIndicator, apply_standardization,
                          mixture_log_density, read_csv, standardize, write_csv)
from predsel.errors import ConstantColumn, DimensionMismatch


def test_two_point_column_is_symmetric_with_unit_sample_sd():
    ds = standardize(Dataset([[2.0], [4.0]], [0.0, 1.0]))
    # sample sd (divisor n - 1) of (2, 4) is sqrt(2)
    assert np.allclose(ds.X[:, 0], [-1 / np.sqrt(2), 1 / np.sqrt(2)])
    assert np.isclose(ds.X[:, 0].std(ddof=1), 1.0)
    assert ds.column_means[0] == 3.0
    assert np.isclose(ds.column_sds[0], np.sqrt(2.0))


def test_standardize_is_idempotent(rng):
    ds = standardize(Dataset(rng.standard_normal((10, 3)) * 5 + 2, rng.standard_normal(10)))
    assert standardize(ds) == ds


def test_random_matrix_moments(rng):
    ds = standardize(Dataset(rng.standard_normal((3, 2)) * [3.0, 0.1] + [7.0, -2.0], rng.standard_normal(3)))
    assert np.allclose(ds.X.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(ds.X.std(axis=0, ddof=1), 1.0, atol=1e-12)


def test_constant_column_reports_its_index():
    with pytest.raises(ConstantColumn) as err:
        standardize(Dataset([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]], [0, 1, 2]))
    assert err.value.column == 2


@given(st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=6), st.floats(1e-3, 1e3))
def test_standardized_moments_hold_for_badly_scaled_columns(vals, scale):
    col = np.array(vals) * scale + 1e4
    if np.std(col) < 1e-6 * max(1.0, np.abs(col).max()):
        return
    ds = standardize(Dataset(col[:, None], np.zeros(6)))
    assert abs(ds.X.mean()) <= 1e-10 and abs(ds.X.std(ddof=1) - 1) <= 1e-10


def test_dataset_rejects_bad_input():
    with pytest.raises(ValueError):
        Dataset([[np.nan]], [1.0])
    with pytest.raises(ValueError):
        Dataset([[1.0], [2.0]], [1.0, np.inf])
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2)), [])
    with pytest.raises(DimensionMismatch):
        Dataset([[1.0], [2.0]], [1.0])
    with pytest.raises(ValueError):
        Dataset([[1.0], [3.0]], [0.0, 0.0], standardized=True)


def test_dataset_arrays_are_read_only(rng):
    ds = Dataset(rng.standard_normal((4, 2)), rng.standard_normal(4))
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0


def test_test_set_transformed_with_training_moments(rng):
    train = standardize(Dataset(rng.standard_normal((20, 2)) + 4, rng.standard_normal(20)))
    raw = Dataset(rng.standard_normal((5, 2)) + 4, rng.standard_normal(5))
    out = apply_standardization(raw, train)
    assert np.allclose(out.X, (raw.X - train.column_means) / train.column_sds)


def test_csv_round_trip(tmp_path, rng):
    raw = Dataset(rng.standard_normal((7, 3)) * 2 + 1, rng.standard_normal(7), names=("a", "b", "c"))
    write_csv(standardize(raw), tmp_path / "d.csv")
    back = read_csv(tmp_path / "d.csv", standardize_data=False)
    assert np.allclose(back.X, raw.X, atol=1e-12) and np.array_equal(back.y, raw.y)
    assert back.names == ("a", "b", "c")
    assert read_csv(tmp_path / "d.csv") == standardize(back)


# --- indicators ----------------------------------------------------------


def test_indicator_keeps_intercept():
    with pytest.raises(ValueError):
        SubmodelIndicator((0, 1, 0))
    g = SubmodelIndicator.from_variables(4, [3, 1])
    assert g.gamma == (1, 1, 0, 1, 0)
    assert g.size == 2 and g.variables == (1, 3)
    assert list(g.columns) == [0, 1, 3]


@given(st.integers(0, 12).flatmap(lambda p: st.tuples(st.just(p), st.integers(0, 2 ** p - 1))))
def test_indicator_encodings_round_trip(pm):
    p, mask = pm
    g = SubmodelIndicator.from_mask(p, mask)
    assert g.mask == mask
    assert SubmodelIndicator.from_bitstring(g.bitstring) == g
    assert SubmodelIndicator.from_variables(p, g.variables) == g
    assert 0 <= g.size <= p


# --- draws ------------------------------------------------------------------


def test_draws_validate_shapes_and_signs():
    sub = SubmodelIndicator.from_variables(3, [2])
    with pytest.raises(DimensionMismatch):
        PosteriorDraws(sub, np.zeros((2, 3)), [1.0, 1.0])
    with pytest.raises(ValueError):
        PosteriorDraws(sub, np.zeros((2, 2)), [1.0, 0.0])


def test_draws_csv_import(tmp_path, rng):
    full = SubmodelIndicator.full(2)
    d = PosteriorDraws(full, rng.standard_normal((5, 3)), rng.uniform(0.5, 2, 5), 1)
    d.to_csv(tmp_path / "draws.csv")
    back = PosteriorDraws.from_csv(tmp_path / "draws.csv")
    assert back.subset == full
    assert np.array_equal(back.w, d.w) and np.array_equal(back.sigma2, d.sigma2)
    assert back.digest == d.digest
    # headerless rows are accepted too
    (tmp_path / "raw.csv").write_text("2.0,0.1,0.2,0.3\n1.5,0,0,1\n")
    raw = PosteriorDraws.from_csv(tmp_path / "raw.csv")
    assert raw.sigma2.tolist() == [2.0, 1.5] and raw.w.shape == (2, 3)


# --- mixtures ---------------------------------------------------------------


def test_standard_gaussian_log_density():
    assert np.isclose(mixture_log_density(PredictiveMixture.gaussian(0.0, 1.0), 0.0), -0.5 * np.log(2 * np.pi))
    assert np.isclose(-0.5 * np.log(2 * np.pi), -0.9189, atol=1e-4)


def test_duplicate_components_equal_single():
    one = PredictiveMixture.gaussian(0.3, 2.0)
    two = PredictiveMixture(np.log([0.5, 0.5]), [0.3, 0.3], [2.0, 2.0])
    assert np.isclose(mixture_log_density(one, 1.7), mixture_log_density(two, 1.7))


def test_two_gaussian_mixture_value():
    m = PredictiveMixture(np.log([0.5, 0.5]), [0.0, 1.0], [1.0, 1.0])
    oracle = np.log(0.5 * stats.norm.pdf(0) + 0.5 * stats.norm.pdf(1))
    assert np.isclose(mixture_log_density(m, 0.0), oracle, atol=1e-12)
    assert np.isclose(oracle, -1.1380, atol=1e-4)


def test_student_components_match_scipy():
    m = PredictiveMixture(np.log([0.25, 0.75]), [0.0, 2.0], [1.5, 0.5], [4.0, np.inf])
    y = np.array([-3.0, 0.1, 2.2, 9.0])
    oracle = np.log(0.25 * stats.t.pdf(y, 4, 0, 1.5) + 0.75 * stats.norm.pdf(y, 2, 0.5))
    assert np.allclose(m.logpdf(y), oracle, atol=1e-12)
    assert m.family == ("student_t", "gaussian")


def test_mixture_weights_must_normalize():
    with pytest.raises(ValueError):
        PredictiveMixture(np.log([0.5, 0.6]), [0, 0], [1, 1])


mixtures = st.integers(1, 10).flatmap(lambda k: st.tuples(
    st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k),
    st.lists(st.floats(-5, 5), min_size=k, max_size=k),
    st.lists(st.floats(0.1, 3.0), min_size=k, max_size=k),
    st.lists(st.one_of(st.just(np.inf), st.floats(30, 500)), min_size=k, max_size=k)))


@given(mixtures)
def test_mixture_integrates_to_one(parts):
    w, loc, scale, dof = map(np.array, parts)
    m = PredictiveMixture(np.log(w / w.sum()), loc, scale, dof)
    lo, hi = np.min(loc - 12 * scale), np.max(loc + 12 * scale)
    grid = np.linspace(lo, hi, 20001)
    assert abs(np.trapezoid(np.exp(m.logpdf(grid)), grid) - 1.0) < 1e-4


@given(mixtures, st.floats(-10, 10), st.randoms(use_true_random=False))
def test_mixture_density_permutation_invariant(parts, y, rnd):
    w, loc, scale, dof = map(np.array, parts)
    perm = list(range(w.size))
    rnd.shuffle(perm)
    lw = np.log(w / w.sum())
    a = PredictiveMixture(lw, loc, scale, dof)
    b = PredictiveMixture(lw[perm], loc[perm], scale[perm], dof[perm])
    assert np.isclose(mixture_log_density(a, y), mixture_log_density(b, y), rtol=1e-12, atol=1e-12)
    assert np.isfinite(mixture_log_density(a, y))


def test_mixture_moments_total_variance():
    m = PredictiveMixture(np.log([0.5, 0.5]), [-1.0, 1.0], [1.0, 1.0])
    assert np.allclose(m.mean_var(), (0.0, 2.0))
    assert np.allclose(PredictiveMixture.gaussian(3.0, 2.0).mean_var(), (3.0, 4.0))
