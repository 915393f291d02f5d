import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from predsel.core import SubmodelIndicator, apply_standardization, standardize
from predsel.criteria import fitted_predictor
from predsel.errors import LengthMismatch
from predsel.gauss import fit
from predsel.model_space import enumerate_posterior, map_model, median_model
from predsel.search import (METHODS, MethodSettings, SearchPath, SizeSelectionInput, bayesian_bootstrap_prob,
                            bias_gap, cv_search, forward_search, run_method, select_by_criterion,
                            select_by_explanatory_power, select_size)
from predsel.simgen import SimConfig, generate

from conftest import toy_regression


def test_dominant_candidate_goes_first():
    path = forward_search(5, lambda sub: float(sub.gamma[3]), max_size=1)
    assert path.order == (3,)


def test_ties_go_to_the_smallest_index():
    path = forward_search(6, lambda sub: float(sub.gamma[2] or sub.gamma[5]), max_size=1)
    assert path.order == (2,)


def test_additive_criterion_matches_exhaustive_greedy():
    gain = np.array([0.3, -0.2, 0.9, 0.1])
    pair = 0.5  # bonus when 1 and 4 are both in

    def crit(sub):
        b = np.array(sub.gamma[1:])
        return float(gain @ b + pair * (b[0] and b[3]))

    path = forward_search(4, crit)
    chosen, values = [], [0.0]
    for _ in range(4):
        cand = {j: crit(SubmodelIndicator.from_variables(4, chosen + [j])) for j in range(1, 5) if j not in chosen}
        j = max(cand, key=lambda k: (cand[k], -k))
        chosen.append(j)
        values.append(cand[j])
    assert list(path.order) == chosen
    assert np.allclose(path.criterion_values, values)


def test_prefixes_define_nested_submodels():
    path = forward_search(5, lambda sub: -abs(sub.size - 3) + 0.01 * sub.gamma[5])
    subs = [path.submodel(m) for m in range(6)]
    for a, b in zip(subs, subs[1:]):
        assert set(a.variables) < set(b.variables)


def test_select_by_criterion():
    assert select_by_criterion(SearchPath(3, (1, 2, 3), [3.0, 2.0, 1.0, 0.0])).size == 0
    path = SearchPath(5, (4, 1, 2, 5, 3), [0, 1, 2, 5, 3, 5])
    assert select_by_criterion(path).variables == (1, 2, 4)
    r = np.random.default_rng(0).standard_normal(7)
    path = SearchPath(6, (6, 5, 4, 3, 2, 1), r)
    assert select_by_criterion(path).size == int(np.argmax(r))


def test_select_by_explanatory_power():
    d = np.array([1.0, 0.5, 0.04, 0.01])
    path = SearchPath(3, (2, 1, 3), -d, "bma_proj", d)
    assert np.allclose(path.explanatory_power(), [0, 0.5, 0.96, 0.99])
    assert select_by_explanatory_power(path).size == 2
    assert select_by_explanatory_power(path, 0.0).size == 0
    full = SearchPath(3, (2, 1, 3), -d, "bma_proj", [1.0, 0.5, 0.04, 0.0])
    assert select_by_explanatory_power(full, 1.0).size == 3


def test_path_json_round_trip():
    path = SearchPath(4, (3, 1), [0.1, 0.2, 0.25], "bma_proj", [0.3, 0.2, 0.1])
    back = SearchPath.from_dict(__import__("json").loads(path.to_json()))
    assert back.to_json() == path.to_json()
    assert back.order == (3, 1) and np.array_equal(back.discrepancies, path.discrepancies)
    with pytest.raises(ValueError):
        SearchPath(3, (1, 1), [0, 0, 0])


def test_bootstrap_probability_limits():
    assert bayesian_bootstrap_prob([0.1, 0.5, 0.0], 0.0, 2000, 1) == 1.0
    assert bayesian_bootstrap_prob([-0.1, -0.5, -2.0], 0.0, 2000, 1) == 0.0
    assert bayesian_bootstrap_prob([-1.0, 1.0], 0.0, 100_000, 2) == pytest.approx(0.5, abs=0.01)
    with pytest.raises(ValueError):
        bayesian_bootstrap_prob([], 0.0)


@hsettings(max_examples=15)
@given(st.integers(0, 1000))
def test_bootstrap_is_exchangeable(seed):
    r = np.random.default_rng(seed)
    d = r.standard_normal(15) + 0.2
    a = bayesian_bootstrap_prob(d, 0.0, 20_000, seed)
    b = bayesian_bootstrap_prob(r.permutation(d), 0.0, 20_000, seed + 1)
    assert abs(a - b) < 0.03


def _size_input(offsets, n=50, seed=0):
    r = np.random.default_rng(seed)
    ref = r.standard_normal(n)
    noise = 0.05 * r.standard_normal((len(offsets), n))
    return SizeSelectionInput(ref[None, :] + np.asarray(offsets)[:, None] + noise, ref)


def test_select_size_rules():
    dec = select_size(_size_input([0.0, 0.0, 0.0]), -0.05, 0.95, 2000, 0)
    assert dec.m == 0 and dec.satisfied
    dec = select_size(_size_input([-1.0, -0.8, -0.5]), 0.0, 0.95, 2000, 0)
    assert dec.m == 2 and not dec.satisfied
    inp = _size_input([-2.0, -1.0, -0.5, -0.2, 0.0, 0.01])
    dec = select_size(inp, -0.05, 0.95, 2000, 0)
    assert dec.m == 4 and dec.satisfied
    assert all(dec.probabilities[:4] < 0.95) and dec.probabilities[4] >= 0.95
    assert dec.to_dict()["m"] == 4
    with pytest.raises(ValueError):
        select_size(inp, 0.0, 1.0)


@hsettings(max_examples=25)
@given(st.integers(0, 1000), st.floats(0.5, 0.99), st.floats(0.5, 0.99), st.floats(-0.3, 0.0), st.floats(-0.3, 0.0))
def test_select_size_is_monotone(seed, a1, a2, u1, u2):
    r = np.random.default_rng(seed)
    inp = _size_input(np.sort(-np.abs(r.standard_normal(6)) * 0.3), n=30, seed=seed)
    lo, hi = sorted([a1, a2])
    assert select_size(inp, u1, lo, 1000, seed).m <= select_size(inp, u1, hi, 1000, seed).m
    ulo, uhi = sorted([u1, u2])
    assert select_size(inp, ulo, lo, 1000, seed).m <= select_size(inp, uhi, lo, 1000, seed).m


def test_size_input_checks_lengths():
    with pytest.raises(LengthMismatch):
        SizeSelectionInput(np.zeros((3, 5)), np.zeros(4))
    inp = SizeSelectionInput(np.array([[0.0, -1.0], [0.5, 0.5]]), np.array([1.0, 1.0]))
    assert inp.utility_gap() == pytest.approx(1.5)


def test_bias_gap():
    v = np.array([-1.5, -1.2, -1.1])
    assert np.allclose(bias_gap(v, v), 0.0)
    assert np.allclose(bias_gap(v + 0.3, v), 0.3)
    assert np.allclose(bias_gap(v, np.tile(v[:, None], (1, 4))), 0.0)
    with pytest.raises(LengthMismatch):
        bias_gap(v, v[:2])


@pytest.fixture(scope="module")
def small():
    return toy_regression(40, 5, seed=3, signal=0.7)


@pytest.mark.parametrize("method", METHODS)
def test_every_method_runs(small, method):
    s = MethodSettings(exact=True, draws=200)
    sel = run_method(method, small, s, seed=1)
    assert sel.selected.p == 5
    if sel.path is not None:
        assert sel.selected.variables == tuple(sorted(sel.path.order[:sel.selected.size]))
    if method in ("cv10", "waic", "dic", "l2", "l2cv", "l2k"):
        assert sel.path.max_size == 5 and len(sel.path.criterion_values) == 6
    assert run_method(method, small, s, seed=1).selected == sel.selected


def test_posterior_summaries_match_enumeration(small):
    s = MethodSettings(exact=True)
    post = enumerate_posterior(small, s.gprior, s.mprior)
    assert run_method("map", small, s).selected == map_model(post)
    assert run_method("mpp_median", small, s).selected == median_model(post.inclusion)


def test_projection_path_is_monotone(small):
    sel = run_method("bma_proj", small, MethodSettings(exact=True, draws=300), seed=2)
    phi = sel.path.explanatory_power()
    assert np.all(np.diff(sel.path.discrepancies) <= 1e-12)
    assert np.all(np.diff(phi) >= -1e-12) and phi[0] == 0.0 and phi[-1] <= 1.0


def test_unknown_method():
    with pytest.raises(ValueError):
        run_method("lasso", toy_regression(10, 2), MethodSettings())


def test_leave_one_out_layout():
    data = toy_regression(12, 3, seed=4, signal=0.8)
    inp = cv_search(data, "bma_proj", MethodSettings(exact=True, draws=2000), K_outer=12, seed=0)
    assert inp.reference_pointwise.shape == (12,)
    assert inp.size_pointwise.shape == (4, 12)
    assert sorted(np.bincount(inp.fold_of)) == [1] * 12
    assert len(inp.paths) == 12
    # the full projection reproduces the draws, so only Monte-Carlo error separates it from the BMA
    diff = np.abs(inp.size_pointwise[-1] - inp.reference_pointwise)
    assert np.max(diff) < 0.15 and np.mean(diff) < 0.03
    assert np.all(np.isfinite(inp.size_pointwise))


def test_cv_search_needs_a_path_method(small):
    with pytest.raises(ValueError):
        cv_search(small, "map", MethodSettings(exact=True))


def test_selection_inside_cv_is_optimistic():
    gaps = []
    for rep in range(4):
        train, _, test = generate(SimConfig(n=100, p=30, seed=rep), n_test=2000)
        train = standardize(train)
        test = apply_standardization(test, train)
        s = MethodSettings(folds=10)
        sel = run_method("cv10", train, s, seed=rep)
        m = sel.selected.size
        test_mlpd = fitted_predictor(fit(train, sel.selected, s.gprior))(test.X, test.y).mean()
        gaps.append(sel.path.criterion_values[m] - test_mlpd)
    assert np.mean(gaps) > 0
