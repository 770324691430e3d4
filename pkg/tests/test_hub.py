import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from dicov.datagen import chain_precision, sample_gaussian
from dicov.debias import SparseUpdate, debias, fit_and_threshold
from dicov.errors import DimensionMismatch, DuplicateMachine, InvalidParameter
from dicov.glasso import graphical_lasso
from dicov.hub import aggregate, combine, final_threshold, full_estimators, hub_variance, naive_estimator
from dicov.matrixcore import SparseSymMatrix, empirical_covariance
from dicov.metrics import support_metrics


def _update(machine_id, entries, p=2):
    rows, cols, vals = zip(*entries) if entries else ((), (), ())
    return SparseUpdate(machine_id, p, 10, SparseSymMatrix(p, rows, cols, vals), 0.0)


def test_aggregate_identical_updates():
    entries = [(0, 0, 1.0), (0, 1, 0.4), (1, 1, 1.2)]
    ups = [_update(m, entries) for m in range(3)]
    np.testing.assert_allclose(aggregate(ups), ups[0].entries.to_dense(), atol=1e-15)


def test_aggregate_missing_counts_as_zero():
    a = _update(0, [(0, 0, 1.0), (0, 1, 0.4), (1, 1, 1.0)])
    b = _update(1, [(0, 0, 1.0), (1, 1, 1.0)])
    np.testing.assert_array_equal(aggregate([a, b]), [[1.0, 0.2], [0.2, 1.0]])


def test_aggregate_single():
    a = _update(0, [(0, 0, 1.0), (0, 1, 0.4), (1, 1, 2.0)])
    np.testing.assert_array_equal(aggregate([a]), a.entries.to_dense())


def test_aggregate_errors():
    a = _update(0, [(0, 0, 1.0)])
    with pytest.raises(DuplicateMachine):
        aggregate([a, _update(0, [(0, 0, 2.0)])])
    with pytest.raises(DimensionMismatch):
        aggregate([a, _update(1, [(0, 0, 1.0)], p=3)])
    with pytest.raises(InvalidParameter):
        aggregate([])


def test_aggregate_is_permutation_invariant(rng):
    x = rng.standard_normal((120, 8))
    ups = [fit_and_threshold(x[20 * m : 20 * m + 20], 0.3, 30, m)[1] for m in range(6)]
    ref = aggregate(ups)
    for _ in range(5):
        perm = rng.permutation(6)
        assert np.array_equal(aggregate([ups[k] for k in perm]), ref)


def test_hub_variance_formula():
    v = hub_variance(np.eye(2))
    assert v[0, 1] == 1.0 and v[0, 0] == 2.0
    assert hub_variance([[2.0, 1.0], [1.0, 3.0]])[0, 1] == 7.0
    with pytest.raises(InvalidParameter):
        hub_variance([[-1.0, 0.0], [0.0, 1.0]])


@pytest.mark.parametrize("value,kept", [(0.5, True), (0.2, False)])
def test_final_threshold_examples(value, kept):
    bar = np.array([[1.0, value], [value, 1.0]])
    est = final_threshold(bar, np.ones((2, 2)), 0.3)
    assert (est.theta_final.n_offdiagonal == 1) == kept
    if kept:
        assert est.theta_final.to_dense()[0, 1] == 0.5
    np.testing.assert_array_equal(np.diag(est.theta_final.to_dense()), np.diag(bar))


def test_final_threshold_zero_tau_keeps_nonzeros(rng):
    bar = rng.standard_normal((5, 5))
    bar = bar + bar.T + 10 * np.eye(5)
    bar[0, 3] = bar[3, 0] = 0.0
    est = final_threshold(bar, hub_variance(bar), 0.0)
    np.testing.assert_array_equal(est.theta_final.to_dense(), bar)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), taus=st.lists(st.floats(0, 2), min_size=2, max_size=5))
def test_final_threshold_idempotent_and_monotone(seed, taus):
    rng = np.random.default_rng(seed)
    bar = rng.standard_normal((6, 6)) * 0.5
    bar = bar + bar.T + 6 * np.eye(6)
    var = hub_variance(bar)
    sizes = []
    for tau in sorted(taus):
        once = final_threshold(bar, var, tau).theta_final
        twice = final_threshold(once.to_dense(), var, tau).theta_final
        assert once == twice
        off = once.rows != once.cols
        assert np.all(np.abs(once.values[off]) > tau * np.sqrt(var[once.rows[off], once.cols[off]]))
        sizes.append(once.n_offdiagonal)
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


def test_naive_examples():
    a = np.array([[1.0, 0.2], [0.2, 1.0]])
    np.testing.assert_allclose(naive_estimator([a, a, a]), a, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(naive_estimator([np.eye(2), 3 * np.eye(2)]), 2 * np.eye(2))
    with pytest.raises(DimensionMismatch):
        naive_estimator([np.eye(2), np.eye(3)])


def test_naive_of_repeated_fit(rng):
    S = empirical_covariance(rng.standard_normal((30, 6)))
    fits = [graphical_lasso(S, 0.2).theta_hat for _ in range(4)]
    np.testing.assert_array_equal(naive_estimator(fits), fits[0])


def test_full_single_machine_equals_machine_fit(rng):
    x = rng.standard_normal((50, 8))
    full, _ = full_estimators(x, 0.25, 0.1)
    fit, _ = fit_and_threshold(x, 0.25, 64)
    np.testing.assert_array_equal(full, fit.theta_hat)


def test_full_large_penalty_is_diagonal(rng):
    full, _ = full_estimators(rng.standard_normal((50, 8)), 10.0, 0.1)
    assert np.count_nonzero(full - np.diag(np.diag(full))) == 0


def test_combine_matches_manual_pipeline(rng):
    x = rng.standard_normal((60, 6))
    ups = [fit_and_threshold(x[20 * m : 20 * m + 20], 0.3, 20, m)[1] for m in range(3)]
    est = combine(ups, 0.1)
    bar = aggregate(ups)
    assert np.array_equal(est.theta_bar, bar)
    assert est.theta_final == final_threshold(bar, hub_variance(bar), 0.1).theta_final
    assert est.M == 3


def _full_debiased_trials(trials=20):
    m = chain_precision(50, 0.4)
    N = 1000
    level = math.sqrt(math.log(50) / N)
    out = []
    for t in range(trials):
        _, fd = full_estimators(sample_gaussian(m, N, 500 + t), level, level)
        out.append(support_metrics(fd, m))
    return np.array(out), level, N


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="at tau*sqrt(N) ~ 1.98 the ~1176 null pairs of an unthresholded debiased "
    "matrix leave dozens of Gaussian-tail false positives, so exact support is not attainable",
)
def test_full_debiased_exact_support_rate():
    metrics, _, _ = _full_debiased_trials()
    exact = np.mean([fpr == 0 and fnr == 0 for fpr, fnr in metrics])
    assert exact >= 0.8


@pytest.mark.slow
def test_full_debiased_support_errors_follow_normal_tails():
    metrics, level, N = _full_debiased_trials()
    tail = 2 * norm.sf(level * math.sqrt(N))
    fpr_med, fnr_med = np.median(metrics, axis=0)
    print(f"median fpr {fpr_med:.4f} vs two-sided tail {tail:.4f}, median fnr {fnr_med}")
    assert fnr_med == 0.0
    assert fpr_med <= tail


@pytest.mark.slow
def test_diagonal_agreement_report():
    m = chain_precision(50, 0.4)
    x = sample_gaussian(m, 1000, 77)
    level = math.sqrt(math.log(50) / 1000)
    full, full_d = full_estimators(x, level, level)
    S = empirical_covariance(x)
    dense_d = debias(full, S)
    diag_full = np.max(np.abs(np.diag(full) - 1.0))
    diag_deb = np.max(np.abs(np.diag(full_d.to_dense()) - 1.0))
    print(f"max diagonal error: full {diag_full:.4f}, full debiased {diag_deb:.4f}")
    correction = full @ (np.linalg.inv(full) - S) @ full
    np.testing.assert_allclose(np.diag(dense_d) - np.diag(full), np.diag(correction), atol=1e-8)
