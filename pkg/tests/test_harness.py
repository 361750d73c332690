import numpy as np
import pytest

from umoe import (
    InputError,
    NCVConfig,
    PipelineSettings,
    evaluate,
    nested_cv,
    stratified_folds,
    subspace_sweep,
    synthesize_dataset,
    threshold_sweep,
)
from umoe.harness import prepare_outer_folds, select_candidate

FAST = PipelineSettings(n_samples=40, impute_draws=8, impute_sweeps=2, hidden_layers=(8,), epochs=4)


def fast_cfg(**kw):
    base = dict(
        outer_folds=3,
        inner_folds=2,
        subspace_candidates=(2, 3),
        methods=("umoe", "nn_mode"),
        mask_fraction=0.3,
        threshold=0.8,
        seed=0,
        settings=FAST,
    )
    base.update(kw)
    return NCVConfig(**base)


# --- evaluate ---------------------------------------------------------------


def test_accuracy_two_of_three():
    assert evaluate([0, 1, 0], [0, 1, 1], "classification") == pytest.approx(2 / 3)


def test_accuracy_from_probability_rows_ties_to_lowest():
    preds = np.array([[0.5, 0.5], [0.2, 0.8]])
    assert evaluate(preds, [0, 1], "classification") == 1.0


def test_mse_examples():
    assert evaluate([1.0, 2.0], [1.0, 2.0], "regression") == 0.0
    assert evaluate([1.0, 3.0], [2.0, 2.0], "regression") == 1.0


def test_evaluate_validations():
    with pytest.raises(InputError):
        evaluate([1.0], [1.0, 2.0], "regression")
    with pytest.raises(InputError):
        evaluate([], [], "regression")


# --- folds ---------------------------------------------------------------


def test_fold_sizes_balanced():
    ds = synthesize_dataset("regression", 30, 2, seed=0)
    folds = stratified_folds(ds, 5, seed=1)
    assert [len(f) for f in folds] == [6, 6, 6, 6, 6]
    union = np.sort(np.concatenate(folds))
    assert np.array_equal(union, np.arange(30))


def test_fold_sizes_differ_by_at_most_one():
    ds = synthesize_dataset("regression", 32, 2, seed=0)
    folds = stratified_folds(ds, 5, seed=1)
    sizes = sorted(len(f) for f in folds)
    assert sizes[-1] - sizes[0] <= 1


def test_classification_folds_are_stratified():
    ds = synthesize_dataset("classification", 100, 2, seed=2)
    folds = stratified_folds(ds, 5, seed=3)
    for fold in folds:
        counts = np.bincount(ds.labels[fold], minlength=2)
        assert abs(counts[0] - counts[1]) <= 1


def test_folds_deterministic():
    ds = synthesize_dataset("regression", 40, 2, seed=4)
    a = stratified_folds(ds, 4, seed=9)
    b = stratified_folds(ds, 4, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_folds_reject_more_folds_than_rows():
    ds = synthesize_dataset("regression", 20, 2, seed=0)
    with pytest.raises(InputError):
        stratified_folds(ds, 21, seed=0)


from hypothesis import given, settings
from hypothesis import strategies as st


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=20, max_value=90), st.integers(min_value=1, max_value=12), st.booleans())
def test_fold_partition_properties(n, n_folds, classify):
    kind = "classification" if classify else "regression"
    ds = synthesize_dataset(kind, n, 2, seed=n)
    folds = stratified_folds(ds, n_folds, seed=7)
    assert len(folds) == n_folds
    union = np.concatenate(folds)
    assert len(union) == n
    assert len(np.unique(union)) == n  # disjoint and covering
    sizes = sorted(len(f) for f in folds)
    assert sizes[-1] - sizes[0] <= 1


# --- candidate selection ---------------------------------------------------------------


def test_select_candidate_rules():
    assert select_candidate({2: 0.7, 3: 0.9, 4: 0.9}, "classification") == 3
    assert select_candidate({2: 1.5, 3: 1.2, 4: 1.2}, "regression") == 3
    assert select_candidate({4: 0.5, 2: 0.5}, "classification") == 2
    assert select_candidate({2: 2.0}, "regression") == 2


# --- nested cross-validation ---------------------------------------------------------------


@pytest.fixture(scope="module")
def small_regression():
    return synthesize_dataset("regression", 72, 3, seed=5)


@pytest.fixture(scope="module")
def ncv_result(small_regression):
    return nested_cv(small_regression, fast_cfg())


def test_ncv_one_record_per_fold(ncv_result):
    assert len(ncv_result.fold_records) == 3
    for record in ncv_result.fold_records:
        assert set(record) == {"umoe", "nn_mode"}
        assert record["umoe"].n_star in (2, 3)
        assert record["umoe"].metric is not None
        assert record["nn_mode"].n_star is None


def test_ncv_aggregate_is_mean_of_folds(ncv_result):
    metrics = [r["umoe"].metric for r in ncv_result.fold_records]
    assert ncv_result.method_means["umoe"] == pytest.approx(float(np.mean(metrics)))


def test_ncv_chosen_counts_exposed(ncv_result):
    assert len(ncv_result.chosen_counts["umoe"]) == 3
    assert set(ncv_result.chosen_counts["umoe"]) <= {2, 3}


def test_ncv_single_candidate_always_chosen(small_regression):
    result = nested_cv(small_regression, fast_cfg(subspace_candidates=(2,), methods=("umoe",)))
    assert all(r["umoe"].n_star == 2 for r in result.fold_records)


def test_ncv_deterministic(small_regression):
    a = nested_cv(small_regression, fast_cfg())
    b = nested_cv(small_regression, fast_cfg())
    for ra, rb in zip(a.fold_records, b.fold_records):
        assert ra["umoe"].metric == rb["umoe"].metric
        assert ra["umoe"].n_star == rb["umoe"].n_star


def test_ncv_classification_runs_all_methods():
    ds = synthesize_dataset("classification", 60, 3, seed=6)
    cfg = fast_cfg(methods=("umoe", "moe_mode", "moe_mean", "nn_mode", "nn_mean"))
    result = nested_cv(ds, cfg)
    for record in result.fold_records:
        for method in cfg.methods:
            assert record[method].metric is not None
            assert 0.0 <= record[method].metric <= 1.0


def test_ncv_records_method_failure_and_continues(small_regression, monkeypatch):
    import umoe.harness as harness

    original = harness.make_estimator

    def broken(method, n_subspaces, threshold, settings, seed):
        if method == "nn_mode":
            raise InputError("injected failure")
        return original(method, n_subspaces, threshold, settings, seed)

    monkeypatch.setattr(harness, "make_estimator", broken)
    result = nested_cv(small_regression, fast_cfg())
    for record in result.fold_records:
        assert record["nn_mode"].error is not None
        assert record["nn_mode"].metric is None
        assert record["umoe"].metric is not None
    assert result.method_means["nn_mode"] is None


def test_no_leakage_test_fold_perturbation(small_regression):
    cfg = fast_cfg(methods=("umoe",))
    base = nested_cv(small_regression, cfg)
    # perturb every feature of outer fold 0's test rows; training artifacts
    # of fold 0 must not move
    folds = stratified_folds(small_regression, cfg.outer_folds, _outer_seed(cfg))
    perturbed = small_regression.subset(np.arange(small_regression.n_instances))
    perturbed.feature_matrix[folds[0]] += 123.456
    again = nested_cv(perturbed, cfg)
    assert base.fold_artifacts[0] == again.fold_artifacts[0]
    assert "scaler" in base.fold_artifacts[0]
    assert "draws" in base.fold_artifacts[0]
    assert "umoe_centroids" in base.fold_artifacts[0]


def _outer_seed(cfg):
    from umoe.seeding import derive_seed

    return derive_seed(cfg.seed, "outer")


def test_ncv_config_validation():
    with pytest.raises(InputError):
        NCVConfig(outer_folds=1)
    with pytest.raises(InputError):
        NCVConfig(subspace_candidates=(1,))
    with pytest.raises(InputError):
        NCVConfig(methods=("umoe", "oracle"))
    with pytest.raises(InputError):
        NCVConfig(mask_fraction=1.0)
    with pytest.raises(InputError):
        NCVConfig(threshold=0.0)


# --- subspace sweep ---------------------------------------------------------------


def test_subspace_sweep_structure(small_regression):
    cfg = fast_cfg(methods=("umoe", "moe_mode", "nn_mean"))
    result = subspace_sweep(small_regression, range(2, 5), 3, cfg)
    assert result.counts == (2, 3, 4)
    assert set(result.curves) == {"umoe", "moe_mode"}
    for method in result.curves:
        assert sorted(result.curves[method]) == [2, 3, 4]
    # single-network reference is one constant value
    assert set(result.nn_reference) == {"nn_mean"}


def test_subspace_sweep_single_count_matches_direct_cv(small_regression):
    cfg = fast_cfg(methods=("umoe",))
    a = subspace_sweep(small_regression, [2], 3, cfg)
    b = subspace_sweep(small_regression, [2], 3, cfg)
    assert a.curves["umoe"][2] == b.curves["umoe"][2]


# --- threshold sweep ---------------------------------------------------------------


def test_threshold_sweep_structure(small_regression):
    cfg = fast_cfg(methods=("umoe",), subspace_candidates=(2,))
    points = [1.0, 0.6, 0.2]
    result = threshold_sweep(small_regression, points, 2, 2, cfg)
    assert result.p_values == (1.0, 0.6, 0.2)
    assert len(result.method_means["umoe"]) == 3
    assert all(m is not None for m in result.method_means["umoe"])


def test_threshold_sweep_repeated_p_identical(small_regression):
    cfg = fast_cfg(methods=("umoe",), subspace_candidates=(2,))
    result = threshold_sweep(small_regression, [0.7, 0.7], 2, 2, cfg)
    assert result.method_means["umoe"][0] == result.method_means["umoe"][1]


def test_threshold_sweep_rejects_bad_p(small_regression):
    with pytest.raises(InputError):
        threshold_sweep(small_regression, [0.5, 0.0], 2, 2, fast_cfg())


def test_prepare_outer_folds_reusable(small_regression):
    cfg = fast_cfg(methods=("umoe",), subspace_candidates=(2,))
    prepared = prepare_outer_folds(small_regression, cfg)
    direct = nested_cv(small_regression, cfg)
    reused = nested_cv(small_regression, cfg, _prepared=prepared)
    for ra, rb in zip(direct.fold_records, reused.fold_records):
        assert ra["umoe"].metric == rb["umoe"].metric


# --- parallel execution ---------------------------------------------------------------


def test_parallel_workers_do_not_change_results(small_regression):
    serial = nested_cv(small_regression, fast_cfg(methods=("umoe",)))
    parallel = nested_cv(small_regression, fast_cfg(methods=("umoe",), workers=2))
    for ra, rb in zip(serial.fold_records, parallel.fold_records):
        assert ra["umoe"].metric == rb["umoe"].metric
        assert ra["umoe"].n_star == rb["umoe"].n_star
