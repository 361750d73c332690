import math
from decimal import Decimal

import numpy as np
import pytest

from umoe import (
    DataError,
    InputError,
    Scaler,
    build_uncertain_dataset,
    dataset_from_arrays,
    global_mode,
    impute_chained,
    inject_uncertainty,
    load_csv,
    prepare_uncertain_dataset,
    synthesize_dataset,
)


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


# --- load_csv ---------------------------------------------------------------


def test_load_regression_csv(tmp_path):
    path = write_csv(tmp_path, "a,b,y\n1,2,3\n4,5,6\n7,8,9\n")
    ds = load_csv(path, "regression", "y")
    assert ds.n_instances == 3 and ds.n_features == 2
    assert ds.feature_names == ("a", "b")
    assert ds.labels.tolist() == [3.0, 6.0, 9.0]


def test_load_csv_non_numeric_cell_names_location(tmp_path):
    path = write_csv(tmp_path, "a,b,y\n1,2,3\n1,oops,3\n")
    with pytest.raises(DataError, match="line 3.*'b'"):
        load_csv(path, "regression", "y")


def test_load_classification_first_appearance_order(tmp_path):
    path = write_csv(tmp_path, "a,y\n1,B\n2,A\n3,B\n")
    ds = load_csv(path, "classification", "y")
    assert ds.labels.tolist() == [0, 1, 0]
    assert ds.class_names == ("B", "A")
    assert ds.class_count == 2


def test_load_csv_missing_label_column(tmp_path):
    path = write_csv(tmp_path, "a,b\n1,2\n")
    with pytest.raises(DataError, match="label column"):
        load_csv(path, "regression", "y")


def test_load_csv_empty_file(tmp_path):
    path = write_csv(tmp_path, "")
    with pytest.raises(DataError):
        load_csv(path, "regression", "y")


def test_load_csv_with_missing_markers(tmp_path):
    path = write_csv(tmp_path, "a,b,y\n1,,3\n4,NA,6\n7,8,9\n")
    with pytest.raises(DataError):
        load_csv(path, "regression", "y")
    masked = load_csv(path, "regression", "y", allow_missing=True)
    assert masked.n_masked == 2
    assert masked.mask[:, 1].tolist() == [True, True, False]


def test_load_csv_missing_label_cell_always_error(tmp_path):
    path = write_csv(tmp_path, "a,y\n1,\n")
    with pytest.raises(DataError, match="label"):
        load_csv(path, "regression", "y", allow_missing=True)


# --- masking ---------------------------------------------------------------


def test_inject_zero_masks_nothing():
    ds = synthesize_dataset("regression", 30, 3, seed=0)
    masked = inject_uncertainty(ds, 0.0, seed=1)
    assert masked.n_masked == 0


def test_inject_exact_count():
    ds = dataset_from_arrays(np.arange(40.0).reshape(10, 4), np.zeros(10), "regression")
    masked = inject_uncertainty(ds, 0.4, seed=5)
    assert masked.n_masked == 16  # floor(0.4 * 40)


def test_inject_deterministic_and_seed_sensitive():
    ds = synthesize_dataset("regression", 25, 4, seed=2)
    a = inject_uncertainty(ds, 0.3, seed=9)
    b = inject_uncertainty(ds, 0.3, seed=9)
    c = inject_uncertainty(ds, 0.3, seed=10)
    assert np.array_equal(a.mask, b.mask)
    assert not np.array_equal(a.mask, c.mask)


def test_inject_rejects_full_masking():
    ds = synthesize_dataset("regression", 20, 2, seed=0)
    with pytest.raises(InputError):
        inject_uncertainty(ds, 1.0, seed=0)


def test_mask_count_decimal_exact_over_grid():
    ds = dataset_from_arrays(np.zeros((21, 7)), np.zeros(21), "regression")
    for tenths in range(0, 10):
        u = tenths / 10.0
        masked = inject_uncertainty(ds, u, seed=3)
        assert masked.n_masked == int(math.floor(Decimal(str(u)) * 147))
        assert masked.u_actual == masked.n_masked / 147


# --- imputation ---------------------------------------------------------------


def test_impute_unmasked_instance_has_no_draws():
    ds = synthesize_dataset("regression", 30, 3, seed=4)
    masked = inject_uncertainty(ds, 0.2, seed=7)
    draws = impute_chained(masked, 5, 2, seed=0)
    for i in range(masked.n_instances):
        if masked.mask[i].any():
            assert draws[i] is not None and draws[i].shape == (5, int(masked.mask[i].sum()))
        else:
            assert draws[i] is None


def test_impute_perfectly_correlated_features_zero_residual():
    x1 = np.linspace(1.0, 9.0, 9)
    features = np.column_stack([x1, 2.0 * x1])
    ds = dataset_from_arrays(features, np.zeros(9), "regression")
    masked = inject_uncertainty(ds, 0.0, seed=0)
    masked.features[4, 1] = np.nan
    masked.mask[4, 1] = True
    draws = impute_chained(masked, 6, 3, seed=1)
    assert draws[4].shape == (6, 1)
    assert np.allclose(draws[4], 2.0 * x1[4], rtol=1e-9, atol=1e-9)
    assert np.ptp(draws[4]) == 0.0  # zero residual: every draw identical


def test_impute_single_feature_falls_back_to_column_statistics():
    rng = np.random.default_rng(6)
    column = rng.normal(3.0, 2.0, size=300)
    ds = dataset_from_arrays(column.reshape(-1, 1), np.zeros(300), "regression")
    masked = inject_uncertainty(ds, 0.5, seed=2)
    observed = masked.features[~masked.mask[:, 0], 0]
    draws = impute_chained(masked, 80, 1, seed=3)
    pooled = np.concatenate([d.ravel() for d in draws if d is not None])
    n = pooled.size
    assert n >= 10_000
    tol_mean = 3.0 * observed.std() / math.sqrt(n)
    assert abs(pooled.mean() - observed.mean()) < tol_mean
    assert abs(pooled.std() - observed.std()) < 4.0 * observed.std() / math.sqrt(n)


def test_impute_rejects_fully_missing_feature():
    ds = dataset_from_arrays(np.ones((5, 2)) * np.arange(5)[:, None], np.zeros(5), "regression")
    masked = inject_uncertainty(ds, 0.0, seed=0)
    masked.features[:, 1] = np.nan
    masked.mask[:, 1] = True
    with pytest.raises(DataError, match="entirely missing"):
        impute_chained(masked, 3, 1, seed=0)


def test_impute_determinism():
    ds = synthesize_dataset("regression", 40, 3, seed=8)
    masked = inject_uncertainty(ds, 0.3, seed=1)
    a = impute_chained(masked, 4, 2, seed=5)
    b = impute_chained(masked, 4, 2, seed=5)
    for da, db in zip(a, b):
        assert (da is None) == (db is None)
        if da is not None:
            assert np.array_equal(da, db)


# --- building the uncertain dataset ---------------------------------------------------------------


def test_build_centers_are_standardized_draws():
    ds = synthesize_dataset("regression", 50, 3, seed=5)
    masked = inject_uncertainty(ds, 0.3, seed=2)
    draws = impute_chained(masked, 20, 3, seed=4)
    uds = build_uncertain_dataset(masked, draws, bandwidth=0.1)
    assert uds.u_actual == masked.u_actual
    for i, inst in enumerate(uds.instances):
        cols = np.flatnonzero(masked.mask[i])
        if cols.size == 0:
            assert inst.density is None
            assert inst.certain_dims == tuple(range(3))
        else:
            assert inst.density is not None
            assert inst.density.bandwidth == 0.1
            assert inst.density.centers.shape == (20, cols.size)
            assert inst.density.uncertain_dims == tuple(cols)
            expected = (draws[i] - uds.scaler.mean[cols]) / uds.scaler.std[cols]
            assert np.allclose(inst.density.centers, expected, atol=1e-12)


def test_build_identical_draws_single_bump_mode_is_the_draw():
    features = np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 3.0], [3.0, 4.0]])
    ds = dataset_from_arrays(features, np.zeros(4), "regression")
    masked = inject_uncertainty(ds, 0.0, seed=0)
    masked.features[1, 0] = np.nan
    masked.mask[1, 0] = True
    draws = [None, np.full((5, 1), 1.5), None, None]
    uds = build_uncertain_dataset(masked, draws, bandwidth=0.1)
    inst = uds.instances[1]
    mode = global_mode(inst.density)
    expected = (1.5 - uds.scaler.mean[0]) / uds.scaler.std[0]
    assert mode.location[0] == pytest.approx(expected, abs=1e-12)


def test_scaler_round_trip():
    rng = np.random.default_rng(11)
    x = rng.normal(5, 3, size=(40, 4))
    scaler = Scaler.fit(x)
    assert np.abs(scaler.inverse_transform(scaler.transform(x)) - x).max() < 1e-10


def test_scaler_constant_column_gets_unit_std():
    x = np.column_stack([np.ones(10), np.arange(10.0)])
    scaler = Scaler.fit(x)
    assert scaler.std[0] == 1.0 and scaler.std[1] > 0


def test_prepare_pipeline_determinism():
    ds = synthesize_dataset("regression", 40, 3, seed=1)
    a = prepare_uncertain_dataset(ds, 0.4, seed=3)
    b = prepare_uncertain_dataset(ds, 0.4, seed=3)
    for ia, ib in zip(a.instances, b.instances):
        assert np.array_equal(ia.certain_values, ib.certain_values)
        if ia.density is not None:
            assert np.array_equal(ia.density.centers, ib.density.centers)


# --- synthesis ---------------------------------------------------------------


def test_synthesize_deterministic():
    a = synthesize_dataset("regression", 30, 4, seed=9)
    b = synthesize_dataset("regression", 30, 4, seed=9)
    assert np.array_equal(a.feature_matrix, b.feature_matrix)
    assert np.array_equal(a.labels, b.labels)


def test_synthesize_regression_zero_noise_exact_formula():
    ds = synthesize_dataset("regression", 25, 3, seed=4, noise_std=0.0)
    x = ds.feature_matrix
    expected = np.sin(x).sum(axis=1) + 0.1 * x[:, 0] * x[:, 1]
    assert np.array_equal(ds.labels, expected)


def test_synthesize_classification_separable_by_reference_tree():
    from sklearn.tree import DecisionTreeClassifier

    ds = synthesize_dataset("classification", 200, 2, seed=3)
    tree = DecisionTreeClassifier(max_depth=8, random_state=0)
    tree.fit(ds.feature_matrix, ds.labels)
    assert tree.score(ds.feature_matrix, ds.labels) > 0.9


def test_synthesize_validation():
    with pytest.raises(InputError):
        synthesize_dataset("regression", 10, 3, seed=0)
    with pytest.raises(InputError):
        synthesize_dataset("classification", 30, 1, seed=0)
    with pytest.raises(InputError):
        synthesize_dataset("ranking", 30, 3, seed=0)


def test_chained_sweeps_exploit_feature_correlation():
    # with strongly correlated columns the chained regressions recover a
    # masked cell far better than the column mean would
    rng = np.random.default_rng(20)
    base = rng.normal(size=400)
    features = np.column_stack([base, base + 0.1 * rng.normal(size=400), rng.normal(size=400)])
    ds = dataset_from_arrays(features, np.zeros(400), "regression")
    masked = inject_uncertainty(ds, 0.2, seed=3)
    draws = impute_chained(masked, 10, 3, seed=4)
    errs_imputed, errs_mean = [], []
    col_means = [features[~masked.mask[:, j], j].mean() for j in range(3)]
    for i in range(400):
        for slot, j in enumerate(np.flatnonzero(masked.mask[i])):
            if j == 2:
                continue  # the independent column carries no signal
            truth = features[i, j]
            errs_imputed.append(abs(draws[i][:, slot].mean() - truth))
            errs_mean.append(abs(col_means[j] - truth))
    assert np.mean(errs_imputed) < 0.5 * np.mean(errs_mean)


def test_bundle_round_trip_preserves_fit(tmp_path):
    from umoe import UMoE
    from umoe.bundle import load_dataset_bundle, save_dataset_bundle

    ds = synthesize_dataset("regression", 60, 3, seed=9)
    uds = prepare_uncertain_dataset(ds, 0.3, seed=10)
    path = str(tmp_path / "bundle.npz")
    save_dataset_bundle(path, uds)
    back = load_dataset_bundle(path)
    assert back.n_instances == uds.n_instances
    a = UMoE(n_experts=2, epochs=6, random_state=1).fit(uds)
    b = UMoE(n_experts=2, epochs=6, random_state=1).fit(back)
    X = ds.feature_matrix
    assert np.array_equal(a.predict(X), b.predict(X))


def test_subset_shares_instances():
    ds = synthesize_dataset("regression", 30, 3, seed=2)
    uds = prepare_uncertain_dataset(ds, 0.3, seed=1)
    sub = uds.subset([0, 2, 4])
    assert sub.instances[0] is uds.instances[0]
    assert sub.instances[2] is uds.instances[4]
    assert sub.n_instances == 3
