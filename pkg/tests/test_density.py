import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from umoe import (
    ClusterModel,
    DensityModel,
    InputError,
    ModeSearchConfig,
    density,
    filter_top_p,
    global_mode,
    local_mode,
    pdf_mean,
    sample,
)

SEARCH = ModeSearchConfig()


def make_1d(centers, h=0.1):
    return DensityModel(np.asarray(centers, dtype=float).reshape(-1, 1), h, (0,))


# --- density ---------------------------------------------------------------


def test_density_single_center_closed_form():
    # 1/(h * sqrt(2*pi)) evaluated independently for h = 0.1
    model = make_1d([0.0], h=0.1)
    assert density(model, np.array([0.0])) == pytest.approx(3.989422804014327, rel=1e-12)


def test_density_symmetry_two_centers():
    model = make_1d([-1.0, 1.0], h=0.3)
    assert density(model, np.array([-1.0])) == density(model, np.array([1.0]))


def test_density_far_tail_is_tiny_but_nonnegative():
    model = make_1d([0.0], h=0.1)
    value = density(model, np.array([10.0]))
    assert 0.0 <= value < 1e-300


def test_density_dimension_mismatch():
    model = make_1d([0.0])
    with pytest.raises(InputError):
        density(model, np.array([0.0, 1.0]))


def test_density_matches_brute_force_sum():
    rng = np.random.default_rng(0)
    centers = rng.normal(size=(7, 3))
    model = DensityModel(centers, 0.4, (0, 1, 2))
    x = rng.normal(size=3)
    h = 0.4
    expected = np.mean(
        [
            (2 * math.pi * h * h) ** (-1.5) * math.exp(-0.5 * float((x - c) @ (x - c)) / (h * h))
            for c in centers
        ]
    )
    assert density(model, x) == pytest.approx(expected, rel=1e-12)


# --- sampling ---------------------------------------------------------------


def test_sample_zero_count():
    drawn = sample(make_1d([1.0]), 0, seed=3)
    assert len(drawn) == 0 and drawn.densities.shape == (0,)


def test_sample_determinism():
    model = make_1d([0.0, 4.0], h=0.2)
    a = sample(model, 50, seed=9)
    b = sample(model, 50, seed=9)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.densities, b.densities)
    c = sample(model, 50, seed=10)
    assert not np.array_equal(a.points, c.points)


def test_sample_mean_single_center():
    # CLT bound 3h/sqrt(m) ~ 0.00095 << 0.01 for h=0.1, m=1e5
    drawn = sample(make_1d([5.0], h=0.1), 100_000, seed=1)
    assert abs(drawn.points.mean() - 5.0) < 0.01


def test_sample_densities_match_density():
    model = DensityModel(np.random.default_rng(5).normal(size=(4, 2)), 0.3, (0, 1))
    drawn = sample(model, 200, seed=2)
    assert np.allclose(drawn.densities, density(model, drawn.points), rtol=0, atol=1e-12)


def test_sample_negative_count_rejected():
    with pytest.raises(InputError):
        sample(make_1d([0.0]), -1, seed=0)


# --- filtering ---------------------------------------------------------------


def _sample_set(points, densities):
    from umoe.density import SampleSet

    pts = np.asarray(points, dtype=float).reshape(len(points), -1)
    return SampleSet(pts, np.asarray(densities, dtype=float), seed=0)


def test_filter_keeps_highest_half():
    s = _sample_set(np.arange(10.0), np.arange(1.0, 11.0))
    kept = filter_top_p(s, 0.5)
    assert kept.kept_count == 5
    assert sorted(kept.densities.tolist()) == [6.0, 7.0, 8.0, 9.0, 10.0]


def test_filter_p_one_keeps_all():
    s = _sample_set(np.arange(7.0), np.arange(7.0))
    assert filter_top_p(s, 1.0).kept_count == 7


def test_filter_ceil_083():
    s = _sample_set(np.arange(100.0), np.arange(100.0))
    assert filter_top_p(s, 0.83).kept_count == 83


def test_filter_tie_keeps_earlier_index():
    s = _sample_set([0.0, 1.0, 2.0, 3.0], [5.0, 1.0, 1.0, 1.0])
    kept = filter_top_p(s, 0.5)
    # cutoff density 1.0 is tied between indices 1, 2, 3: the earliest wins
    assert kept.points[:, 0].tolist() == [0.0, 1.0]


def test_filter_invalid_p():
    s = _sample_set([0.0], [1.0])
    for bad in (0.0, -0.2, 1.2):
        with pytest.raises(InputError):
            filter_top_p(s, bad)


def test_filter_count_exact_over_grid():
    from decimal import Decimal

    for m in range(1, 201):
        s = _sample_set(np.arange(float(m)), np.arange(float(m)))
        for tenths in range(1, 11):
            p = tenths / 10.0
            expected = int(math.ceil(Decimal(str(p)) * m))
            assert filter_top_p(s, p).kept_count == expected, (p, m)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(min_value=1, max_value=300),
    st.integers(min_value=1, max_value=1000),
)
def test_filter_count_random_decimal_p(m, milli_p):
    from decimal import Decimal

    p = milli_p / 1000.0
    s = _sample_set(np.arange(float(m)), np.arange(float(m)))
    expected = int(math.ceil(Decimal(str(p)) * m))
    assert filter_top_p(s, p).kept_count == expected


def test_filter_invariant_kept_ge_discarded():
    rng = np.random.default_rng(12)
    model = DensityModel(rng.normal(size=(6, 2)), 0.2, (0, 1))
    drawn = sample(model, 97, seed=4)
    kept = filter_top_p(drawn, 0.37)
    discarded = np.setdiff1d(drawn.densities, kept.densities)
    if discarded.size:
        assert kept.densities.min() >= discarded.max()


# --- mean ---------------------------------------------------------------


def test_pdf_mean_single_and_pair():
    assert pdf_mean(make_1d([3.0]))[0] == 3.0
    assert pdf_mean(make_1d([1.0, 5.0]))[0] == 3.0


def test_pdf_mean_matches_monte_carlo():
    rng = np.random.default_rng(8)
    centers = rng.normal(size=(50, 2))
    model = DensityModel(centers, 0.25, (0, 1))
    drawn = sample(model, 1_000_000, seed=77)
    assert np.abs(pdf_mean(model) - drawn.points.mean(axis=0)).max() < 0.01


# --- global mode ---------------------------------------------------------------


def test_global_mode_single_center_is_fixed_point():
    mode = global_mode(make_1d([2.5]), SEARCH)
    assert mode.location[0] == 2.5
    assert mode.kind == "global"


def test_global_mode_equal_mixture_tie_breaks_low():
    mode = global_mode(make_1d([-4.0, 2.0]), SEARCH)
    assert abs(mode.location[0] - (-4.0)) < 1e-3


def test_global_mode_degenerate_identical_centers():
    model = DensityModel(np.array([[1.5, -2.0]] * 4), 0.1, (0, 1))
    mode = global_mode(model, SEARCH)
    assert np.array_equal(mode.location, np.array([1.5, -2.0]))


def assert_matches_grid_oracle(model, mode, step=1e-4, window=1e-6):
    """The found mode must (i) reach the grid's maximal density and (ii) sit at
    one of the near-maximal grid locations.

    A strict single-argmax comparison is ill-posed: isolated peaks of a
    random mixture agree to ~1e-8 relative while the grid's own
    discretization error is ~1e-7, so near-ties are resolved by window.
    """
    lo = model.centers.min() - 1.0
    hi = model.centers.max() + 1.0
    grid = np.arange(lo, hi + step, step).reshape(-1, 1)
    values = density(model, grid)
    top = values.max()
    assert density(model, mode.location) >= top * (1 - window)
    near_max = grid[values >= top * (1 - window), 0]
    assert np.abs(near_max - mode.location[0]).min() < 1e-2


def test_global_mode_grid_oracle_20_mixtures():
    rng = np.random.default_rng(123)
    for _ in range(20):
        n_centers = int(rng.integers(1, 6))
        centers = rng.uniform(-3, 3, size=n_centers)
        h = float(rng.uniform(0.05, 0.5))
        model = make_1d(centers, h=h)
        assert_matches_grid_oracle(model, global_mode(model, SEARCH))


def test_global_mode_beats_every_sample():
    rng = np.random.default_rng(3)
    model = DensityModel(rng.normal(size=(5, 2)), 0.15, (0, 1))
    mode = global_mode(model, SEARCH)
    drawn = sample(model, 500, seed=11)
    assert mode.density_value >= drawn.densities.max() * (1 - 1e-12)
    center_best = float(np.max(density(model, model.centers)))
    assert mode.density_value >= center_best * (1 - 1e-12)


def test_global_mode_is_pure():
    model = make_1d([0.3, 0.9, -1.2], h=0.2)
    a = global_mode(model, SEARCH)
    b = global_mode(model, SEARCH)
    assert np.array_equal(a.location, b.location) and a.density_value == b.density_value


def test_mode_density_value_matches_density_at_location():
    rng = np.random.default_rng(71)
    for trial in range(10):
        model = DensityModel(rng.normal(size=(5, 2)), float(rng.uniform(0.1, 0.5)), (0, 1))
        mode = global_mode(model, SEARCH)
        assert abs(mode.density_value - density(model, mode.location)) <= 1e-12


def test_smaller_threshold_keeps_denser_core():
    model = DensityModel(np.random.default_rng(5).normal(size=(6, 2)), 0.2, (0, 1))
    drawn = sample(model, 300, seed=8)
    tight = filter_top_p(drawn, 0.2)
    loose = filter_top_p(drawn, 0.9)
    assert tight.kept_count < loose.kept_count
    assert tight.densities.min() >= loose.densities.min()


# --- local mode ---------------------------------------------------------------


def _two_cell_partition_1d():
    # centroids -4 and 2: the Voronoi boundary sits at x = -1
    return ClusterModel(np.array([[-4.0], [2.0]]))


def test_local_mode_global_already_in_cell():
    model = make_1d([-4.0, -3.0], h=0.1)
    part = _two_cell_partition_1d()
    filt = filter_top_p(sample(model, 300, seed=5), 1.0)
    gmode = global_mode(model, SEARCH)
    lmode = local_mode(model, part, 0, filt, SEARCH)
    assert np.abs(lmode.location - gmode.location).max() < 1e-6
    assert lmode.cluster == 0 and lmode.kind == "local"


def test_local_mode_restricted_to_right_cell():
    model = make_1d([-4.0, 2.0], h=0.1)
    part = _two_cell_partition_1d()
    filt = filter_top_p(sample(model, 400, seed=6), 1.0)
    lmode = local_mode(model, part, 1, filt, SEARCH)
    # grid oracle restricted to x > -1
    grid = np.arange(-1.0 + 1e-4, 4.0, 1e-4).reshape(-1, 1)
    oracle = float(grid[int(np.argmax(density(model, grid))), 0])
    assert abs(lmode.location[0] - oracle) < 1e-2


def test_local_mode_two_dimensional_bump_scenario():
    # most mass rings (-1, 3); a sharper coincident bump at (-4, 2) holds the
    # global mode, so the dominant cell's local mode differs from it
    ring = np.array(
        [[-1.0 + 0.15 * math.cos(a), 3.0 + 0.15 * math.sin(a)] for a in np.linspace(0, 2 * math.pi, 8)[:-1]]
    )
    centers = np.vstack([np.array([[-4.0, 2.0]] * 3), ring])
    model = DensityModel(centers, 0.1, (0, 1))
    part = ClusterModel(np.array([[-4.0, 2.0], [-1.0, 3.0]]))
    gmode = global_mode(model, SEARCH)
    assert np.abs(gmode.location - np.array([-4.0, 2.0])).max() < 1e-3
    filt = filter_top_p(sample(model, 500, seed=9), 1.0)
    lmode = local_mode(model, part, 1, filt, SEARCH)
    assert np.linalg.norm(lmode.location - np.array([-1.0, 3.0])) < 0.5
    from umoe import assign

    assert assign(part, lmode.location) == 1
    assert gmode.density_value >= lmode.density_value


def test_local_mode_requires_in_cell_samples():
    model = make_1d([-4.0], h=0.05)
    part = _two_cell_partition_1d()
    filt = filter_top_p(sample(model, 100, seed=2), 1.0)
    with pytest.raises(InputError):
        local_mode(model, part, 1, filt, SEARCH)


# --- invariants ---------------------------------------------------------------


def test_model_validation():
    with pytest.raises(InputError):
        DensityModel(np.empty((0, 1)), 0.1, (0,))
    with pytest.raises(InputError):
        DensityModel(np.zeros((2, 1)), 0.0, (0,))
    with pytest.raises(InputError):
        DensityModel(np.zeros((2, 2)), 0.1, (0,))
    with pytest.raises(InputError):
        DensityModel(np.zeros((2, 2)), 0.1, (1, 0))


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_density_nonnegative_everywhere(seed):
    rng = np.random.default_rng(seed)
    model = DensityModel(rng.normal(scale=2, size=(3, 2)), float(rng.uniform(0.05, 1.0)), (0, 1))
    pts = rng.normal(scale=4, size=(20, 2))
    assert np.all(density(model, pts) >= 0)
