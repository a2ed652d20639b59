import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lotta.data import (
    DataError,
    OutcomeKind,
    bin_series,
    compute_support_bounds,
    detect_score_kind,
    normalize,
    read_csv,
    trim,
)

from .conftest import make_dataset


class TestNormalize:
    def test_range_division(self):
        ds, scale, _ = normalize([0.0, 5.0, 10.0], [1.0, 2.0, 3.0], [0, 1, 1], "continuous")
        assert np.allclose(ds.scores, [0.0, 0.5, 1.0])
        assert scale.range == 10.0

    def test_support_width_one_after_normalization(self):
        raw = np.arange(50.0, 951.0)  # ART-style trimmed integer grid
        ds, _, _ = normalize(raw, np.zeros_like(raw), np.zeros_like(raw), "continuous")
        lo, hi = ds.support
        assert abs((hi - lo) - 1.0) < 1e-12
        assert ds.score_kind.kind == "discrete-grid"
        assert abs(ds.score_kind.step - 1.0 / 900.0) < 1e-12

    def test_already_normalized_is_identity(self):
        raw = np.array([0.0, 0.25, 1.0])
        ds, scale, _ = normalize(raw, raw, [0, 0, 1], "continuous")
        assert scale.range == 1.0 and scale.offset == 0.0
        assert np.allclose(ds.scores, raw)

    def test_continuous_outcomes_unit_sd(self, rng):
        y = 3.0 + 2.5 * rng.standard_normal(500)
        x = rng.uniform(0, 10, 500)
        ds, _, yscale = normalize(x, y, np.zeros(500), "continuous")
        assert abs(np.std(ds.outcomes) - 1.0) < 1e-9
        assert np.allclose(yscale.to_raw(ds.outcomes), y, rtol=1e-10)

    def test_binary_outcomes_untouched(self, rng):
        y = (rng.random(100) < 0.4).astype(float)
        ds, _, yscale = normalize(rng.uniform(0, 1, 100), y, np.zeros(100), "binary")
        assert yscale.scale == 1.0
        assert np.array_equal(ds.outcomes, y)

    def test_round_trip_on_scores(self, rng):
        raw = rng.uniform(-40, 270, 300)
        ds, scale, _ = normalize(raw, np.zeros(300), np.zeros(300), "continuous")
        back = scale.to_raw(ds.scores)
        assert np.allclose(back, raw, rtol=1e-10)

    def test_degenerate_range_rejected(self):
        with pytest.raises(DataError):
            normalize([1.0, 1.0], [0.0, 1.0], [0, 1], "continuous")

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(DataError):
            normalize([1.0, 2.0], [0.0], [0, 1], "continuous")

    def test_bad_binary_outcomes_rejected(self):
        with pytest.raises(DataError):
            normalize([0.0, 1.0], [0.0, 0.5], [0, 1], "binary")

    @given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=60, unique=True))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_property(self, raw):
        raw = np.asarray(raw)
        if raw.max() - raw.min() <= 1e-9:
            return
        ds, scale, _ = normalize(raw, np.zeros_like(raw), np.zeros_like(raw), "continuous")
        assert np.allclose(scale.to_raw(ds.scores), raw, rtol=1e-10, atol=1e-12)


def _brute_force_dx(scores):
    # smallest radius around each interior point covering one value strictly
    # below and one strictly above, by scanning every other observation
    values = np.unique(scores)
    radii = []
    for v in values:
        below = values[values < v]
        above = values[values > v]
        if below.size and above.size:
            radii.append(max(v - below.max(), above.min() - v))
    return max(radii)


class TestSupportBounds:
    def test_grid_step(self):
        x = np.arange(0, 120, dtype=float)
        ds = make_dataset(x, np.zeros(120), np.zeros(120))
        ds = make_dataset(x, np.zeros(120), np.zeros(120))
        object.__setattr__(ds, "score_kind", detect_score_kind(x))
        sb = compute_support_bounds(ds, n=25)
        assert sb.d_x == 1.0

    def test_counting_example(self):
        x = np.round(np.arange(0.0, 1.05, 0.1), 10)
        ds = make_dataset(x, np.zeros(11), np.zeros(11))
        sb = compute_support_bounds(ds, n=2)
        assert abs(sb.l_n - 0.1) < 1e-12
        assert abs(sb.u_n - 0.9) < 1e-12

    def test_dx_against_brute_force(self, rng):
        x = 2.0 * rng.beta(2, 4, 500) - 1.0
        ds = make_dataset(x, np.zeros(500), np.zeros(500))
        sb = compute_support_bounds(ds, n=25)
        assert abs(sb.d_x - _brute_force_dx(x)) < 1e-12

    def test_permutation_invariance(self, rng):
        x = rng.uniform(0, 1, 300)
        ds1 = make_dataset(x, np.zeros(300), np.zeros(300), support=(0.0, 1.0))
        perm = rng.permutation(300)
        ds2 = make_dataset(x[perm], np.zeros(300), np.zeros(300), support=(0.0, 1.0))
        a = compute_support_bounds(ds1)
        b = compute_support_bounds(ds2)
        assert (a.d_x, a.l_n, a.u_n) == (b.d_x, b.l_n, b.u_n)

    def test_minimality_over_observed_candidates(self, rng):
        x = rng.uniform(0, 1, 200)
        ds = make_dataset(x, np.zeros(200), np.zeros(200))
        sb = compute_support_bounds(ds, n=25)
        assert np.sum(x <= sb.l_n) >= 25
        assert np.sum(x >= sb.u_n) >= 25
        for v in x[x < sb.l_n]:
            assert np.sum(x <= v) < 25
        for v in x[x > sb.u_n]:
            assert np.sum(x >= v) < 25

    def test_too_few_points(self, rng):
        x = rng.uniform(0, 1, 30)
        ds = make_dataset(x, np.zeros(30), np.zeros(30))
        with pytest.raises(DataError):
            compute_support_bounds(ds, n=25)


class TestTrim:
    def test_focus_region(self):
        raw = np.arange(50.0, 951.0)
        ds, scale, _ = normalize(raw, np.zeros_like(raw), np.zeros_like(raw), "continuous")
        trimmed = trim(ds, float(scale.to_normalized(200)), float(scale.to_normalized(500)))
        back = scale.to_raw(trimmed.scores)
        assert back.min() >= 200 and back.max() <= 500
        assert len(trimmed) == 301
        # scale untouched: the same transform still recovers raw values
        assert np.allclose(scale.to_raw(trimmed.scores), np.arange(200.0, 501.0))

    def test_identity(self, step_dataset):
        out = trim(step_dataset, *step_dataset.support)
        assert len(out) == len(step_dataset)
        assert np.array_equal(out.scores, step_dataset.scores)

    def test_row_count(self, rng):
        x = np.linspace(0, 1, 101)
        ds = make_dataset(x, np.zeros(101), np.zeros(101))
        out = trim(ds, 0.1, 1.0)
        assert len(out) == 101 - 10

    def test_empty_result(self, step_dataset):
        with pytest.raises(DataError):
            trim(step_dataset, 5.0, 6.0)

    def test_bad_bounds(self, step_dataset):
        with pytest.raises(DataError):
            trim(step_dataset, 0.5, 0.5)


class TestBinSeries:
    def test_constant_treatment(self, rng):
        x = rng.uniform(-1, 1, 200)
        ds = make_dataset(x, np.ones(200), np.zeros(200), support=(-1.0, 1.0))
        t_series, _ = bin_series(ds, 0.0, 5)
        assert np.allclose(t_series.bin_means[t_series.bin_counts > 0], 1.0)

    def test_edges_meet_at_split(self, rng):
        x = np.concatenate([-rng.uniform(0, 1, 100), rng.uniform(0, 1, 100)])
        ds = make_dataset(x, np.zeros(200), np.zeros(200), support=(-1.0, 1.0))
        t_series, _ = bin_series(ds, 0.0, 4)
        left_centers = t_series.bin_centers[:4]
        right_centers = t_series.bin_centers[4:]
        assert np.allclose(left_centers, -1 + 0.125 + 0.25 * np.arange(4))
        assert np.allclose(right_centers, 0.125 + 0.25 * np.arange(4))
        assert left_centers.max() < 0.0 < right_centers.min()

    def test_counts_sum_and_no_straddle(self, step_dataset):
        t_series, y_series = bin_series(step_dataset, 0.1, 7)
        assert t_series.bin_counts.sum() == len(step_dataset)
        assert y_series.bin_counts.sum() == len(step_dataset)
        # no bin interval contains the split point in its interior
        width_left = (0.1 - step_dataset.support[0]) / 7
        width_right = (step_dataset.support[1] - 0.1) / 7
        for center in t_series.bin_centers:
            half = width_left / 2 if center < 0.1 else width_right / 2
            assert not (center - half < 0.1 < center + half)

    def test_against_analytic_binned_take_up(self):
        # large fuzzy sample: bin means of T track the average of p over each
        # bin under the score density (independent quadrature oracle)
        from scipy import integrate, stats

        from lotta.simulate import ScenarioSpec, gen_dataset, treatment_fn

        spec = ScenarioSpec.from_name("2A", n=40000, seed=5)
        ds = gen_dataset(spec, 0)
        t_series, _ = bin_series(ds, 0.0, 4)
        density = lambda x: 0.5 * stats.beta(2, 4).pdf((x + 1) / 2)
        lo, hi = ds.support
        edges = np.concatenate([np.linspace(lo, 0, 5), np.linspace(0, hi, 5)[1:]])
        for k in range(8):
            a, b = edges[k], edges[k + 1]
            num = integrate.quad(lambda x: treatment_fn("p1", x) * density(x), a, b)[0]
            den = integrate.quad(density, a, b)[0]
            if t_series.bin_counts[k] > 200:
                assert abs(t_series.bin_means[k] - num / den) < 0.05
        # visible step across the cutoff of roughly the take-up jump
        assert 0.45 < t_series.bin_means[4] - t_series.bin_means[3] < 0.75

    def test_argument_validation(self, step_dataset):
        with pytest.raises(DataError):
            bin_series(step_dataset, 5.0, 4)
        with pytest.raises(DataError):
            bin_series(step_dataset, 0.0, 0)


class TestCsv:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text("score,treatment,outcome\n1.5,0,2.25\n2.5,1,3.5\n")
        s, t, y = read_csv(path)
        assert np.allclose(s, [1.5, 2.5])
        assert np.allclose(t, [0, 1])
        assert np.allclose(y, [2.25, 3.5])

    def test_missing_value_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("score,treatment,outcome\n1.5,,2.25\n")
        with pytest.raises(DataError):
            read_csv(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,t,y\n1,0,2\n")
        with pytest.raises(DataError):
            read_csv(path)

    def test_non_binary_treatment_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("score,treatment,outcome\n1.0,0.5,2.0\n")
        with pytest.raises(DataError):
            read_csv(path)


class TestScoreKind:
    def test_integer_grid(self):
        assert detect_score_kind(np.array([3.0, 1.0, 2.0, 5.0, 4.0])).kind == "discrete-grid"

    def test_unequal_gaps_are_continuous(self):
        # grid detection demands a single gap value; holes break it
        kind = detect_score_kind(np.array([0.0, 1.0, 2.0, 5.0, 6.0]))
        assert kind.kind == "continuous"

    def test_continuous(self, rng):
        assert detect_score_kind(rng.standard_normal(50)).kind == "continuous"


def test_outcome_kind_validation():
    with pytest.raises(DataError):
        OutcomeKind("bounded")
    assert OutcomeKind("bounded", 0.0, 1.0).hi == 1.0
