import math

import numpy as np
import pytest

from oracles import planted_dataset
from siglasso.paths import (
    DegeneratePathError,
    IndividualRecord,
    PiecewiseLinearPath,
    SamplingGrid,
    TimeSeries,
    normalize_by_tv,
    total_variation,
)
from siglasso.pipeline import (
    Dataset,
    SigLassoModel,
    build_design,
    build_lagged_dataset,
    cfi,
    dataset_scale,
    cfi_from_theta,
    feature_importance,
    feature_path,
    fit,
    held_out_mse,
    normalization_mode,
    pfi,
    pfi_from_theta,
    predict_at,
    reconstruct,
    signature_rows,
)
from siglasso.regression import layer_weights
from siglasso.signature import path_signature, sig_dim, word_index


def _series(times, values):
    values = np.asarray(values, dtype=float)
    return TimeSeries(SamplingGrid(times), values.reshape(len(times), -1))


def _record(seed, n_knots=12, targets=(0.5, 1.0), d=2, rid=""):
    rng = np.random.default_rng(seed)
    times = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, n_knots - 2)), [1.0]])
    times[np.searchsorted(times, 0.5)] = 0.5  # guarantee 0.5 is a knot
    times = np.unique(times)
    feats = _series(times, rng.standard_normal((len(times), d)))
    targ = _series(list(targets), rng.standard_normal(len(targets)))
    return IndividualRecord(feats, targ, id=rid)


def _model(theta, d=3, N=2, intercept=0.0, **kw):
    theta = np.asarray(theta, dtype=float).reshape(sig_dim(d, N), -1)
    return SigLassoModel(N, d, theta.shape[1], layer_weights(N), theta,
                         np.full(theta.shape[1], intercept), 0.0, **kw)


PLANTED_THETA = np.zeros(sig_dim(3, 3))
PLANTED_THETA[[2, 5, 9, 17, 33]] = [0.8, -1.1, 0.6, 2.0, -1.5]


class TestDataset:
    def test_counts(self):
        ds = Dataset([_record(0), _record(1, targets=(0.5,))])
        assert (ds.n, ds.d, ds.p, ds.M) == (2, 2, 1, 3)

    def test_inconsistent_channels(self):
        with pytest.raises(ValueError):
            Dataset([_record(0, d=2), _record(1, d=3)])

    def test_empty(self):
        with pytest.raises(ValueError):
            Dataset([])


class TestBuildDesign:
    def test_single_row_at_last_knot(self):
        ds = Dataset([_record(0, targets=(1.0,))])
        design = build_design(ds, 3)
        assert design.X.shape == (1, sig_dim(3, 3))
        assert design.X[0, 0] == 1.0

    def test_rows_match_independent_signatures(self):
        rec = _record(4)
        design = build_design(Dataset([rec]), 3)
        aug = np.column_stack([rec.features.times, rec.features.values])
        for row, t in zip(design.X, rec.targets.times):
            path = PiecewiseLinearPath(rec.features.times, aug)
            expected = path_signature(normalize_by_tv(path, t), 3, t).flat()
            np.testing.assert_allclose(row, expected, atol=1e-12)

    def test_order_and_index(self):
        ds = Dataset([_record(0, rid="a"), _record(1, rid="b")])
        design = build_design(ds, 2)
        assert design.index == [("a", 0.5), ("a", 1.0), ("b", 0.5), ("b", 1.0)]
        np.testing.assert_array_equal(design.Y[:, 0], np.concatenate([r.targets.values[:, 0] for r in ds]))

    def test_zero_time_row_skipped(self, caplog):
        rec = _record(0, targets=(0.0, 1.0))
        design = build_design(Dataset([rec]), 2)
        assert design.X.shape[0] == 1 and design.skipped == 1
        assert "skipped 1" in caplog.text

    def test_word_bound(self):
        ds = Dataset([_record(s) for s in range(10)])
        design = build_design(ds, 4)
        start = 0
        for k in range(5):
            block = design.X[:, start : start + 3**k]
            assert np.all(np.abs(block) <= 1 / math.factorial(k))
            start += 3**k

    def test_without_augmentation(self):
        design = build_design(Dataset([_record(0)]), 2, time_augment=False)
        assert design.X.shape[1] == sig_dim(2, 2)


class TestDatasetNormalization:
    def test_scale_is_largest_variation(self):
        ds = Dataset([_record(s) for s in range(5)])
        tvs = [total_variation(feature_path(r.features)) for r in ds]
        assert dataset_scale(ds) == pytest.approx(max(tvs), rel=1e-12)

    def test_word_bound_on_training_rows(self):
        ds = Dataset([_record(s) for s in range(10)])
        design = build_design(ds, 4, normalize="dataset", scale=dataset_scale(ds))
        start = 0
        for k in range(5):
            block = design.X[:, start : start + 3**k]
            assert np.all(np.abs(block) <= 1 / math.factorial(k) + 1e-15)
            start += 3**k

    def test_matches_raw_rows_by_scaling_law(self):
        rec = _record(3)
        raw = signature_rows(rec.features, [0.5, 1.0], 3, normalize="none")
        scaled = signature_rows(rec.features, [0.5, 1.0], 3, normalize="dataset", scale=2.5)
        layers = np.repeat(np.arange(4), [3**k for k in range(4)])
        np.testing.assert_allclose(scaled, raw * 2.5 ** (-layers.astype(float)), rtol=1e-13)

    def test_zero_time_row_is_intercept_row(self):
        rec = _record(4)
        row = signature_rows(rec.features, [0.0], 2, normalize="dataset", scale=3.0)[0]
        np.testing.assert_array_equal(row, np.eye(sig_dim(3, 2))[0])

    def test_fit_stores_scale(self):
        train = planted_dataset(12, 3, PLANTED_THETA)
        model = fit(train, depth_grid=(2,), cv_folds=3, n_lambdas=10, normalize="dataset")
        assert model.normalization == "dataset"
        assert model.path_scale == dataset_scale(train)
        rec = train.individuals[0]
        expected = signature_rows(rec.features, [1.0], 2, normalize="dataset", scale=model.path_scale)
        np.testing.assert_array_equal(model.signature_row(rec.features, 1.0), expected[0])

    @pytest.mark.parametrize("arg, mode", [(True, "prefix"), (False, "none"), (None, "none"),
                                           ("dataset", "dataset")])
    def test_mode_names(self, arg, mode):
        assert normalization_mode(arg) == mode

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            normalization_mode("zscore")


class TestPrediction:
    def test_zero_theta_gives_intercept(self):
        model = _model(np.zeros(13), intercept=2.5)
        feats = _record(0).features
        np.testing.assert_array_equal(reconstruct(model, feats, feats.times), 2.5)

    def test_time_word_only(self):
        theta = np.zeros(13)
        theta[1 + word_index((1,), 3)] = 1.7
        model = _model(theta, intercept=0.3)
        feats = _record(2).features
        aug = PiecewiseLinearPath(feats.times, np.column_stack([feats.times, feats.values]))
        for t in (0.5, 1.0):
            expected = 0.3 + 1.7 * t / total_variation(aug, t)
            assert predict_at(model, feats, t)[0] == pytest.approx(expected, abs=1e-12)

    def test_reconstruct_matches_pointwise(self):
        rng = np.random.default_rng(5)
        model = _model(rng.standard_normal((sig_dim(3, 3), 2)), N=3, intercept=0.1)
        feats = _record(3).features
        ts = np.concatenate([feats.times, rng.uniform(0, 1, 30)])
        streamed = reconstruct(model, feats, ts)
        pointwise = np.array([predict_at(model, feats, t) for t in ts])
        np.testing.assert_allclose(streamed, pointwise, atol=1e-12, rtol=0)

    def test_prefix_causal(self):
        model = _model(np.random.default_rng(1).standard_normal(40), N=3)
        rec = _record(6)
        before = predict_at(model, rec.features, 0.5)
        values = rec.features.values.copy()
        values[rec.features.times > 0.5] += 10.0
        after = predict_at(model, _series(rec.features.times, values), 0.5)
        np.testing.assert_array_equal(before, after)

    def test_first_time_is_intercept(self):
        model = _model(np.ones(13), intercept=-1.0)
        assert predict_at(model, _record(0).features, 0.0)[0] == -1.0

    def test_out_of_range(self):
        model = _model(np.ones(13))
        feats = _record(0).features
        with pytest.raises(ValueError):
            predict_at(model, feats, 1.5)
        with pytest.raises(ValueError):
            reconstruct(model, feats, [-0.1, 0.5])

    def test_degenerate_prefix(self):
        feats = _series([0.0, 1.0], [[0.0], [0.0]])
        model = _model(np.ones(sig_dim(1, 2)), d=1, time_augmented=False)
        with pytest.raises(DegeneratePathError):
            predict_at(model, feats, 0.5)
        assert np.isnan(reconstruct(model, feats, [0.5])[0, 0])


@pytest.fixture(scope="module")
def planted():
    train = planted_dataset(50, 1, PLANTED_THETA)
    test = planted_dataset(20, 2, PLANTED_THETA)
    # a deep penalty path so the smallest C is far below the planted signal
    return fit(train, depth_grid=(2, 3, 4), ratio=1e-5), train, test


class TestFit:
    def test_planted_recovery(self, planted):
        model, _, test = planted
        assert model.N == 3
        assert held_out_mse(model, test) < 1e-4

    def test_diagnostics(self, planted):
        model, train, _ = planted
        assert set(model.diagnostics["cv_curves"]) == {2, 3, 4}
        assert model.diagnostics["rows"] == train.M
        assert model.theta.shape == (sig_dim(3, model.N), 1)

    def test_fits_training_targets(self, planted):
        model, train, _ = planted
        rec = train.individuals[0]
        np.testing.assert_allclose(reconstruct(model, rec.features, rec.targets.times),
                                   rec.targets.values, atol=1e-2)

    def test_deterministic(self, planted):
        model, train, _ = planted
        again = fit(train, depth_grid=(2, 3, 4), ratio=1e-5)
        np.testing.assert_array_equal(model.theta, again.theta)
        assert model.C == again.C

    def test_threads_match_serial(self):
        train = planted_dataset(12, 3, PLANTED_THETA)
        a = fit(train, depth_grid=(2, 3), cv_folds=3, n_lambdas=20)
        b = fit(train, depth_grid=(2, 3), cv_folds=3, n_lambdas=20, threads=2)
        np.testing.assert_array_equal(a.theta, b.theta)

    @pytest.mark.parametrize("grid", [(), (0, 2), (3, 10)])
    def test_bad_depth_grid(self, grid):
        with pytest.raises(ValueError):
            fit(Dataset([_record(0)]), depth_grid=grid)

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            fit(Dataset([_record(0)]), cv_folds=5)


class TestImportance:
    def test_pfi_single_pure_word(self):
        theta = np.zeros(sig_dim(3, 2))
        theta[1 + 3 + word_index((2, 2), 3)] = 3.0
        assert pfi_from_theta(theta, 3, 2, 2) == 1.5

    def test_cfi_single_letter(self):
        theta = np.zeros(sig_dim(2, 1))
        theta[1 + word_index((2,), 2)] = 2.0
        assert cfi_from_theta(theta, 2, 1, 2) == 2.0

    def test_cfi_normalization(self):
        d, N = 3, 2
        theta = np.ones(sig_dim(d, N))
        # words containing letter 1: all words minus those over {2, 3}
        count = sig_dim(d, N) - sig_dim(d - 1, N)
        assert cfi_from_theta(theta, d, N, 1) == pytest.approx(count / count)

    def test_pfi_ignores_mixed_words(self):
        theta = np.zeros(sig_dim(3, 2))
        theta[1 + 3 + word_index((1, 2), 3)] = 5.0
        assert pfi_from_theta(theta, 3, 2, 2) == 0.0
        assert cfi_from_theta(theta, 3, 2, 3) == 0.0
        assert cfi_from_theta(theta, 3, 2, 2) > 0.0

    def test_zero_theta(self):
        model = _model(np.zeros(13))
        for row in feature_importance(model, include_time=True):
            assert row[1:] == (0.0, 0.0)

    def test_multi_response_norm(self):
        theta = np.zeros((sig_dim(2, 1), 2))
        theta[1 + word_index((2,), 2)] = [3.0, 4.0]
        assert pfi_from_theta(theta, 2, 1, 2) == 5.0

    def test_homogeneity(self):
        rng = np.random.default_rng(8)
        theta = rng.standard_normal((sig_dim(3, 3), 2))
        for letter in (1, 2, 3):
            assert pfi_from_theta(-2.5 * theta, 3, 3, letter) == pytest.approx(2.5 * pfi_from_theta(theta, 3, 3, letter))
            assert cfi_from_theta(-2.5 * theta, 3, 3, letter) == pytest.approx(2.5 * cfi_from_theta(theta, 3, 3, letter))

    def test_channel_mapping(self):
        theta = np.zeros(13)
        theta[1 + word_index((2,), 3)] = 2.0
        model = _model(theta)
        assert pfi(model, 1) == 1.0
        assert pfi(model, 2) == 0.0
        assert cfi(model, 0, include_time=True) == 0.0
        with pytest.raises(ValueError):
            pfi(model, 0)
        with pytest.raises(ValueError):
            cfi(model, 3)
        assert [row[0] for row in feature_importance(model)] == [1, 2]


class TestLagged:
    def test_count(self):
        rng = np.random.default_rng(0)
        ds = build_lagged_dataset(rng.standard_normal((20, 2)), rng.standard_normal(20), 10, 1)
        assert ds.n == 9
        assert [r.id for r in ds] == [str(t) for t in range(11, 20)]

    def test_window_contents(self):
        feats = np.arange(30.0)
        target = 100 + np.arange(30.0)
        ds = build_lagged_dataset(feats, target, 5, 3)
        for rec in ds:
            t = int(rec.id)
            assert rec.features.values[-1, 0] == feats[t - 3]
            assert rec.features.values[0, 0] == feats[t - 8]
            np.testing.assert_allclose(rec.features.times, np.linspace(0, 1, 6))
            assert rec.targets.times.tolist() == [1.0] and rec.targets.values[0, 0] == target[t]

    def test_too_short(self):
        with pytest.raises(ValueError):
            build_lagged_dataset(np.zeros(20), np.zeros(20), 10, 20)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            build_lagged_dataset(np.zeros(20), np.zeros(20), 0, 1)
        with pytest.raises(ValueError):
            build_lagged_dataset(np.zeros(20), np.zeros(19), 5, 1)


def test_signature_rows_unsorted_order():
    feats = _record(7).features
    rows = signature_rows(feats, [1.0, 0.5], 2)
    np.testing.assert_array_equal(rows[::-1], signature_rows(feats, [0.5, 1.0], 2))
