import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volbnn import dataio
from volbnn.errors import DataError


def interp_quantile(values, p):
    """Order-statistic interpolation evaluated by hand."""
    xs = sorted(values)
    h = (len(xs) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def write(tmp_path, rows, header="Date,Close"):
    path = tmp_path / "prices.csv"
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


class TestLoadCsv:
    def test_full_length_file(self, tmp_path):
        series = dataio.synthetic_ar2_series(2500, seed=3)
        path = tmp_path / "vix.csv"
        dataio.write_csv(series, path)
        loaded = dataio.load_csv(path)
        assert len(loaded) == 2500
        np.testing.assert_array_equal(loaded.closes, series.closes)
        assert loaded.dates == series.dates

    def test_single_row(self, tmp_path):
        s = dataio.load_csv(write(tmp_path, ["2020-01-02,12.5"]))
        assert len(s) == 1 and s.closes[0] == 12.5

    def test_extra_columns_ignored(self, tmp_path):
        path = write(tmp_path, ["2020-01-02,1,12.5,x", "2020-01-03,2,13.0,y"], header="Date,Open,Close,Note")
        np.testing.assert_array_equal(dataio.load_csv(path).closes, [12.5, 13.0])

    def test_shuffled_dates(self, tmp_path):
        path = write(tmp_path, ["2020-01-03,12.5", "2020-01-02,13.0"])
        with pytest.raises(DataError, match="dates not increasing"):
            dataio.load_csv(path)

    @pytest.mark.parametrize("rows,msg", [
        (["2020-13-40,12.5"], "unparsable date"),
        (["2020-01-02,abc"], "unparsable number"),
        (["2020-01-02,"], "unparsable number"),
        ([], "empty"),
    ])
    def test_bad_rows(self, tmp_path, rows, msg):
        with pytest.raises(DataError, match=msg):
            dataio.load_csv(write(tmp_path, rows))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="missing file"):
            dataio.load_csv(tmp_path / "nope.csv")

    def test_missing_column(self, tmp_path):
        with pytest.raises(DataError, match="header"):
            dataio.load_csv(write(tmp_path, ["2020-01-02,1"], header="Date,Open"))

    def test_nonpositive_close(self):
        with pytest.raises(DataError):
            dataio.PriceSeries((dt.date(2020, 1, 1),), np.array([0.0]))


class TestDescriptiveStats:
    def test_constant(self):
        s = dataio.descriptive_stats([5, 5, 5])
        assert s.mean == 5 and s.std == 0 and s.iqr == 0

    def test_quartiles_match_interpolation_oracle(self):
        s = dataio.descriptive_stats([1, 2, 3, 4])
        assert s.q25 == pytest.approx(interp_quantile([1, 2, 3, 4], 0.25))
        assert s.q50 == pytest.approx(interp_quantile([1, 2, 3, 4], 0.5))
        assert s.q75 == pytest.approx(interp_quantile([1, 2, 3, 4], 0.75))
        assert (s.q25, s.q50, s.q75) == pytest.approx((1.75, 2.5, 3.25))

    def test_sample_std(self):
        s = dataio.descriptive_stats([1.0, 2.0, 3.0, 4.0])
        assert s.std == pytest.approx(math.sqrt(sum((v - 2.5) ** 2 for v in [1, 2, 3, 4]) / 3))

    def test_empty(self):
        with pytest.raises(DataError):
            dataio.descriptive_stats([])

    @given(st.lists(st.floats(0.1, 100), min_size=1, max_size=50))
    def test_order_invariant(self, xs):
        s = dataio.descriptive_stats(xs)
        assert s.min <= s.q25 <= s.q50 <= s.q75 <= s.max
        assert s.iqr >= 0 and s.count == len(xs)


class TestScaler:
    def test_outlier_vector(self):
        p = dataio.fit_robust_scaler([0, 1, 2, 3, 100])
        vals = [0, 1, 2, 3, 100]
        assert p.median == 2
        assert p.iqr == pytest.approx(interp_quantile(vals, 0.75) - interp_quantile(vals, 0.25))

    def test_constant_rejected(self):
        with pytest.raises(DataError):
            dataio.fit_robust_scaler([3.0] * 10)

    def test_too_short(self):
        with pytest.raises(DataError):
            dataio.fit_robust_scaler([1.0, 2.0, 3.0])

    def test_reference_scaling(self):
        p = dataio.RobustScalerParams(median=16.05, iqr=8.11)
        assert dataio.scale(16.05, p) == 0.0
        assert dataio.scale(24.16, p) == pytest.approx((24.16 - 16.05) / 8.11)
        assert dataio.scale(24.16, p) == pytest.approx(1.0)

    @given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=30),
           st.floats(-100, 100), st.floats(0.01, 100))
    def test_round_trip(self, xs, med, iqr):
        p = dataio.RobustScalerParams(med, iqr)
        x = np.array(xs)
        back = dataio.inverse_scale(dataio.scale(x, p), p)
        np.testing.assert_allclose(back, x, rtol=1e-12, atol=1e-12 * (abs(med) + 1))

    def test_no_leakage(self):
        series = dataio.synthetic_ar2_series(500, seed=1).closes
        a = dataio.build_windowed_split(series, 20)
        tampered = series.copy()
        tampered[400:] *= 3.0
        b = dataio.build_windowed_split(tampered, 20)
        assert a.scaler == b.scaler


class TestWindows:
    def test_count(self):
        x, y = dataio.make_windows(np.arange(2500.0), 20)
        assert x.shape == (2480, 20) and y.shape == (2480,)

    def test_boundary(self):
        x, y = dataio.make_windows(np.arange(21.0), 20)
        assert x.shape == (1, 20) and y[0] == 20

    def test_enumeration(self):
        x, y = dataio.make_windows([1, 2, 3], 2)
        np.testing.assert_array_equal(x, [[1, 2]])
        np.testing.assert_array_equal(y, [3])

    def test_too_short(self):
        with pytest.raises(DataError):
            dataio.make_windows([1, 2], 2)

    @given(st.lists(st.floats(-10, 10), min_size=3, max_size=60), st.integers(1, 10))
    def test_reconstruction(self, xs, w):
        if len(xs) <= w:
            return
        x, y = dataio.make_windows(xs, w)
        rebuilt = np.concatenate([x[:, 0], x[-1, 1:], y[-1:]])
        np.testing.assert_array_equal(rebuilt, xs)
        for i in range(len(y)):
            assert y[i] == xs[i + w]


class TestSplit:
    @pytest.mark.parametrize("n,sizes", [(10, (8, 1, 1)), (11, (9, 1, 1)), (2500, (2000, 250, 250)),
                                         (2480, (1984, 248, 248))])
    def test_sizes(self, n, sizes):
        assert dataio.split_sizes(n) == sizes

    def test_chrono_split_windows(self):
        x, y = dataio.make_windows(np.arange(31.0), 20)
        s = dataio.chrono_split(x, y)
        assert s.sizes() == (9, 1, 1)
        assert s.idx_train.max() < s.idx_valid.min() < s.idx_test.min()

    def test_too_few(self):
        with pytest.raises(DataError):
            dataio.chrono_split(np.zeros((2, 3)), np.zeros(2))

    def test_bad_fractions(self):
        with pytest.raises(DataError):
            dataio.split_sizes(100, (0.5, 0.1, 0.1))

    def test_pipeline_counts(self):
        s = dataio.build_windowed_split(dataio.synthetic_ar2_series(2500, seed=0), 20)
        assert s.sizes() == (1980, 250, 250)
        assert s.idx_train.max() < s.idx_valid.min() < s.idx_test.min()
        assert s.idx_valid.min() == 2000 and s.idx_test.min() == 2250 and s.idx_test.max() == 2499

    def test_targets_follow_windows(self):
        series = dataio.synthetic_ar2_series(300, seed=2)
        s = dataio.build_windowed_split(series, 20)
        scaled = dataio.scale(series.closes, s.scaler)
        for name in ("train", "valid", "test"):
            x, y = s.part(name)
            idx = getattr(s, f"idx_{name}")
            np.testing.assert_allclose(y, scaled[idx])
            np.testing.assert_allclose(x[-1], scaled[idx[-1] - 20:idx[-1]])


class TestAutocorrelation:
    def test_lag_zero(self):
        rng = np.random.default_rng(0)
        assert dataio.acf(rng.normal(size=50), 5)[0] == 1.0

    def test_white_noise(self):
        rng = np.random.default_rng(1)
        n = 10_000
        r = dataio.acf(rng.normal(size=n), 20)
        assert np.all(np.abs(r[1:]) < 3 / math.sqrt(n))

    def test_ar2_pacf_cutoff(self):
        rng = np.random.default_rng(2)
        n = 10_000
        x = np.zeros(n + 100)
        e = rng.normal(size=n + 100)
        for t in range(2, n + 100):
            x[t] = 0.6 * x[t - 1] + 0.3 * x[t - 2] + e[t]
        p = dataio.pacf(x[100:], 15)
        assert abs(p[2]) > 0.2
        assert np.all(np.abs(p[3:]) < 3 / math.sqrt(n))

    def test_against_statsmodels(self):
        from statsmodels.tsa.stattools import acf as sm_acf, pacf as sm_pacf

        x = dataio.synthetic_ar2_series(400, seed=5).closes
        np.testing.assert_allclose(dataio.acf(x, 12), sm_acf(x, nlags=12, fft=False), atol=1e-10)
        np.testing.assert_allclose(dataio.pacf(x, 12), sm_pacf(x, nlags=12, method="ldb"), atol=1e-10)

    def test_zero_variance(self):
        with pytest.raises(DataError):
            dataio.acf([2.0] * 10, 3)

    def test_lag_too_large(self):
        with pytest.raises(DataError):
            dataio.acf([1.0, 2.0, 3.0], 3)


class TestNaive:
    def test_definition(self):
        np.testing.assert_array_equal(dataio.naive_forecast([1, 2, 3]), [1, 2])

    def test_constant(self):
        v = np.full(10, 7.0)
        assert np.all(dataio.naive_forecast(v) == v[1:])

    def test_too_short(self):
        with pytest.raises(DataError):
            dataio.naive_forecast([1.0])
