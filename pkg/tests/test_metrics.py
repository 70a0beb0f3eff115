import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from volbnn import metrics
from volbnn.errors import DataError


def test_perfect_fit():
    y = np.array([0.5, -1.0, 2.0, 3.0])
    r = metrics.compute_metrics(y, y)
    assert (r.loss, r.mae, r.rmse, r.mape, r.msle, r.smape) == (0, 0, 0, 0, 0, 0)
    assert r.r2 == 1.0


def test_hand_example():
    r = metrics.compute_metrics([1, 2], [2, 2])
    assert r.mae == 0.5
    assert r.rmse == pytest.approx(math.sqrt(0.5))
    # |1-2|/1 and |2-2|/2 averaged, in percent
    assert r.mape == pytest.approx(50.0)
    assert r.loss == pytest.approx(0.25)
    assert r.smape == pytest.approx(100 * (2 / 3) / 2)


def test_huber_linear_region():
    r = metrics.compute_metrics([0.0], [3.0], huber_delta=1.0)
    assert r.loss == pytest.approx(2.5)


def test_msle_shift_recorded():
    r = metrics.compute_metrics([-2.0, 1.0], [-1.0, 0.0])
    assert r.msle_shift == 3.0
    expected = np.mean((np.log1p(np.array([-2.0, 1.0]) + 3) - np.log1p(np.array([-1.0, 0.0]) + 3)) ** 2)
    assert r.msle == pytest.approx(expected)


def test_length_mismatch():
    with pytest.raises(DataError):
        metrics.compute_metrics([1, 2], [1])


@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=40))
def test_properties(pairs):
    y, p = map(np.array, zip(*pairs))
    r = metrics.compute_metrics(y, p)
    mse = np.mean((y - p) ** 2)
    assert r.rmse ** 2 == pytest.approx(mse, rel=1e-12, abs=1e-12)
    assert r.mae <= r.rmse + 1e-12
    assert r.rmse + 1e-12 >= abs(np.mean(y - p))
    assert min(r.mae, r.rmse, r.msle, r.smape) >= 0
    perm = np.random.default_rng(0).permutation(len(y))
    r2 = metrics.compute_metrics(y[perm], p[perm])
    assert r2.mae == pytest.approx(r.mae) and r2.rmse == pytest.approx(r.rmse)


def test_table_render():
    rows = [metrics.compute_metrics([1, 2, 3], [1, 2, 4], split=s) for s in ("train", "valid", "test")]
    text = metrics.format_table(rows)
    assert text.splitlines()[0].split()[1:] == list(metrics.COLUMNS)
    assert len(text.splitlines()) == 5
