import numpy as np
import pytest

from src.tasks.correlation_core import (
    CorrelationMethod,
    correlation_matrix,
    cross_correlation,
    lag_augment,
    pearson_matrix,
)
from src.tasks.panel_ingest import CalendarMode, CalendarPolicy, align_calendars, log_returns, parse_label
from src.tasks.spectral_analysis import NoiseClass, classify_eigenvalues, eigendecompose, shuffle_null
from src.tasks.synthetic import INITIAL_PRICE, SyntheticSpec, generate_synthetic, synthetic_returns
from src.utils.exceptions import ValidationError


def test_shape_and_initial_prices():
    spec = SyntheticSpec(n_west=3, n_east=2, n_days=120, seed=1)
    panel = generate_synthetic(spec)
    assert panel.prices.shape == (121, 5)
    assert panel.labels == ("WEST01", "WEST02", "WEST03", "EAST01", "EAST02")
    assert np.all(panel.prices[0] == INITIAL_PRICE)
    assert not panel.missing.any()


def test_same_seed_same_panel():
    a = generate_synthetic(SyntheticSpec(n_days=200, seed=9))
    b = generate_synthetic(SyntheticSpec(n_days=200, seed=9))
    c = generate_synthetic(SyntheticSpec(n_days=200, seed=10))
    np.testing.assert_array_equal(a.prices, b.prices)
    assert not np.array_equal(a.prices, c.prices)


def test_prices_reproduce_returns():
    spec = SyntheticSpec(n_west=2, n_east=2, n_days=150, seed=4)
    returns = log_returns(generate_synthetic(spec)).returns
    np.testing.assert_allclose(returns, synthetic_returns(spec), atol=1e-12)


def test_zero_loadings_give_independent_series():
    spec = SyntheticSpec(loading=0.0, lead_lag_loading=0.0, n_days=1250, seed=2)
    values = pearson_matrix(log_returns(generate_synthetic(spec))).values
    off_diagonal = values[~np.eye(values.shape[0], dtype=bool)]
    assert np.max(np.abs(off_diagonal)) < 4.5 / np.sqrt(1250)


def test_exact_lead_without_noise():
    spec = SyntheticSpec(n_west=1, n_east=1, loading=1.0, lead_lag_loading=1.0, noise=0.0, n_days=200, seed=5)
    returns = synthetic_returns(spec)
    np.testing.assert_array_equal(returns[1:, 1], returns[:-1, 0])

    panel = log_returns(generate_synthetic(spec))
    profile = cross_correlation(panel, "WEST01", ["EAST01"], (0, 1))[0]
    assert profile.at(1) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"loading": 1.5},
        {"lead_lag_loading": -0.1},
        {"noise": -1.0},
        {"n_days": 99},
        {"n_west": 0, "n_east": 0},
        {"holiday_rate": 1.0},
    ],
)
def test_invalid_spec_rejected(kwargs):
    with pytest.raises(ValidationError) as e:
        SyntheticSpec(**kwargs)
    assert e.value.code == "invalid_synthetic_spec"


def test_holidays_leave_first_row_observed():
    spec = SyntheticSpec(n_west=3, n_east=3, n_days=500, seed=8, holiday_rate=0.05)
    panel = generate_synthetic(spec)
    assert not panel.missing[0].any()
    assert 0.02 < panel.missing.mean() < 0.08
    np.testing.assert_array_equal(panel.missing, generate_synthetic(spec).missing)

    aligned = align_calendars(panel, CalendarPolicy(CalendarMode.INTERSECTION))
    assert not aligned.missing.any()
    assert aligned.n_dates < panel.n_dates


# ─── 時差構造の回復 ──────────────────────────────────────────────────────────
def test_eastern_series_follow_previous_western_day():
    passed = 0
    for seed in range(100):
        spec = SyntheticSpec(seed=seed)
        panel = log_returns(generate_synthetic(spec))
        profiles = cross_correlation(panel, "WEST01", spec.east_labels, (0, 1))
        if all(profile.at(1) > profile.at(0) for profile in profiles):
            passed += 1
    assert passed >= 95


@pytest.mark.slow
def test_lagged_spectrum_separates_lead_lag_blocks():
    spec = SyntheticSpec(seed=0)
    augmented = lag_augment(log_returns(generate_synthetic(spec)), 1)
    summary = eigendecompose(correlation_matrix(augmented, CorrelationMethod.SPEARMAN))
    null = shuffle_null(augmented, 50, seed=1)
    classified = classify_eigenvalues(summary, null)
    assert classified.count(NoiseClass.ABOVE) >= 2

    parsed = [parse_label(label) for label in augmented.labels]

    def indicator(region: str, lag: int) -> np.ndarray:
        mask = np.array([name.startswith(region) and ell == lag for name, ell in parsed], dtype=float)
        return mask / np.linalg.norm(mask)

    # 当日の東側と前日の西側は同じファクター F_{t-1} を共有する
    top = summary.eigenvectors[:, 0]
    shared = indicator("EAST", 0) + indicator("WEST", 1)
    assert abs(top @ shared) / np.linalg.norm(shared) > 0.95

    # 残り2つのブロックは同じ大きさの固有値を持つので、第2・第3固有ベクトルの張る空間で判定する
    plane = summary.eigenvectors[:, 1:3]
    for region, lag in (("WEST", 0), ("EAST", 1)):
        assert np.linalg.norm(plane.T @ indicator(region, lag)) > 0.95
