"""
合成リードラグパネル生成モジュール

時差のある2つの市場群を模した価格パネルを生成します。
西側の指数は当日の共通ファクターに、東側の指数は前日の共通ファクターに反応します。

    西側: r_t = loading · F_t + noise · ε_t
    東側: r_t = lead_lag_loading · F_{t-1} + noise · ε_t

F と ε は独立な標準正規乱数です。価格は 100 から始まる累積対数リターンの指数で、
先頭行（全系列 100）の後に n_days 行が続きます。
"""
from dataclasses import dataclass

import numpy as np
import pandas as pd

from src.tasks.panel_ingest import PricePanel
from src.utils.exceptions import ValidationError
from src.utils.log_config import logger

INITIAL_PRICE = 100.0
MIN_DAYS = 100


@dataclass(frozen=True)
class SyntheticSpec:
    """
    合成パネルの設定

    Attributes:
        n_west: 西側指数の数
        n_east: 東側指数の数
        loading: 西側の共通ファクター負荷
        lead_lag_loading: 東側の前日ファクター負荷
        noise: 固有ノイズの標準偏差
        n_days: リターンの日数（100以上）
        seed: 乱数シード
        holiday_rate: 各観測が欠損（休場）になる確率（先頭行は常に観測）
        start_date: 先頭行の日付（以後は平日）
    """

    n_west: int = 10
    n_east: int = 10
    loading: float = 0.6
    lead_lag_loading: float = 0.6
    noise: float = 0.5
    n_days: int = 1250
    seed: int = 0
    holiday_rate: float = 0.0
    start_date: str = "2003-01-02"

    def __post_init__(self):
        if self.n_west < 0 or self.n_east < 0 or self.n_west + self.n_east == 0:
            raise ValidationError("系列数が不正です（少なくとも1系列が必要）", "invalid_synthetic_spec")
        for name in ("loading", "lead_lag_loading"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} は [0, 1] の範囲で指定してください", "invalid_synthetic_spec")
        if self.noise < 0:
            raise ValidationError("noise は0以上で指定してください", "invalid_synthetic_spec")
        if self.n_days < MIN_DAYS:
            raise ValidationError(f"n_days は{MIN_DAYS}以上で指定してください", "invalid_synthetic_spec")
        if not 0.0 <= self.holiday_rate < 1.0:
            raise ValidationError("holiday_rate は [0, 1) の範囲で指定してください", "invalid_synthetic_spec")

    @property
    def west_labels(self) -> tuple[str, ...]:
        return tuple(f"WEST{i + 1:02d}" for i in range(self.n_west))

    @property
    def east_labels(self) -> tuple[str, ...]:
        return tuple(f"EAST{i + 1:02d}" for i in range(self.n_east))


def synthetic_returns(spec: SyntheticSpec) -> np.ndarray:
    """
    合成リターン行列 n_days x (n_west + n_east) の生成（列は西側、東側の順）
    """
    rng = np.random.default_rng(spec.seed)
    # factor[0] は初日の前日分
    factor = rng.standard_normal(spec.n_days + 1)
    shocks = rng.standard_normal((spec.n_days, spec.n_west + spec.n_east))

    west = spec.loading * factor[1:, None] + spec.noise * shocks[:, : spec.n_west]
    east = spec.lead_lag_loading * factor[:-1, None] + spec.noise * shocks[:, spec.n_west :]
    return np.hstack([west, east])


def generate_synthetic(spec: SyntheticSpec) -> PricePanel:
    """
    合成価格パネルの生成

    Args:
        spec: 合成パネルの設定

    Returns:
        PricePanel（n_days + 1 行）
    """
    returns = synthetic_returns(spec)
    log_prices = np.vstack([np.zeros((1, returns.shape[1])), np.cumsum(returns, axis=0)])
    prices = INITIAL_PRICE * np.exp(log_prices)

    missing = np.zeros(prices.shape, dtype=bool)
    if spec.holiday_rate > 0:
        holiday_rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
        missing[1:] = holiday_rng.random((spec.n_days, prices.shape[1])) < spec.holiday_rate

    dates = pd.bdate_range(start=spec.start_date, periods=spec.n_days + 1)
    panel = PricePanel(
        dates=dates,
        labels=spec.west_labels + spec.east_labels,
        prices=prices,
        missing=missing,
    )
    logger.info(
        f"合成パネル生成完了: 西側{spec.n_west}系列, 東側{spec.n_east}系列, "
        f"{spec.n_days}日, 欠損{int(missing.sum())}件"
    )
    return panel
