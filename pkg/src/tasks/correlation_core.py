"""
相関行列計算モジュール

このモジュールは、リターンパネルから Pearson / Spearman 相関行列を計算し、
元の系列と1日以上ずらした系列を並べた「拡大」リターンパネルを作成します。
また、基準指数（ベンチマーク）との時差相関プロファイルを計算します。

主な機能:
- Pearson 積率相関行列（平均を引いてから共分散を取る2パス計算）
- Spearman 順位相関行列（同順位は平均順位）
- ラグ付き系列によるパネルの拡大
- 基準指数と各系列のラグ τ ごとの相関
- 年ごとの当日 / 前日相関の比較、前日相関が強い系列の並べ替え
"""
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from src.tasks.panel_ingest import Frequency, ReturnPanel, lag_label, parse_label
from src.utils.exceptions import ValidationError
from src.utils.log_config import logger


class CorrelationMethod(str, Enum):
    PEARSON = "pearson"
    SPEARMAN = "spearman"


class MinimumRows(Enum):
    CORRELATION = 3


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """
    相関行列

    Attributes:
        labels: 系列ラベル（ラグ表記を含む）
        values: 対称行列
        method: 相関の種類
        sample_size: 計算に使用した行数 T
    """

    labels: tuple[str, ...]
    values: np.ndarray
    method: CorrelationMethod
    sample_size: int

    def __post_init__(self):
        labels = tuple(self.labels)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2 or values.shape != (len(labels), len(labels)):
            raise ValidationError("相関行列の次元がラベル数と一致しません", "dimension_mismatch")
        if len(set(labels)) != len(labels):
            raise ValidationError("相関行列のラベルが重複しています", "duplicate_label")
        values.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "method", CorrelationMethod(self.method))
        object.__setattr__(self, "sample_size", int(self.sample_size))

    @property
    def dimension(self) -> int:
        return len(self.labels)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=list(self.labels), columns=list(self.labels))

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "method": self.method.value,
            "sample_size": self.sample_size,
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CorrelationMatrix":
        return cls(tuple(data["labels"]), np.asarray(data["values"], dtype=float), data["method"], data["sample_size"])


@dataclass(frozen=True, eq=False)
class LagProfile:
    """
    基準系列との時差相関

    lags の τ は「基準系列の t と対象系列の t+τ」の相関を表します
    （負の τ は対象系列が先行）。
    """

    reference: str
    target: str
    lags: tuple[int, ...]
    correlations: np.ndarray

    def at(self, lag: int) -> float:
        return float(self.correlations[self.lags.index(lag)])


def _constant_columns(x: np.ndarray) -> np.ndarray:
    return np.ptp(x, axis=0) == 0


def correlate_columns(x: np.ndarray) -> np.ndarray:
    """列同士の積率相関（平均を引いてから内積を取る）"""
    centered = x - x.mean(axis=0)
    z = centered / np.sqrt((centered**2).sum(axis=0))
    values = z.T @ z
    values = (values + values.T) / 2
    np.clip(values, -1.0, 1.0, out=values)
    np.fill_diagonal(values, 1.0)
    return values


def _check_columns(x: np.ndarray, labels: Iterable[str]) -> None:
    if x.shape[0] < MinimumRows.CORRELATION.value:
        raise ValidationError(
            f"相関の計算には{MinimumRows.CORRELATION.value}行以上が必要です (行数 {x.shape[0]})", "too_few_rows"
        )
    constant = _constant_columns(x)
    if constant.any():
        label = list(labels)[int(np.argmax(constant))]
        raise ValidationError(f"分散が0の系列があります: {label}", "zero_variance")


def rank_columns(x: np.ndarray) -> np.ndarray:
    # 同順位には平均順位を与える
    return rankdata(x, method="average", axis=0)


def pearson_matrix(panel: ReturnPanel) -> CorrelationMatrix:
    """Pearson 相関行列"""
    _check_columns(panel.returns, panel.labels)
    values = correlate_columns(panel.returns)
    return CorrelationMatrix(panel.labels, values, CorrelationMethod.PEARSON, panel.n_rows)


def spearman_matrix(panel: ReturnPanel) -> CorrelationMatrix:
    """Spearman 順位相関行列（各列の順位に対する Pearson 相関）"""
    _check_columns(panel.returns, panel.labels)
    values = correlate_columns(rank_columns(panel.returns))
    return CorrelationMatrix(panel.labels, values, CorrelationMethod.SPEARMAN, panel.n_rows)


def correlation_matrix(
    panel: ReturnPanel, method: CorrelationMethod | str = CorrelationMethod.SPEARMAN
) -> CorrelationMatrix:
    """相関の種類を指定して相関行列を計算"""
    if CorrelationMethod(method) == CorrelationMethod.PEARSON:
        return pearson_matrix(panel)
    return spearman_matrix(panel)


def lag_augment(panel: ReturnPanel, max_lag: int) -> ReturnPanel:
    """
    ラグ付き系列によるパネルの拡大

    Args:
        panel: 日次の ReturnPanel（N系列, T行）
        max_lag: 最大ラグ日数

    Returns:
        N*(max_lag+1) 系列, T-max_lag 行の ReturnPanel

    列はラグ0の全系列、ラグ1の全系列、... の順に並びます。
    ラグ ℓ の列の t 行目には元の系列の t-ℓ 行目の値が入ります。
    ずらして未定義となる先頭 max_lag 行は削除します（末尾からの巻き戻しはしません）。
    """
    if panel.frequency != Frequency.DAILY:
        raise ValidationError("ラグ付き拡大は日次パネルのみ対応しています", "not_daily")
    if max_lag < 0:
        raise ValidationError("max_lag は0以上で指定してください", "invalid_max_lag")
    if max_lag >= panel.n_rows:
        raise ValidationError(
            f"max_lag ({max_lag}) が行数 ({panel.n_rows}) 以上です", "max_lag_too_large"
        )
    if max_lag == 0:
        return panel

    n_rows = panel.n_rows
    blocks = []
    labels = []
    for lag in range(max_lag + 1):
        blocks.append(panel.returns[max_lag - lag : n_rows - lag])
        for label in panel.labels:
            base, base_lag = parse_label(label)
            labels.append(lag_label(base, base_lag + lag))

    augmented = ReturnPanel(panel.dates[max_lag:], tuple(labels), np.hstack(blocks), Frequency.DAILY)
    logger.info(f"ラグ付き拡大: {panel.n_series}系列 -> {augmented.n_series}系列, {augmented.n_rows}行")
    return augmented


def _window(reference: np.ndarray, target: np.ndarray, lag: int) -> tuple[np.ndarray, np.ndarray]:
    """基準の t と対象の t+lag を対にした区間"""
    n_rows = len(reference)
    if lag >= 0:
        return reference[: n_rows - lag], target[lag:]
    return reference[-lag:], target[: n_rows + lag]


def _pair_correlation(x: np.ndarray, y: np.ndarray, method: CorrelationMethod) -> float:
    pair = np.column_stack([x, y])
    if method == CorrelationMethod.SPEARMAN:
        pair = rank_columns(pair)
    return float(correlate_columns(pair)[0, 1])


def cross_correlation(
    panel: ReturnPanel,
    reference: str,
    targets: Iterable[str],
    lag_range: tuple[int, int],
    method: CorrelationMethod | str = CorrelationMethod.SPEARMAN,
) -> list[LagProfile]:
    """
    基準系列と対象系列の時差相関

    Args:
        panel: ReturnPanel
        reference: 基準系列のラベル（例: S&P 500）
        targets: 対象系列のラベル（基準系列自身を含めてもよい）
        lag_range: (τmin, τmax)
        method: 相関の種類

    Returns:
        対象系列ごとの LagProfile

    |τ| が大きいほど重なり区間は短くなります。
    """
    method = CorrelationMethod(method)
    lag_min, lag_max = lag_range
    if lag_min > lag_max:
        raise ValidationError("lag_range は (τmin, τmax) の順で指定してください", "invalid_lag_range")
    if lag_max - lag_min >= panel.n_rows - 2:
        raise ValidationError("ラグの範囲がデータ行数に対して広すぎます", "lag_range_too_wide")

    ref = panel.column(reference)
    lags = tuple(range(lag_min, lag_max + 1))
    for lag in lags:
        if panel.n_rows - abs(lag) < MinimumRows.CORRELATION.value:
            raise ValidationError(f"ラグ {lag} では重なり区間が空です", "empty_overlap")

    profiles = []
    for target in targets:
        tgt = panel.column(target)
        correlations = np.empty(len(lags))
        for k, lag in enumerate(lags):
            x, y = _window(ref, tgt, lag)
            if np.ptp(x) == 0 or np.ptp(y) == 0:
                label = reference if np.ptp(x) == 0 else target
                raise ValidationError(f"ラグ {lag} の区間で分散が0の系列があります: {label}", "zero_variance")
            correlations[k] = _pair_correlation(x, y, method)
        correlations.flags.writeable = False
        profiles.append(LagProfile(reference, target, lags, correlations))
    return profiles


def yearly_benchmark_correlations(
    panel: ReturnPanel,
    reference: str,
    lags: Iterable[int] = (0, 1),
    method: CorrelationMethod | str = CorrelationMethod.SPEARMAN,
) -> pd.DataFrame:
    """
    年ごとの基準指数との相関

    Args:
        panel: 日次の ReturnPanel
        reference: 基準系列
        lags: 比較する τ（0=当日, 1=基準指数の前日）
        method: 相関の種類

    Returns:
        列 (year, target, lag, correlation) の縦持ち DataFrame
    """
    lags = sorted(set(lags))
    years = pd.DatetimeIndex(panel.dates).year
    records = []
    for year in sorted(set(years)):
        mask = np.asarray(years == year)
        sub = ReturnPanel(panel.dates[mask], panel.labels, panel.returns[mask], panel.frequency)
        if sub.n_rows - max(abs(lag) for lag in lags) < MinimumRows.CORRELATION.value:
            logger.warning(f"{year}年はデータ不足のためスキップします ({sub.n_rows}行)")
            continue
        for profile in cross_correlation(sub, reference, sub.labels, (lags[0], lags[-1]), method):
            for lag in lags:
                records.append(
                    {"year": int(year), "target": profile.target, "lag": lag, "correlation": profile.at(lag)}
                )
    return pd.DataFrame.from_records(records, columns=["year", "target", "lag", "correlation"])


def lead_lag_shifts(
    panel: ReturnPanel, reference: str, method: CorrelationMethod | str = CorrelationMethod.SPEARMAN
) -> dict[str, int]:
    """
    前日の基準指数との相関が当日より強い系列を判定

    Returns:
        ラベル -> ずらす日数（0 または 1）
    """
    shifts = {}
    for profile in cross_correlation(panel, reference, panel.labels, (0, 1), method):
        lead = profile.target != reference and profile.at(1) > profile.at(0)
        shifts[profile.target] = 1 if lead else 0
    n_shifted = sum(shifts.values())
    logger.info(f"前日相関が強い系列: {n_shifted}/{len(shifts)}")
    return shifts


def shift_series(panel: ReturnPanel, shifts: Mapping[str, int]) -> ReturnPanel:
    """
    指定した系列だけを時間方向にずらしたパネル

    shift=s の系列の t 行目には元の t+s 行目の値が入り、ラベルは "名前[t+s]" になります。
    末尾の未定義となる行は削除します。
    """
    values = [int(shifts.get(label, 0)) for label in panel.labels]
    if any(s < 0 for s in values):
        raise ValidationError("shift は0以上で指定してください", "invalid_shift")
    max_shift = max(values, default=0)
    if max_shift >= panel.n_rows - 2:
        raise ValidationError("shift がデータ行数に対して大きすぎます", "shift_too_large")

    n_rows = panel.n_rows - max_shift
    columns = [panel.returns[s : s + n_rows, j] for j, s in enumerate(values)]
    labels = [label if s == 0 else f"{label}[t+{s}]" for label, s in zip(panel.labels, values)]
    return ReturnPanel(panel.dates[:n_rows], tuple(labels), np.column_stack(columns), panel.frequency)
