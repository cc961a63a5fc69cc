"""
価格パネル取り込みモジュール

このモジュールは、複数の株価指数の日次終値を読み込み、取引カレンダーの違いを
調整したうえで、対数リターンのパネル（日次または週次）を作成します。

主な機能:
- 縦持ち (date, label, price) / 横持ち (date列 + 指数ごとの列) テキストの読み込み
- 取引カレンダーの調整（共通日のみ / 前方補完 / ゼロリターン）
- 対数リターン R_t = ln(P_t) - ln(P_{t-1}) の計算
- ISO週単位の平均リターンの計算
"""
import re
from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

from src.utils.exceptions import ValidationError
from src.utils.log_config import logger

LONG_COLUMNS = ("date", "label", "price")

# ラグ付き系列のラベル表記: "名前[t-ラグ]"
LAG_LABEL_PATTERN = re.compile(r"^(?P<base>.+)\[t-(?P<lag>\d+)\]$")


class CalendarMode(str, Enum):
    INTERSECTION = "intersection"
    UNION_FILL_FORWARD = "union-fill-forward"
    UNION_ZERO_RETURN = "union-zero-return"


class Frequency(str, Enum):
    DAILY = "daily"
    WEEKLY = "weekly"


class DefaultCalendar(Enum):
    # 約1週間（5営業日）を超える補完は行わない
    MAX_CONSECUTIVE_FILL = 5


def lag_label(base: str, lag: int) -> str:
    """ラグ付き系列のラベルを作成（ラグ0は元の名前のまま）"""
    return base if lag == 0 else f"{base}[t-{lag}]"


def parse_label(label: str) -> tuple[str, int]:
    """ラベルを (元の名前, ラグ日数) に分解"""
    m = LAG_LABEL_PATTERN.match(label)
    if not m:
        return label, 0
    return m.group("base"), int(m.group("lag"))


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


def _to_dates(values) -> np.ndarray:
    return np.asarray(pd.DatetimeIndex(values).values.astype("datetime64[D]"))


def _check_dates(dates: np.ndarray) -> None:
    if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
        raise ValidationError("日付が厳密に昇順ではありません（重複または逆順）", "unsorted_dates")


def _check_labels(labels: tuple[str, ...]) -> None:
    if len(labels) == 0:
        raise ValidationError("系列が1つもありません", "no_series")
    if len(set(labels)) != len(labels):
        raise ValidationError("系列ラベルが重複しています", "duplicate_label")


@dataclass(frozen=True)
class CalendarPolicy:
    """
    取引カレンダー調整ポリシー

    Attributes:
        mode: 調整方式
        max_consecutive_fill: 連続して補完できる最大日数
    """

    mode: CalendarMode = CalendarMode.UNION_FILL_FORWARD
    max_consecutive_fill: int = DefaultCalendar.MAX_CONSECUTIVE_FILL.value

    def __post_init__(self):
        object.__setattr__(self, "mode", CalendarMode(self.mode))
        if self.max_consecutive_fill < 0:
            raise ValidationError("max_consecutive_fill は0以上で指定してください", "invalid_policy")


@dataclass(frozen=True, eq=False)
class PricePanel:
    """
    日付で揃えた終値のパネル

    Attributes:
        dates: 日付（datetime64[D]、厳密に昇順）
        labels: 系列ラベル（指数名など）
        prices: 終値の行列 |dates| x |labels|（欠損位置は NaN）
        missing: 欠損マスク
    """

    dates: np.ndarray
    labels: tuple[str, ...]
    prices: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        dates = _to_dates(self.dates)
        labels = tuple(str(label) for label in self.labels)
        prices = np.asarray(self.prices, dtype=float)
        missing = np.asarray(self.missing, dtype=bool)

        _check_dates(dates)
        _check_labels(labels)
        if prices.shape != (len(dates), len(labels)) or missing.shape != prices.shape:
            raise ValidationError("価格行列の形状が日付・ラベル数と一致しません", "shape_mismatch")

        observed = prices[~missing]
        if np.any(~np.isfinite(observed)) or np.any(observed <= 0):
            raise ValidationError("観測値に正でない価格が含まれています", "non_positive_price")

        prices = np.where(missing, np.nan, prices)
        object.__setattr__(self, "dates", _frozen(dates))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "prices", _frozen(prices))
        object.__setattr__(self, "missing", _frozen(missing))

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    def to_frame(self) -> pd.DataFrame:
        """横持ちの DataFrame に変換（欠損は NaN）"""
        return pd.DataFrame(self.prices, index=pd.DatetimeIndex(self.dates, name="date"), columns=list(self.labels))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "PricePanel":
        """横持ちの DataFrame（index=日付, columns=ラベル）から作成"""
        values = frame.to_numpy(dtype=float)
        return cls(
            dates=_to_dates(frame.index),
            labels=tuple(frame.columns),
            prices=values,
            missing=np.isnan(values),
        )


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    """
    対数リターンのパネル

    ラベルにはラグ表記 "名前[t-ℓ]" を含めることができ、
    lags / bases プロパティで分解した値を取得できます。

    Attributes:
        dates: 日付（datetime64[D]）
        labels: 系列ラベル
        returns: リターン行列 |dates| x |labels|
        frequency: 日次 / 週次
    """

    dates: np.ndarray
    labels: tuple[str, ...]
    returns: np.ndarray
    frequency: Frequency = Frequency.DAILY
    lags: tuple[int, ...] = field(init=False)
    bases: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        dates = _to_dates(self.dates)
        labels = tuple(str(label) for label in self.labels)
        returns = np.asarray(self.returns, dtype=float)

        _check_dates(dates)
        _check_labels(labels)
        if returns.shape != (len(dates), len(labels)):
            raise ValidationError("リターン行列の形状が日付・ラベル数と一致しません", "shape_mismatch")
        if np.isnan(returns).any():
            raise ValidationError("リターンに NaN が含まれています", "nan_return")

        parsed = [parse_label(label) for label in labels]
        object.__setattr__(self, "dates", _frozen(dates))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "returns", _frozen(returns))
        object.__setattr__(self, "frequency", Frequency(self.frequency))
        object.__setattr__(self, "bases", tuple(base for base, _ in parsed))
        object.__setattr__(self, "lags", tuple(lag for _, lag in parsed))

    @property
    def n_rows(self) -> int:
        return self.returns.shape[0]

    @property
    def n_series(self) -> int:
        return self.returns.shape[1]

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError as e:
            raise ValidationError(f"系列が存在しません: {label}", "unknown_label") from e

    def column(self, label: str) -> np.ndarray:
        return self.returns[:, self.index_of(label)]

    def between(self, start: str | None = None, end: str | None = None) -> "ReturnPanel":
        """日付範囲 [start, end] の行だけを残したパネル"""
        mask = np.ones(self.n_rows, dtype=bool)
        if start is not None:
            mask &= self.dates >= np.datetime64(start, "D")
        if end is not None:
            mask &= self.dates <= np.datetime64(end, "D")
        return ReturnPanel(self.dates[mask], self.labels, self.returns[mask], self.frequency)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.returns, index=pd.DatetimeIndex(self.dates, name="date"), columns=list(self.labels))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, frequency: Frequency = Frequency.DAILY) -> "ReturnPanel":
        return cls(_to_dates(frame.index), tuple(frame.columns), frame.to_numpy(dtype=float), frequency)


def load_price_table(rows: Iterable | pd.DataFrame) -> PricePanel:
    """
    縦持ちレコード (date, label, price) から価格パネルを作成

    Args:
        rows: (日付, ラベル, 価格) のタプル列、または同名の列を持つ DataFrame

    Returns:
        日付をソート・一意化した PricePanel（存在しない組は欠損マスクで表現）

    Raises:
        ValidationError: 正でない価格、解釈できない日付、同一 (date, label) で価格が食い違う場合
    """
    if isinstance(rows, pd.DataFrame):
        df = rows.loc[:, list(LONG_COLUMNS)].copy()
    else:
        df = pd.DataFrame(list(rows), columns=list(LONG_COLUMNS))

    if df.empty:
        raise ValidationError("価格レコードが空です", "empty_table")

    df["label"] = df["label"].astype(str)
    try:
        df["date"] = pd.to_datetime(df["date"].astype(str), format="ISO8601").dt.normalize()
    except (ValueError, TypeError) as e:
        raise ValidationError(f"ISO-8601 として解釈できない日付があります: {e}", "invalid_date") from e

    df["price"] = pd.to_numeric(df["price"], errors="coerce")
    bad = df.index[~(df["price"] > 0)]
    if len(bad) > 0:
        row = df.loc[bad[0]]
        raise ValidationError(
            f"正でない価格です (行 {bad[0]}: {row['date'].date()}, {row['label']}, {row['price']})",
            "non_positive_price",
        )

    # 同じ価格の重複は1件にまとめ、食い違う重複は拒否する
    df = df.drop_duplicates()
    conflicts = df.duplicated(subset=["date", "label"], keep=False)
    if conflicts.any():
        row = df[conflicts].iloc[0]
        raise ValidationError(
            f"同じ日付・系列に異なる価格があります: {row['date'].date()}, {row['label']}",
            "duplicate_observation",
        )

    # 初出順でラベルを並べる
    labels = list(dict.fromkeys(df["label"]))
    wide = df.pivot(index="date", columns="label", values="price").sort_index()
    wide = wide.reindex(columns=labels)

    panel = PricePanel.from_frame(wide)
    logger.info(f"価格テーブル読み込み完了: {panel.n_dates}日 x {len(panel.labels)}系列, 欠損 {int(panel.missing.sum())}件")
    return panel


def load_price_file(path: str | Path, delimiter: str | None = None) -> PricePanel:
    """
    価格ファイルの読み込み

    Args:
        path: 入力ファイル（区切り文字テキスト または .parquet）
        delimiter: 区切り文字。省略時は拡張子から判定（.tsv はタブ、それ以外はカンマ）

    Returns:
        PricePanel

    ヘッダーが (date, label, price) なら縦持ち、そうでなければ
    先頭列を日付、残りの列を系列とみなす横持ちとして扱います。
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"入力ファイルが存在しません: {path}", "file_not_found")

    if path.suffix == ".parquet":
        df = pd.read_parquet(path)
        if df.index.name is not None and df.index.name not in df.columns:
            df = df.reset_index()
    else:
        sep = delimiter or ("\t" if path.suffix in (".tsv", ".tab") else ",")
        df = pd.read_csv(path, sep=sep, dtype=str)

    header = [str(col).strip().lower() for col in df.columns]
    if set(header) == set(LONG_COLUMNS):
        df.columns = header
        logger.info(f"縦持ち形式として読み込みます: {path}")
        return load_price_table(df)

    # 横持ち: 空欄は欠損として縦持ちに変換
    logger.info(f"横持ち形式として読み込みます: {path}")
    date_col = df.columns[0]
    long = df.melt(id_vars=[date_col], var_name="label", value_name="price")
    long = long.rename(columns={date_col: "date"})
    long = long[long["price"].notna() & (long["price"].astype(str).str.strip() != "")]
    return load_price_table(long)


def align_calendars(panel: PricePanel, policy: CalendarPolicy | None = None) -> PricePanel:
    """
    取引カレンダーの調整

    Args:
        panel: 価格パネル
        policy: 調整ポリシー（省略時は前方補完・最大5日）

    Returns:
        欠損のない PricePanel

    処理内容:
    - intersection: 全系列が観測されている日付のみ残す
    - union-fill-forward / union-zero-return: 直前の価格を最大 max_consecutive_fill 日まで
      引き継ぐ（引き継いだ日はリターン0）。補完できずに欠損が残る日付は削除する
    前後の値による補間は行いません。
    """
    policy = policy or CalendarPolicy()

    observed_counts = (~panel.missing).sum(axis=0)
    for label, count in zip(panel.labels, observed_counts):
        if count == 0:
            raise ValidationError(f"観測値が1件もない系列があります: {label}", "empty_series")

    frame = panel.to_frame()
    if policy.mode == CalendarMode.INTERSECTION:
        aligned = frame.dropna(how="any")
    else:
        filled = frame.ffill(limit=policy.max_consecutive_fill) if policy.max_consecutive_fill > 0 else frame
        n_filled = int(frame.isna().sum().sum() - filled.isna().sum().sum())
        if n_filled > 0:
            logger.info(f"前方補完した観測値: {n_filled}件 (上限 {policy.max_consecutive_fill}日)")
        aligned = filled.dropna(how="any")

    n_dropped = len(frame) - len(aligned)
    if n_dropped > 0:
        logger.warning(f"カレンダー調整で {n_dropped}日を削除しました ({policy.mode.value})")

    return PricePanel.from_frame(aligned)


def log_returns(panel: PricePanel) -> ReturnPanel:
    """
    対数リターンの計算

    Args:
        panel: 欠損のない価格パネル（2日以上）

    Returns:
        日次の ReturnPanel（行数は入力より1少ない。各行の日付は後側の日付）
    """
    if panel.missing.any():
        raise ValidationError("欠損を含むパネルです。先に align_calendars を適用してください", "missing_values")
    if panel.n_dates < 2:
        raise ValidationError("リターン計算には2日以上のデータが必要です", "too_few_dates")

    returns = np.diff(np.log(panel.prices), axis=0)
    return ReturnPanel(panel.dates[1:], panel.labels, returns, Frequency.DAILY)


def weekly_average(panel: ReturnPanel) -> ReturnPanel:
    """
    ISO週ごとの平均リターン

    Args:
        panel: 日次の ReturnPanel

    Returns:
        週次の ReturnPanel（各行の日付はその週の最終取引日）
    """
    if panel.frequency == Frequency.WEEKLY:
        raise ValidationError("すでに週次のパネルです", "already_weekly")

    frame = panel.to_frame()
    iso = frame.index.isocalendar()
    keys = [iso["year"].to_numpy(), iso["week"].to_numpy()]

    weekly = frame.groupby(keys, sort=True).mean()
    last_dates = frame.index.to_series().groupby(keys, sort=True).max()
    weekly.index = pd.DatetimeIndex(last_dates.to_numpy())

    logger.info(f"週次平均: {panel.n_rows}日 -> {len(weekly)}週")
    return ReturnPanel.from_frame(weekly, Frequency.WEEKLY)
