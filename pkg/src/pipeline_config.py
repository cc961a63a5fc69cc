"""
パイプライン設定モジュール

TOML 形式の設定ファイルを読み込み、pydantic モデルで検証します。
セクションはパイプラインのステージに対応し、CLI のフラグで個別の値を上書きできます。
"""
import copy
import tomllib
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from env_settings import OUTPUT_PATH
from src.tasks.correlation_core import CorrelationMethod
from src.tasks.panel_ingest import CalendarMode, DefaultCalendar
from src.utils.exceptions import ValidationError

# 乱数を使うステージ
STOCHASTIC_STAGES = ("null", "weekly", "noise_threshold", "embed")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticInput(_Section):
    """入力ファイルの代わりに使う合成パネルの設定"""

    n_west: int = 10
    n_east: int = 10
    loading: float = Field(0.6, ge=0, le=1)
    lead_lag_loading: float = Field(0.6, ge=0, le=1)
    noise: float = Field(0.5, ge=0)
    n_days: int = Field(1250, ge=100)
    seed: int = 0
    holiday_rate: float = Field(0.0, ge=0, lt=1)
    start_date: str = "2003-01-02"


class InputSection(_Section):
    """
    入力設定

    Attributes:
        path: 価格ファイル（csv / tsv / parquet）
        delimiter: 区切り文字（省略時は拡張子から判定）
        benchmark: 時差相関の基準系列（省略時は先頭の系列）
        synthetic: path の代わりに合成パネルを使う場合の設定
    """

    path: str | None = None
    delimiter: str | None = None
    benchmark: str | None = None
    synthetic: SyntheticInput | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.synthetic is None):
            raise ValueError("input.path と input.synthetic のどちらか一方を指定してください")
        return self


class CalendarSection(_Section):
    mode: CalendarMode = CalendarMode.UNION_FILL_FORWARD
    max_consecutive_fill: int = Field(DefaultCalendar.MAX_CONSECUTIVE_FILL.value, ge=0)


class CorrelationSection(_Section):
    method: CorrelationMethod = CorrelationMethod.SPEARMAN
    lag_range: tuple[int, int] = (-3, 3)

    @field_validator("lag_range")
    @classmethod
    def _ordered(cls, value):
        if value[0] > value[1]:
            raise ValueError("lag_range は (最小, 最大) の順で指定してください")
        return value


class SplitSection(_Section):
    """期間分割（start / end は両端を含む ISO 日付）"""

    name: str = Field(pattern=r"^[A-Za-z0-9_.\-]+$")
    start: str | None = None
    end: str | None = None


class LagSection(_Section):
    max_lag: int = Field(1, ge=0)


class SpectrumSection(_Section):
    n_sims: int = Field(100, ge=1)
    n_jobs: int = Field(1, ge=1)
    bins: int = Field(40, ge=1)
    top_eigenvectors: int = Field(3, ge=1)


class ModeRemovalSection(_Section):
    n_modes: int = Field(1, ge=1)


class NetworkSection(_Section):
    """
    ネットワーク設定

    Attributes:
        noise_sims: ノイズ距離閾値のシミュレーション回数
        thresholds: アセットグラフの距離閾値（正・昇順）
        include_noise_threshold: ノイズ距離閾値でもグラフを作成するか
        embedding_dim: MDS の埋め込み次元
        top: 中心性ランキングの出力件数
    """

    noise_sims: int = Field(100, ge=1)
    thresholds: list[float] = Field(default_factory=lambda: [0.5, 0.8, 1.1])
    include_noise_threshold: bool = True
    embedding_dim: int = Field(2, ge=1)
    top: int = Field(10, ge=1)

    @field_validator("thresholds")
    @classmethod
    def _positive_ascending(cls, value):
        if any(t <= 0 for t in value):
            raise ValueError("thresholds は正の値で指定してください")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("thresholds は昇順（重複なし）で指定してください")
        return value


class SeedSection(_Section):
    master: int | None = 0


class OutputSection(_Section):
    directory: str = OUTPUT_PATH


class StagesSection(_Section):
    """ステージの有効 / 無効（無効なステージは成果物を出力しない）"""

    returns: bool = True
    correlate: bool = True
    lag_profiles: bool = True
    yearly: bool = True
    spectrum: bool = True
    null: bool = True
    mode_removal: bool = True
    weekly: bool = True
    selective_lag: bool = True
    distance: bool = True
    noise_threshold: bool = True
    graph: bool = True
    centrality: bool = True
    embed: bool = True
    heatmap: bool = True


class PipelineConfig(_Section):
    """
    パイプライン全体の設定

    TOML の各セクションがフィールドに対応します。
    """

    input: InputSection
    calendar: CalendarSection = Field(default_factory=CalendarSection)
    correlation: CorrelationSection = Field(default_factory=CorrelationSection)
    splits: list[SplitSection] = Field(default_factory=lambda: [SplitSection(name="full")])
    lag: LagSection = Field(default_factory=LagSection)
    spectrum: SpectrumSection = Field(default_factory=SpectrumSection)
    mode_removal: ModeRemovalSection = Field(default_factory=ModeRemovalSection)
    network: NetworkSection = Field(default_factory=NetworkSection)
    seed: SeedSection = Field(default_factory=SeedSection)
    output: OutputSection = Field(default_factory=OutputSection)
    stages: StagesSection = Field(default_factory=StagesSection)

    @model_validator(mode="after")
    def _check(self):
        names = [split.name for split in self.splits]
        if not names:
            raise ValueError("splits を1つ以上指定してください")
        if len(set(names)) != len(names):
            raise ValueError("splits の name が重複しています")
        stochastic = [stage for stage in STOCHASTIC_STAGES if getattr(self.stages, stage)]
        if stochastic and self.seed.master is None:
            raise ValueError(f"乱数を使うステージ {stochastic} が有効ですが seed.master が未指定です")
        return self

    def parameters(self) -> dict:
        """マニフェストに記録するパラメータ（出力先は含めない）"""
        return self.model_dump(mode="json", exclude={"output"})


def _set_dotted(data: dict, dotted: str, value) -> None:
    *parents, key = dotted.split(".")
    node = data
    for parent in parents:
        node = node.setdefault(parent, {})
    node[key] = value


def build_config(data: dict, overrides: dict | None = None) -> PipelineConfig:
    """
    辞書から設定を作成

    Args:
        data: TOML を読み込んだ辞書
        overrides: "section.key" 形式のキーによる上書き（値が None のものは無視）

    Returns:
        PipelineConfig
    """
    data = copy.deepcopy(data)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if dotted == "input.path":
            # ファイル指定は合成パネルより優先
            data.setdefault("input", {}).pop("synthetic", None)
        _set_dotted(data, dotted, value)
    try:
        return PipelineConfig.model_validate(data)
    except PydanticValidationError as e:
        raise ValidationError(f"設定が不正です: {e}", "invalid_config") from e


def load_config(path: str | Path | None, overrides: dict | None = None) -> PipelineConfig:
    """
    TOML 設定ファイルの読み込み

    Args:
        path: 設定ファイル（None の場合は上書き値と既定値のみで作成）
        overrides: CLI フラグによる上書き

    Returns:
        PipelineConfig
    """
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"設定ファイルが存在しません: {path}", "file_not_found")
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ValidationError(f"設定ファイルを解釈できません: {e}", "invalid_config") from e
    return build_config(data, overrides)
