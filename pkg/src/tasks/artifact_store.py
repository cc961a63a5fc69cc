"""
成果物の読み書きモジュール

パイプラインの各ステージが出力する表・行列・グラフを、プロット用のテキスト形式
（ラベルヘッダー付きの行優先 CSV、辺リスト、JSON）で保存し、読み戻します。
ArtifactStore は書き出したファイルの SHA-256 とパラメータを記録し、最後に
マニフェスト JSON を作成します。

浮動小数点は %.17g で書き出すため、読み戻した値は元の値と一致します。
マニフェストには時刻を含めないため、同じ設定とシードでの再実行は同一のバイト列になります。
"""
import hashlib
import json
from collections.abc import Mapping
from pathlib import Path

import numpy as np
import pandas as pd

from src.tasks.correlation_core import CorrelationMatrix, CorrelationMethod, LagProfile
from src.tasks.market_network import AssetGraph, CentralityReport, DistanceMatrix, Embedding
from src.tasks.panel_ingest import Frequency, ReturnPanel
from src.utils.exceptions import ValidationError
from src.utils.log_config import logger

FLOAT_FORMAT = "%.17g"
MANIFEST_NAME = "manifest.json"


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return value.as_posix()
    if hasattr(value, "value"):
        return value.value
    raise TypeError(f"JSON に変換できない型です: {type(value)}")


def dumps_json(data) -> str:
    return json.dumps(data, ensure_ascii=False, indent=2, default=_json_default) + "\n"


def _read_csv(path: str | Path, **kwargs) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"入力ファイルが存在しません: {path}", "file_not_found")
    return pd.read_csv(path, **kwargs)


def frame_to_csv(frame: pd.DataFrame, index: bool = True) -> str:
    return frame.to_csv(index=index, float_format=FLOAT_FORMAT, lineterminator="\n")


def return_panel_frame(panel: ReturnPanel) -> pd.DataFrame:
    frame = panel.to_frame()
    frame.index = frame.index.strftime("%Y-%m-%d")
    frame.index.name = "date"
    return frame


def read_return_panel(path: str | Path, frequency: Frequency | str = Frequency.DAILY) -> ReturnPanel:
    """横持ちリターン CSV（先頭列 date）の読み込み"""
    frame = _read_csv(path, index_col=0)
    try:
        frame.index = pd.to_datetime(frame.index, format="ISO8601")
    except ValueError as e:
        raise ValidationError(f"日付を解釈できません: {path} ({e})", "invalid_date") from e
    return ReturnPanel.from_frame(frame, Frequency(frequency))


def matrix_frame(labels, values: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame(values, index=list(labels), columns=list(labels))
    frame.index.name = "label"
    return frame


def read_correlation_matrix(
    path: str | Path,
    method: CorrelationMethod | str = CorrelationMethod.SPEARMAN,
    sample_size: int = 0,
) -> CorrelationMatrix:
    """ラベルヘッダー付き正方行列 CSV から相関行列を読み込む"""
    frame = _read_csv(path, index_col=0)
    _check_square(frame, path)
    return CorrelationMatrix(
        labels=tuple(str(c) for c in frame.columns),
        values=frame.to_numpy(dtype=float),
        method=CorrelationMethod(method),
        sample_size=sample_size,
    )


def read_distance_matrix(path: str | Path) -> DistanceMatrix:
    frame = _read_csv(path, index_col=0)
    _check_square(frame, path)
    return DistanceMatrix.from_frame(frame)


def _check_square(frame: pd.DataFrame, path) -> None:
    if list(map(str, frame.index)) != list(map(str, frame.columns)):
        raise ValidationError(f"行ラベルと列ラベルが一致しない行列です: {path}", "shape_mismatch")


def read_asset_graph(path: str | Path) -> AssetGraph:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"入力ファイルが存在しません: {path}", "file_not_found")
    with open(path, encoding="utf-8") as f:
        return AssetGraph.from_dict(json.load(f))


def edge_list_frame(graph: AssetGraph) -> pd.DataFrame:
    return pd.DataFrame(graph.edges, columns=["source", "target", "distance"])


def lag_profiles_frame(profiles: list[LagProfile]) -> pd.DataFrame:
    rows = [
        {"reference": p.reference, "target": p.target, "lag": int(lag), "correlation": float(c)}
        for p in profiles
        for lag, c in zip(p.lags, p.correlations)
    ]
    return pd.DataFrame(rows, columns=["reference", "target", "lag", "correlation"])


def centrality_frame(report: CentralityReport) -> pd.DataFrame:
    labels = sorted(report.degree)
    return pd.DataFrame(
        {
            "label": labels,
            "degree": [report.degree[label] for label in labels],
            "eigenvector": [report.eigenvector[label] for label in labels],
            "betweenness": [report.betweenness[label] for label in labels],
        }
    )


def embedding_frame(embedding: Embedding) -> pd.DataFrame:
    return embedding.to_frame()


class ArtifactStore:
    """
    成果物ディレクトリへの書き込みとマニフェストの管理

    Attributes:
        root: 出力ディレクトリ
        entries: 書き出したファイルの記録（相対パス、種別、SHA-256、パラメータ）
    """

    def __init__(self, root: str | Path):
        """
        初期化

        Args:
            root: 出力ディレクトリ（存在しなければ作成）
        """
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.entries: dict[str, dict] = {}

    def _write(self, relpath: str, text: str, kind: str, parameters: Mapping | None) -> Path:
        path = self.root / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode("utf-8")
        path.write_bytes(data)
        self.entries[relpath] = {
            "path": relpath,
            "kind": kind,
            "sha256": hashlib.sha256(data).hexdigest(),
            "bytes": len(data),
            "parameters": dict(parameters or {}),
        }
        logger.info(f"成果物を保存しました: {relpath}")
        return path

    def write_frame(
        self, relpath: str, frame: pd.DataFrame, kind: str, parameters: Mapping | None = None, index: bool = False
    ) -> Path:
        return self._write(relpath, frame_to_csv(frame, index=index), kind, parameters)

    def write_json(self, relpath: str, data, kind: str, parameters: Mapping | None = None) -> Path:
        return self._write(relpath, dumps_json(data), kind, parameters)

    def write_returns(self, relpath: str, panel: ReturnPanel, parameters: Mapping | None = None) -> Path:
        return self.write_frame(relpath, return_panel_frame(panel), "returns", parameters, index=True)

    def write_matrix(
        self, relpath: str, labels, values: np.ndarray, kind: str, parameters: Mapping | None = None
    ) -> Path:
        """ラベルヘッダー付きの行優先正方行列（ヒートマップ用グリッドを含む）"""
        return self.write_frame(relpath, matrix_frame(labels, values), kind, parameters, index=True)

    def write_graph(self, stem: str, graph: AssetGraph, parameters: Mapping | None = None) -> list[Path]:
        """アセットグラフを辺リスト CSV と JSON の2形式で保存"""
        return [
            self.write_frame(f"{stem}_edges.csv", edge_list_frame(graph), "asset_graph_edges", parameters),
            self.write_json(f"{stem}.json", graph.to_dict(), "asset_graph", parameters),
        ]

    def write_manifest(self, parameters: Mapping, seeds: Mapping[str, int]) -> Path:
        """
        マニフェスト JSON の作成

        記録済みの全ファイルをパス順に列挙します（マニフェスト自身は含みません）。
        """
        manifest = {
            "status": "ok",
            "parameters": dict(parameters),
            "seeds": dict(sorted(seeds.items())),
            "artifacts": [self.entries[key] for key in sorted(self.entries)],
        }
        path = self.root / MANIFEST_NAME
        path.write_text(dumps_json(manifest), encoding="utf-8")
        logger.info(f"マニフェストを保存しました: {len(self.entries)}件")
        return path
