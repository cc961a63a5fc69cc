"""
市場ネットワーク解析モジュール

このモジュールは、相関行列を距離行列に変換し、シャッフルによってノイズとみなす
距離の閾値を推定したうえで、閾値以下の距離だけを辺として持つアセットグラフを作成します。
また、中心性指標の計算と、ストレス最小化による低次元座標への埋め込みを行います。

主な機能:
- 相関距離 d_ij = √(2(1 − c_ij))
- ノイズ距離閾値（列ごとの並べ替えによるシミュレーション）
- 閾値アセットグラフ（孤立ノードは除外）
- 次数・固有ベクトル・媒介中心性とそのランキング
- 古典的尺度構成法で初期化し、反復優関数法（SMACOF）で改善する多次元尺度構成法
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import networkx as nx
import numpy as np
import pandas as pd
from scipy import linalg
from scipy.spatial.distance import pdist, squareform

from src.tasks.correlation_core import (
    CorrelationMatrix,
    CorrelationMethod,
    correlate_columns,
    rank_columns,
)
from src.tasks.panel_ingest import ReturnPanel
from src.tasks.spectral_analysis import shuffle_columns
from src.utils.exceptions import NumericalError, ValidationError
from src.utils.log_config import logger
from src.utils.seeds import simulation_generators


class PowerIteration(Enum):
    TOL = 1e-12
    MAX_ITER = 100_000


class Majorization(Enum):
    TOL = 1e-9
    MAX_ITER = 500
    # 反復ごとのストレス増加の許容幅（丸め誤差）
    MONOTONE_SLACK = 1e-9


CORRELATION_RANGE_TOL = 1e-12
AXIS_NAMES = ("x", "y", "z")


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """
    相関距離行列（対称、対角0、値は [0, 2]）
    """

    labels: tuple[str, ...]
    values: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=list(self.labels), columns=list(self.labels))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "DistanceMatrix":
        return cls(tuple(str(c) for c in frame.columns), frame.to_numpy(dtype=float))


@dataclass(frozen=True, eq=False)
class AssetGraph:
    """
    閾値アセットグラフ

    Attributes:
        threshold: 距離の閾値 T（d < T の組だけが辺になる）
        graph: 辺属性 distance を持つ無向グラフ
    """

    threshold: float
    graph: nx.Graph

    @property
    def nodes(self) -> list[str]:
        return sorted(self.graph.nodes)

    @property
    def edges(self) -> list[tuple[str, str, float]]:
        edges = [(*sorted((u, v)), float(data["distance"])) for u, v, data in self.graph.edges(data=True)]
        return sorted(edges)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "nodes": self.nodes,
            "edges": [{"source": u, "target": v, "distance": d} for u, v, d in self.edges],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AssetGraph":
        graph = nx.Graph()
        graph.add_nodes_from(data["nodes"])
        for edge in data["edges"]:
            graph.add_edge(edge["source"], edge["target"], distance=float(edge["distance"]))
        return cls(float(data["threshold"]), graph)


@dataclass(frozen=True, eq=False)
class CentralityReport:
    """
    中心性指標

    Attributes:
        degree: 次数
        eigenvector: 固有ベクトル中心性（最大連結成分のみ、その他は0）
        betweenness: 媒介中心性（正規化なしの経路数）
    """

    degree: dict[str, int]
    eigenvector: dict[str, float]
    betweenness: dict[str, float]

    @staticmethod
    def _rank(scores: dict) -> list[str]:
        # 同点はラベルの辞書順
        return sorted(scores, key=lambda label: (-scores[label], label))

    @property
    def rankings(self) -> dict[str, list[str]]:
        return {
            "degree": self._rank(self.degree),
            "eigenvector": self._rank(self.eigenvector),
            "betweenness": self._rank(self.betweenness),
        }

    def to_dict(self, top: int | None = None) -> dict:
        measures = {"degree": self.degree, "eigenvector": self.eigenvector, "betweenness": self.betweenness}
        return {
            name: [{"label": label, "score": measures[name][label]} for label in ranking[:top]]
            for name, ranking in self.rankings.items()
        }


@dataclass(frozen=True, eq=False)
class Embedding:
    """
    低次元座標への埋め込み

    Attributes:
        labels: 系列ラベル
        coordinates: 座標 |labels| x m（原点中心）
        stress: 正規化ストレス
        stress_history: 反復ごとのストレス（初期値を含む）
    """

    labels: tuple[str, ...]
    coordinates: np.ndarray
    stress: float
    stress_history: tuple[float, ...]

    @property
    def iterations(self) -> int:
        return len(self.stress_history) - 1

    def to_frame(self) -> pd.DataFrame:
        m = self.coordinates.shape[1]
        names = [AXIS_NAMES[k] if k < len(AXIS_NAMES) else f"x{k + 1}" for k in range(m)]
        frame = pd.DataFrame(self.coordinates, columns=names)
        frame.insert(0, "label", list(self.labels))
        return frame


def distance_matrix(corr: CorrelationMatrix) -> DistanceMatrix:
    """
    相関行列から距離行列への変換 d_ij = √(2(1 − c_ij))

    c=1 で 0、c=0 で √2、c=−1 で 2 になります。
    """
    values = corr.values
    if np.any(values < -1 - CORRELATION_RANGE_TOL) or np.any(values > 1 + CORRELATION_RANGE_TOL):
        raise ValidationError("相関行列に [-1, 1] の範囲外の値があります", "correlation_out_of_range")

    distances = np.sqrt(2.0 * (1.0 - np.clip(values, -1.0, 1.0)))
    np.fill_diagonal(distances, 0.0)
    distances.flags.writeable = False
    return DistanceMatrix(corr.labels, distances)


def shuffled_distance_minima(
    panel: ReturnPanel,
    n_sims: int,
    seed: int,
    method: CorrelationMethod | str = CorrelationMethod.SPEARMAN,
    n_jobs: int = 1,
) -> np.ndarray:
    """
    シミュレーションごとの最小距離

    各シミュレーションで系列ごとに独立に並べ替えたパネルの相関距離を計算し、
    全ペアの中の最小値を返します。
    """
    if n_sims < 1:
        raise ValidationError("n_sims は1以上で指定してください", "invalid_n_sims")
    if panel.n_series < 2:
        raise ValidationError("距離の計算には2系列以上が必要です", "too_few_series")

    method = CorrelationMethod(method)
    base = rank_columns(panel.returns) if method == CorrelationMethod.SPEARMAN else panel.returns
    generators = simulation_generators(seed, n_sims)
    upper = np.triu_indices(panel.n_series, k=1)

    def simulate(index: int) -> float:
        corr = correlate_columns(shuffle_columns(base, generators[index]))
        return float(np.sqrt(2.0 * (1.0 - corr[upper].max())))

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as executor:
            minima = list(executor.map(simulate, range(n_sims)))
    else:
        minima = [simulate(i) for i in range(n_sims)]
    return np.asarray(minima)


def noise_distance_threshold(
    panel: ReturnPanel,
    n_sims: int,
    seed: int,
    method: CorrelationMethod | str = CorrelationMethod.SPEARMAN,
    n_jobs: int = 1,
) -> float:
    """
    ノイズ距離閾値

    並べ替えたパネルで観測された最小距離（全シミュレーションの最小値）を返します。
    この距離より遠い相関はノイズによるものとみなします。
    """
    minima = shuffled_distance_minima(panel, n_sims, seed, method, n_jobs)
    threshold = float(minima.min())
    logger.info(f"ノイズ距離閾値: {threshold:.4f} ({n_sims}回)")
    return threshold


def asset_graph(dist: DistanceMatrix, threshold: float) -> AssetGraph:
    """
    アセットグラフの作成

    Args:
        dist: 距離行列
        threshold: 距離の閾値（d < threshold の組だけを辺とする）

    Returns:
        AssetGraph（どの系列とも結ばれないノードは含まない）
    """
    if threshold < 0:
        raise ValidationError("閾値は0以上で指定してください", "invalid_threshold")

    rows, cols = np.triu_indices(len(dist.labels), k=1)
    keep = dist.values[rows, cols] < threshold

    graph = nx.Graph()
    for i, j in zip(rows[keep], cols[keep]):
        graph.add_edge(dist.labels[i], dist.labels[j], distance=float(dist.values[i, j]))

    logger.info(f"アセットグラフ (T={threshold}): {graph.number_of_nodes()}ノード, {graph.number_of_edges()}辺")
    return AssetGraph(float(threshold), graph)


def _largest_component(graph: nx.Graph) -> list[str]:
    # 同じ大きさなら辞書順で最小のラベルを含む成分
    components = [sorted(c) for c in nx.connected_components(graph)]
    return min(components, key=lambda c: (-len(c), c[0]))


def _principal_eigenvector(graph: nx.Graph, max_iter: int = PowerIteration.MAX_ITER.value) -> dict[str, float]:
    """
    べき乗法による主固有ベクトル（単位ノルム）

    networkx は (A + I) に対して反復するため二部グラフでも収束します。
    """
    try:
        return nx.eigenvector_centrality(graph, max_iter=max_iter, tol=PowerIteration.TOL.value, weight=None)
    except nx.PowerIterationFailedConvergence as e:
        raise NumericalError(
            f"固有ベクトル中心性のべき乗法が {max_iter} 回で収束しませんでした", "power_iteration_not_converged"
        ) from e


def centralities(graph: AssetGraph) -> CentralityReport:
    """
    中心性指標の計算

    - 次数: 接続している辺の数
    - 固有ベクトル中心性: 最大連結成分の隣接行列の主固有ベクトル（単位ノルム、その他のノードは0）
    - 媒介中心性: 重みなし最短経路に基づく経路数（同じ長さの経路は等分、端点は除外、正規化なし）
    """
    g = graph.graph
    if g.number_of_edges() == 0:
        raise ValidationError("辺のないグラフでは中心性を計算できません", "empty_graph")

    degree = {node: int(d) for node, d in g.degree()}

    component = _largest_component(g)
    principal = _principal_eigenvector(g.subgraph(component))
    eigenvector = {node: 0.0 for node in g.nodes}
    eigenvector.update({node: float(max(principal[node], 0.0)) for node in component})

    # 無向グラフでは normalized=False で各ノード対を1回ずつ数える
    betweenness = nx.betweenness_centrality(g, normalized=False, weight=None, endpoints=False)
    betweenness = {node: float(value) for node, value in betweenness.items()}

    return CentralityReport(degree, eigenvector, betweenness)


def normalized_stress(distances: np.ndarray, coordinates: np.ndarray) -> float:
    """
    正規化ストレス S = √(Σ(d_ij − d̄_ij)² / Σ d_ij²)（i<j の和）
    """
    target = squareform(distances, checks=False)
    embedded = pdist(coordinates)
    denominator = float(np.sum(target**2))
    if denominator == 0:
        return float(np.sqrt(np.sum(embedded**2)))
    return float(np.sqrt(np.sum((target - embedded) ** 2) / denominator))


def classical_scaling(distances: np.ndarray, m: int, seed: int = 0) -> np.ndarray:
    """
    古典的尺度構成法（二重中心化したグラム行列の固有値分解）

    正の固有値が m 個に満たない場合、足りない軸は seed に基づく微小な乱数で埋めます。
    """
    n = distances.shape[0]
    centering = np.eye(n) - np.full((n, n), 1.0 / n)
    gram = -0.5 * centering @ (distances**2) @ centering
    eigenvalues, eigenvectors = linalg.eigh((gram + gram.T) / 2)
    order = np.argsort(eigenvalues)[::-1][:m]
    eigenvalues, eigenvectors = eigenvalues[order], eigenvectors[:, order]

    # 符号の正規化
    pivots = np.argmax(np.abs(eigenvectors), axis=0)
    eigenvectors = eigenvectors * np.where(eigenvectors[pivots, np.arange(m)] < 0, -1.0, 1.0)

    coordinates = eigenvectors * np.sqrt(np.clip(eigenvalues, 0, None))
    degenerate = eigenvalues <= 1e-12 * max(float(eigenvalues[0]), 1.0)
    if degenerate.any():
        rng = np.random.default_rng(seed)
        scale = 1e-3 * max(float(distances.mean()), 1e-12)
        coordinates[:, degenerate] = rng.normal(0.0, scale, size=(n, int(degenerate.sum())))
    return coordinates - coordinates.mean(axis=0)


def _guttman_transform(distances: np.ndarray, coordinates: np.ndarray) -> np.ndarray:
    n = distances.shape[0]
    embedded = squareform(pdist(coordinates))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(embedded > 0, distances / embedded, 0.0)
    b = -ratio
    np.fill_diagonal(b, 0.0)
    np.fill_diagonal(b, -b.sum(axis=1))
    return b @ coordinates / n


def mds_embed(dist: DistanceMatrix, m: int = 2, seed: int = 0) -> Embedding:
    """
    多次元尺度構成法による埋め込み

    Args:
        dist: 距離行列
        m: 埋め込み次元
        seed: 乱数シード（古典的尺度構成法が退化した場合のみ使用）

    Returns:
        Embedding

    古典的尺度構成法の解を初期値とし、ストレスの相対変化が 1e-9 未満になるか
    500回に達するまで SMACOF で改善します。ストレスは反復ごとに単調非増加です。
    """
    n = len(dist.labels)
    if m < 1:
        raise ValidationError("埋め込み次元は1以上で指定してください", "invalid_dimension")
    if m >= n:
        raise ValidationError(f"埋め込み次元 ({m}) がノード数 ({n}) 以上です", "dimension_too_large")

    distances = np.asarray(dist.values, dtype=float)
    coordinates = classical_scaling(distances, m, seed)
    stress = normalized_stress(distances, coordinates)
    history = [stress]

    for _ in range(Majorization.MAX_ITER.value):
        if stress == 0:
            break
        candidate = _guttman_transform(distances, coordinates)
        candidate_stress = normalized_stress(distances, candidate)
        if candidate_stress > stress + Majorization.MONOTONE_SLACK.value:
            raise NumericalError(
                f"SMACOF の反復でストレスが増加しました ({stress:.3g} -> {candidate_stress:.3g})", "stress_increase"
            )
        coordinates = candidate
        previous, stress = stress, candidate_stress
        history.append(stress)
        if (previous - stress) / previous < Majorization.TOL.value:
            break

    coordinates = coordinates - coordinates.mean(axis=0)
    coordinates.flags.writeable = False
    logger.info(f"MDS 埋め込み完了: {n}ノード, m={m}, ストレス {stress:.6f}, 反復 {len(history) - 1}回")
    return Embedding(dist.labels, coordinates, stress, tuple(history))
