"""
スペクトル解析モジュール

このモジュールは、相関行列の固有値・固有ベクトルを計算し、
シャッフルによる帰無アンサンブルおよび Marčenko–Pastur 分布と比較して
固有値をシグナル / ノイズに分類します。
また、最大固有値の固有ベクトルで作ったポートフォリオ（マーケットモード）を
回帰で取り除く処理を繰り返し適用できます。

主な機能:
- 固有値分解（降順、符号の正規化付き）
- Marčenko–Pastur 密度・累積分布・理論上の上下限
- 列ごとの独立シャッフルによる帰無アンサンブル
- 固有値のシグナル / ノイズ分類
- マーケットモードの除去（R_t = a + b I_t + E_t）とその反復
- ヒストグラム・固有ベクトル棒グラフ用のデータ作成
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd
from scipy import integrate, linalg
from sklearn.neighbors import KernelDensity

from src.tasks.correlation_core import (
    CorrelationMatrix,
    CorrelationMethod,
    correlate_columns,
    correlation_matrix,
    rank_columns,
)
from src.tasks.panel_ingest import ReturnPanel
from src.utils.exceptions import ValidationError
from src.utils.log_config import logger
from src.utils.seeds import simulation_generators


class NoiseClass(str, Enum):
    ABOVE = "above-noise"
    NOISE = "noise"
    BELOW = "below-noise"


class Tolerance(Enum):
    SYMMETRY = 1e-9
    # 残差の標準偏差が元系列のこの割合以下なら完全に説明されたとみなす
    EXPLAINED = 1e-10


@dataclass(frozen=True, eq=False)
class SpectralSummary:
    """
    固有値分解の結果

    Attributes:
        labels: 系列ラベル
        eigenvalues: 固有値（降順）
        eigenvectors: 固有ベクトル（k列目が k番目の固有値に対応、最大絶対値の成分が正）
        classification: 帰無分布と比較した分類（比較前は None）
    """

    labels: tuple[str, ...]
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    classification: tuple[NoiseClass, ...] | None = None

    def with_classification(self, classification) -> "SpectralSummary":
        return SpectralSummary(self.labels, self.eigenvalues, self.eigenvectors, tuple(classification))

    def count(self, noise_class: NoiseClass) -> int:
        if self.classification is None:
            return 0
        return sum(1 for c in self.classification if c == noise_class)

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "eigenvalues": self.eigenvalues.tolist(),
            "classification": None if self.classification is None else [c.value for c in self.classification],
            "eigenvectors": self.eigenvectors.tolist(),
        }


@dataclass(frozen=True, eq=False)
class NullEnsemble:
    """
    シャッフルデータによる帰無アンサンブル

    Attributes:
        n_sims: シミュレーション回数
        seed: 乱数シード
        samples: シミュレーションごとの固有値（n_sims x 次元、各行は降順）
        sample_size: 元パネルの行数 T
    """

    n_sims: int
    seed: int
    samples: np.ndarray
    sample_size: int

    @property
    def dimension(self) -> int:
        return self.samples.shape[1]

    @property
    def envelope(self) -> tuple[np.ndarray, np.ndarray]:
        """順位ごとの (最小値, 最大値)"""
        return self.samples.min(axis=0), self.samples.max(axis=0)

    @property
    def global_min(self) -> float:
        return float(self.samples.min())

    @property
    def global_max(self) -> float:
        return float(self.samples.max())

    @property
    def mp_bounds(self) -> tuple[float, float] | None:
        q = self.sample_size / self.dimension
        return marchenko_pastur_bounds(q) if q > 1 else None

    def to_dict(self) -> dict:
        env_min, env_max = self.envelope
        return {
            "n_sims": self.n_sims,
            "seed": self.seed,
            "sample_size": self.sample_size,
            "dimension": self.dimension,
            "envelope_min": env_min.tolist(),
            "envelope_max": env_max.tolist(),
            "mp_bounds": None if self.mp_bounds is None else list(self.mp_bounds),
        }


@dataclass(frozen=True, eq=False)
class ModeRemovalResult:
    """
    回帰 R_t = a + b I_t + E_t の結果

    Attributes:
        mode: モードポートフォリオのリターン I_t
        slopes: 系列ごとの b
        intercepts: 系列ごとの a
        residuals: 残差 E_t のパネル
    """

    mode: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    residuals: ReturnPanel

    def coefficients(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"label": list(self.residuals.labels), "intercept": self.intercepts, "slope": self.slopes}
        )


@dataclass(frozen=True, eq=False)
class ModeRemovalRound:
    """反復除去の1回分の結果"""

    round: int
    removed_eigenvalue: float
    removal: ModeRemovalResult
    residual_matrix: CorrelationMatrix
    residual_spectrum: SpectralSummary


def eigendecompose(matrix: CorrelationMatrix) -> SpectralSummary:
    """
    相関行列の固有値分解

    Args:
        matrix: 対称な相関行列

    Returns:
        降順に並べた固有値と固有ベクトル（分類は未設定）

    各固有ベクトルは絶対値最大の成分が正になるよう符号を揃えます。
    """
    values = matrix.values
    asymmetry = float(np.max(np.abs(values - values.T))) if values.size else 0.0
    if asymmetry > Tolerance.SYMMETRY.value:
        raise ValidationError(f"相関行列が対称ではありません (最大差 {asymmetry:.3g})", "asymmetric_matrix")

    eigenvalues, eigenvectors = linalg.eigh((values + values.T) / 2)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]

    # 符号の正規化
    pivots = np.argmax(np.abs(eigenvectors), axis=0)
    signs = np.sign(eigenvectors[pivots, np.arange(eigenvectors.shape[1])])
    signs[signs == 0] = 1.0
    eigenvectors = eigenvectors * signs

    eigenvalues.flags.writeable = False
    eigenvectors.flags.writeable = False
    return SpectralSummary(matrix.labels, eigenvalues, eigenvectors)


def marchenko_pastur_bounds(q: float) -> tuple[float, float]:
    """
    Marčenko–Pastur 分布の台 [λ-, λ+]

    Args:
        q: T/N (> 1)
    """
    if q <= 1:
        raise ValidationError(f"Q = T/N は1より大きい必要があります (Q={q})", "invalid_q")
    root = np.sqrt(1.0 / q)
    return float((1 - root) ** 2), float((1 + root) ** 2)


def marchenko_pastur(q: float, eigenvalue):
    """
    単位分散データに対する Marčenko–Pastur 密度

    ρ(λ) = Q √((λ+ − λ)(λ − λ−)) / (2πλ)  （台の外では0）
    """
    lower, upper = marchenko_pastur_bounds(q)
    lam = np.asarray(eigenvalue, dtype=float)
    inside = (lam > lower) & (lam < upper)
    safe = np.where(inside, lam, 1.0)
    density = np.where(inside, q * np.sqrt(np.clip((upper - safe) * (safe - lower), 0, None)) / (2 * np.pi * safe), 0.0)
    return float(density) if density.ndim == 0 else density


def marchenko_pastur_cdf(q: float, eigenvalue: float) -> float:
    """Marčenko–Pastur 分布の累積分布関数（数値積分）"""
    lower, upper = marchenko_pastur_bounds(q)
    if eigenvalue <= lower:
        return 0.0
    if eigenvalue >= upper:
        return 1.0
    value, _ = integrate.quad(lambda lam: marchenko_pastur(q, lam), lower, eigenvalue, limit=200)
    return float(min(max(value, 0.0), 1.0))


def shuffle_columns(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """各列を独立に並べ替える（列ごとの値の多重集合は保存される）"""
    return rng.permuted(values, axis=0)


def shuffle_null(
    panel: ReturnPanel,
    n_sims: int,
    seed: int,
    method: CorrelationMethod | str = CorrelationMethod.SPEARMAN,
    n_jobs: int = 1,
) -> NullEnsemble:
    """
    シャッフルによる帰無アンサンブル

    Args:
        panel: ReturnPanel
        n_sims: シミュレーション回数
        seed: 乱数シード
        method: 相関の種類
        n_jobs: 並列スレッド数（結果は n_jobs に依存しない）

    Returns:
        NullEnsemble

    各シミュレーションでは、系列ごとに独立に時間方向を並べ替えて
    平均・標準偏差を保ったまま同時点の関係を壊し、相関行列の固有値を計算します。
    i 番目のシミュレーションの乱数は (seed, i) から導出されます。
    """
    if n_sims < 1:
        raise ValidationError("n_sims は1以上で指定してください", "invalid_n_sims")
    method = CorrelationMethod(method)

    # 順位は並べ替えと可換なので、Spearman の場合は先に順位へ変換しておく
    base = rank_columns(panel.returns) if method == CorrelationMethod.SPEARMAN else panel.returns
    generators = simulation_generators(seed, n_sims)

    def simulate(index: int) -> np.ndarray:
        shuffled = shuffle_columns(base, generators[index])
        return np.sort(linalg.eigvalsh(correlate_columns(shuffled)))[::-1]

    logger.info(f"帰無アンサンブル計算開始: {n_sims}回, {panel.n_series}系列, method={method.value}")
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as executor:
            rows = list(executor.map(simulate, range(n_sims)))
    else:
        rows = [simulate(i) for i in range(n_sims)]

    samples = np.vstack(rows)
    samples.flags.writeable = False
    return NullEnsemble(n_sims, seed, samples, panel.n_rows)


def classify_eigenvalues(summary: SpectralSummary, null: NullEnsemble) -> SpectralSummary:
    """
    固有値の分類

    帰無アンサンブル全体の最大値を超える固有値は above-noise、
    最小値を下回る固有値は below-noise、それ以外は noise とします。
    """
    if len(summary.eigenvalues) != null.dimension:
        raise ValidationError(
            f"次元が一致しません (固有値 {len(summary.eigenvalues)}, 帰無 {null.dimension})", "dimension_mismatch"
        )
    upper, lower = null.global_max, null.global_min
    classification = [
        NoiseClass.ABOVE if value > upper else NoiseClass.BELOW if value < lower else NoiseClass.NOISE
        for value in summary.eigenvalues
    ]
    classified = summary.with_classification(classification)
    logger.info(
        f"固有値分類: above={classified.count(NoiseClass.ABOVE)}, "
        f"noise={classified.count(NoiseClass.NOISE)}, below={classified.count(NoiseClass.BELOW)}"
    )
    return classified


def market_mode_series(panel: ReturnPanel, eigenvector) -> np.ndarray:
    """
    固有ベクトルの成分を重みとしたポートフォリオのリターン I_t = Σ v_i R_{t,i}

    重みの再正規化は行いません。
    """
    weights = np.asarray(eigenvector, dtype=float)
    if weights.shape != (panel.n_series,):
        raise ValidationError(
            f"固有ベクトルの長さ ({weights.size}) が系列数 ({panel.n_series}) と一致しません", "length_mismatch"
        )
    return panel.returns @ weights


def remove_mode(panel: ReturnPanel, mode) -> ModeRemovalResult:
    """
    モードの除去（系列ごとの最小二乗回帰）

    Args:
        panel: ReturnPanel
        mode: モードポートフォリオのリターン I_t

    Returns:
        ModeRemovalResult（残差は系列ごとに平均0、I_t と無相関）
    """
    mode = np.array(mode, dtype=float, copy=True)
    if mode.shape != (panel.n_rows,):
        raise ValidationError(f"モード系列の長さ ({mode.size}) が行数 ({panel.n_rows}) と一致しません", "length_mismatch")
    if np.ptp(mode) == 0:
        raise ValidationError("モード系列の分散が0です", "zero_variance_mode")

    returns = panel.returns
    mode_mean = mode.mean()
    centered_mode = mode - mode_mean
    means = returns.mean(axis=0)
    centered = returns - means

    slopes = centered_mode @ centered / (centered_mode @ centered_mode)
    intercepts = means - slopes * mode_mean
    residuals = centered - np.outer(centered_mode, slopes)

    # 完全に説明された系列は残差を厳密に0とする
    explained = residuals.std(axis=0) <= Tolerance.EXPLAINED.value * np.maximum(returns.std(axis=0), 1e-300)
    residuals[:, explained] = 0.0

    mode.flags.writeable = False
    return ModeRemovalResult(
        mode=mode,
        slopes=slopes,
        intercepts=intercepts,
        residuals=ReturnPanel(panel.dates, panel.labels, residuals, panel.frequency),
    )


def standardize(panel: ReturnPanel) -> ReturnPanel:
    """
    列ごとに平均0・分散1へ標準化

    分散0の列は警告を出して除外します。
    """
    constant = np.ptp(panel.returns, axis=0) == 0
    if constant.any():
        dropped = [label for label, c in zip(panel.labels, constant) if c]
        logger.warning(f"分散0の系列を除外します: {', '.join(dropped)}")
    keep = ~constant
    values = panel.returns[:, keep]
    values = (values - values.mean(axis=0)) / values.std(axis=0)
    labels = tuple(label for label, k in zip(panel.labels, keep) if k)
    return ReturnPanel(panel.dates, labels, values, panel.frequency)


def iterate_mode_removal(
    panel: ReturnPanel, n_modes: int, method: CorrelationMethod | str = CorrelationMethod.SPEARMAN
) -> list[ModeRemovalRound]:
    """
    最大固有値モードの反復除去

    各回で、標準化したパネルの相関行列から最大固有値の固有ベクトルを求め、
    そのポートフォリオで回帰した残差を次の回の入力とします。
    """
    if n_modes < 1:
        raise ValidationError(f"除去するモード数は1以上で指定してください (n_modes={n_modes})", "invalid_n_modes")
    rounds = []
    current = standardize(panel)
    for k in range(1, n_modes + 1):
        spectrum = eigendecompose(correlation_matrix(current, method))
        mode = market_mode_series(current, spectrum.eigenvectors[:, 0])
        removal = remove_mode(current, mode)

        current = standardize(removal.residuals)
        residual_matrix = correlation_matrix(current, method)
        residual_spectrum = eigendecompose(residual_matrix)
        logger.info(
            f"モード除去 {k}回目: 除去した固有値 {spectrum.eigenvalues[0]:.4f}, "
            f"残差の最大固有値 {residual_spectrum.eigenvalues[0]:.4f}"
        )
        rounds.append(ModeRemovalRound(k, float(spectrum.eigenvalues[0]), removal, residual_matrix, residual_spectrum))
    return rounds


def eigenvalue_histogram(
    eigenvalues,
    bins: int,
    q: float | None = None,
    null: NullEnsemble | None = None,
    bandwidth: float = 0.1,
) -> pd.DataFrame:
    """
    固有値ヒストグラムのプロット用データ

    Args:
        eigenvalues: 固有値
        bins: ビン数
        q: T/N（指定時は各ビン中心の Marčenko–Pastur 密度を付与）
        null: 帰無アンサンブル（指定時はシミュレーション1回あたりの平均度数を付与）
        bandwidth: カーネル密度推定のバンド幅

    Returns:
        列 (bin_left, bin_right, bin_center, count, mp_density, null_count, kde_density) の DataFrame
    """
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    pooled = eigenvalues if null is None else np.concatenate([eigenvalues, null.samples.ravel()])
    edges = np.histogram_bin_edges(pooled, bins=bins)
    centers = (edges[:-1] + edges[1:]) / 2
    counts, _ = np.histogram(eigenvalues, bins=edges)

    table = pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "bin_center": centers, "count": counts})
    table["mp_density"] = marchenko_pastur(q, centers) if q is not None and q > 1 else np.nan
    if null is not None:
        null_counts, _ = np.histogram(null.samples.ravel(), bins=edges)
        table["null_count"] = null_counts / null.n_sims
    else:
        table["null_count"] = np.nan

    kde = KernelDensity(kernel="gaussian", bandwidth=bandwidth).fit(eigenvalues.reshape(-1, 1))
    table["kde_density"] = np.exp(kde.score_samples(centers.reshape(-1, 1)))
    return table


def eigenvector_bars(summary: SpectralSummary, k: int) -> pd.DataFrame:
    """上位 k 個の固有ベクトルの成分（棒グラフ用、行=系列）"""
    k = min(k, len(summary.eigenvalues))
    return pd.DataFrame(
        summary.eigenvectors[:, :k],
        index=pd.Index(list(summary.labels), name="label"),
        columns=[f"e{i + 1}" for i in range(k)],
    )
