"""
解析パイプラインモジュール

設定ファイルの内容に従って、価格パネルの読み込みから、相関行列・スペクトル・帰無分布・
モード除去・距離行列・アセットグラフ・中心性・埋め込みまでを順に計算し、
プロット用の成果物とマニフェストを出力します。

出力は "<出力先>.partial" に書き込み、全ステージが成功した場合のみ出力先へ移動します。
途中で失敗した場合は書きかけのディレクトリを削除し、ステージ名付きの StageError を送出します。

成果物の構成（期間分割ごと）:
    <split>/returns.csv                  日次対数リターン
    <split>/correlation_plain.csv        相関行列
    <split>/correlation_lagged.csv       ラグ付き拡大パネルの相関行列
    <split>/lag_profiles.csv             基準系列との時差相関
    <split>/yearly_benchmark.csv         年ごとの当日 / 前日相関
    <split>/spectrum_{plain,lagged}.json 固有値と分類
    <split>/null_{plain,lagged}.json     帰無アンサンブルの包絡線
    <split>/histogram_{plain,lagged}.csv 固有値ヒストグラム
    <split>/eigenvectors_{plain,lagged}.csv 上位固有ベクトルの成分
    <split>/mode_removal/...             モード除去の回帰係数と残差スペクトル
    <split>/weekly/...                   週次平均パネルの相関・スペクトル
    <split>/selective_lag/...            前日相関が強い系列をずらしたパネル
    <split>/distance.csv                 距離行列
    <split>/noise_threshold.json         ノイズ距離閾値
    <split>/graphs/...                   閾値ごとのアセットグラフと中心性
    <split>/embedding.csv                MDS 座標
    <split>/heatmaps/...                 ヒートマップ用グリッド
"""
import shutil
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from src.pipeline_config import PipelineConfig, SplitSection
from src.tasks.artifact_store import (
    ArtifactStore,
    centrality_frame,
    embedding_frame,
    lag_profiles_frame,
)
from src.tasks.correlation_core import (
    CorrelationMatrix,
    correlation_matrix,
    cross_correlation,
    lag_augment,
    lead_lag_shifts,
    shift_series,
    yearly_benchmark_correlations,
)
from src.tasks.market_network import (
    DistanceMatrix,
    asset_graph,
    centralities,
    distance_matrix,
    mds_embed,
    shuffled_distance_minima,
)
from src.tasks.panel_ingest import (
    CalendarPolicy,
    PricePanel,
    ReturnPanel,
    align_calendars,
    load_price_file,
    log_returns,
    weekly_average,
)
from src.tasks.spectral_analysis import (
    NullEnsemble,
    SpectralSummary,
    classify_eigenvalues,
    eigendecompose,
    eigenvalue_histogram,
    eigenvector_bars,
    iterate_mode_removal,
    shuffle_null,
)
from src.tasks.synthetic import SyntheticSpec, generate_synthetic
from src.utils.exceptions import LagnetError, StageError, ValidationError
from src.utils.log_config import logger
from src.utils.seeds import stage_seed

PARTIAL_SUFFIX = ".partial"
NOISE_QUANTILES = (0.01, 0.05, 0.5, 0.95)


def threshold_name(threshold: float) -> str:
    return f"T{threshold:.4f}"


@contextmanager
def stage(name: str) -> Iterator[None]:
    """ステージの開始・終了のログ出力と例外の StageError への変換"""
    logger.info(f"ステージ開始: {name}")
    try:
        yield
    except StageError:
        raise
    except (LagnetError, ValueError, OSError, ArithmeticError, np.linalg.LinAlgError) as e:
        logger.error(f"ステージ失敗: {name}: {e}")
        raise StageError(name, e) from e
    logger.info(f"ステージ完了: {name}")


class PipelineRunner:
    """
    設定に従ってパイプラインを実行するクラス

    Attributes:
        config: パイプライン設定
        seeds: 使用したステージ別シード（マニフェストに記録）
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.seeds: dict[str, int] = {}

    @property
    def output_dir(self) -> Path:
        return Path(self.config.output.directory)

    def seed_for(self, name: str) -> int:
        """マスターシードとステージ名から決まるシード"""
        seed = stage_seed(self.config.seed.master, name)
        self.seeds[name] = seed
        return seed

    @contextmanager
    def staging(self) -> Iterator[ArtifactStore]:
        """
        書き込み用の一時ディレクトリ

        正常終了時にマニフェストを書き、出力先へ置き換えます。
        例外時は一時ディレクトリを削除します。
        """
        target = self.output_dir
        partial = target.with_name(target.name + PARTIAL_SUFFIX)
        if partial.exists():
            shutil.rmtree(partial)
        store = ArtifactStore(partial)
        try:
            yield store
            store.write_manifest(self.config.parameters(), self.seeds)
        except BaseException:
            shutil.rmtree(partial, ignore_errors=True)
            logger.error(f"失敗したため書きかけの出力を削除しました: {partial}")
            raise
        if target.exists():
            shutil.rmtree(target)
        partial.rename(target)
        logger.info(f"成果物の出力完了: {target}")

    # ─── 入力 ────────────────────────────────────────────────────────────
    def load_prices(self) -> PricePanel:
        """価格パネルの読み込み（ファイル または 合成パネル）"""
        source = self.config.input
        with stage("ingest"):
            if source.synthetic is not None:
                return generate_synthetic(SyntheticSpec(**source.synthetic.model_dump()))
            return load_price_file(source.path, source.delimiter)

    def daily_returns(self, prices: PricePanel) -> ReturnPanel:
        """カレンダー調整と対数リターンの計算"""
        calendar = self.config.calendar
        with stage("returns"):
            aligned = align_calendars(prices, CalendarPolicy(calendar.mode, calendar.max_consecutive_fill))
            return log_returns(aligned)

    def benchmark(self, panel: ReturnPanel) -> str:
        benchmark = self.config.input.benchmark or panel.labels[0]
        with stage("benchmark"):
            panel.index_of(benchmark)
        return benchmark

    # ─── 期間分割ごとの処理 ─────────────────────────────────────────────
    def run_split(self, store: ArtifactStore, split: SplitSection, daily: ReturnPanel) -> None:
        """
        1つの期間分割に対する全ステージの実行

        無効なステージも後続ステージに必要な値はメモリ上で計算し、ファイルは書き出しません。
        """
        config = self.config
        enabled = config.stages
        method = config.correlation.method
        name = split.name
        params = {"split": name, "start": split.start, "end": split.end, "method": method.value}

        with stage(f"split[{name}]"):
            panel = daily.between(split.start, split.end)
            if panel.n_rows < 3:
                raise ValidationError(f"期間 {name} のデータが不足しています ({panel.n_rows}行)", "too_few_dates")
        logger.info(f"期間 {name}: {panel.n_rows}日 x {panel.n_series}系列")

        if enabled.returns:
            store.write_returns(f"{name}/returns.csv", panel, params)

        with stage(f"correlate[{name}]"):
            lagged_panel = lag_augment(panel, config.lag.max_lag)
            plain = correlation_matrix(panel, method)
            lagged = correlation_matrix(lagged_panel, method)
        lag_params = {**params, "max_lag": config.lag.max_lag}
        if enabled.correlate:
            store.write_matrix(f"{name}/correlation_plain.csv", plain.labels, plain.values, "correlation", params)
            store.write_matrix(
                f"{name}/correlation_lagged.csv", lagged.labels, lagged.values, "correlation", lag_params
            )

        if enabled.lag_profiles or enabled.yearly or enabled.selective_lag:
            benchmark = self.benchmark(panel)
            profile_params = {**params, "benchmark": benchmark}
            if enabled.lag_profiles:
                with stage(f"lag_profiles[{name}]"):
                    profiles = cross_correlation(panel, benchmark, panel.labels, config.correlation.lag_range, method)
                store.write_frame(
                    f"{name}/lag_profiles.csv",
                    lag_profiles_frame(profiles),
                    "lag_profiles",
                    {**profile_params, "lag_range": list(config.correlation.lag_range)},
                )
            if enabled.yearly:
                with stage(f"yearly[{name}]"):
                    yearly = yearly_benchmark_correlations(panel, benchmark, (0, 1), method)
                store.write_frame(f"{name}/yearly_benchmark.csv", yearly, "yearly_benchmark", profile_params)
            if enabled.selective_lag:
                self._selective_lag(store, name, panel, benchmark, profile_params)

        if enabled.spectrum or enabled.null:
            self._spectra(store, name, panel, plain, "plain", params)
            self._spectra(store, name, lagged_panel, lagged, "lagged", lag_params)

        rounds = []
        if enabled.mode_removal or enabled.heatmap:
            with stage(f"mode_removal[{name}]"):
                rounds = iterate_mode_removal(panel, config.mode_removal.n_modes, method)
            if enabled.mode_removal:
                for r in rounds:
                    round_params = {**params, "round": r.round, "removed_eigenvalue": r.removed_eigenvalue}
                    prefix = f"{name}/mode_removal/round{r.round}"
                    store.write_frame(
                        f"{prefix}_coefficients.csv", r.removal.coefficients(), "mode_coefficients", round_params
                    )
                    store.write_json(
                        f"{prefix}_spectrum.json", r.residual_spectrum.to_dict(), "residual_spectrum", round_params
                    )
                    q = panel.n_rows / r.residual_matrix.dimension
                    histogram = eigenvalue_histogram(
                        r.residual_spectrum.eigenvalues, config.spectrum.bins, q if q > 1 else None
                    )
                    store.write_frame(f"{prefix}_histogram.csv", histogram, "eigenvalue_histogram", round_params)

        if enabled.weekly:
            self._weekly(store, name, panel, params)

        if enabled.heatmap:
            grids = [("plain", plain), ("lagged", lagged)]
            grids += [(f"residual_round{r.round}", r.residual_matrix) for r in rounds]
            for kind, matrix in grids:
                store.write_matrix(
                    f"{name}/heatmaps/{kind}.csv", matrix.labels, matrix.values, "heatmap", {**params, "matrix": kind}
                )

        if enabled.distance or enabled.graph or enabled.centrality or enabled.embed:
            self._network(store, name, lagged_panel, lagged, lag_params)

    def _spectra(
        self,
        store: ArtifactStore,
        name: str,
        panel: ReturnPanel,
        matrix: CorrelationMatrix,
        kind: str,
        params: dict,
    ) -> SpectralSummary:
        """固有値分解・帰無アンサンブル・ヒストグラムの出力"""
        config = self.config
        enabled = config.stages
        with stage(f"spectrum[{name}:{kind}]"):
            summary = eigendecompose(matrix)
            null: NullEnsemble | None = None
            if enabled.null:
                seed = self.seed_for(f"null:{name}:{kind}")
                null = shuffle_null(panel, config.spectrum.n_sims, seed, matrix.method, config.spectrum.n_jobs)
                summary = classify_eigenvalues(summary, null)
            q = panel.n_rows / matrix.dimension
            histogram = eigenvalue_histogram(summary.eigenvalues, config.spectrum.bins, q if q > 1 else None, null)

        if enabled.null:
            store.write_json(
                f"{name}/null_{kind}.json", null.to_dict(), "null_ensemble", {**params, "n_sims": null.n_sims}
            )
        if enabled.spectrum:
            store.write_json(f"{name}/spectrum_{kind}.json", summary.to_dict(), "spectrum", params)
            store.write_frame(f"{name}/histogram_{kind}.csv", histogram, "eigenvalue_histogram", params)
            store.write_frame(
                f"{name}/eigenvectors_{kind}.csv",
                eigenvector_bars(summary, config.spectrum.top_eigenvectors),
                "eigenvector_bars",
                params,
                index=True,
            )
        return summary

    def _weekly(self, store: ArtifactStore, name: str, panel: ReturnPanel, params: dict) -> None:
        """週次平均パネルの相関行列・スペクトル・帰無分布"""
        config = self.config
        with stage(f"weekly[{name}]"):
            weekly = weekly_average(panel)
            matrix = correlation_matrix(weekly, config.correlation.method)
            seed = self.seed_for(f"weekly:{name}")
            null = shuffle_null(weekly, config.spectrum.n_sims, seed, matrix.method, config.spectrum.n_jobs)
            summary = classify_eigenvalues(eigendecompose(matrix), null)
            q = weekly.n_rows / matrix.dimension
            histogram = eigenvalue_histogram(summary.eigenvalues, config.spectrum.bins, q if q > 1 else None, null)

        weekly_params = {**params, "frequency": "weekly", "n_weeks": weekly.n_rows}
        store.write_matrix(f"{name}/weekly/correlation.csv", matrix.labels, matrix.values, "correlation", weekly_params)
        store.write_json(f"{name}/weekly/spectrum.json", summary.to_dict(), "spectrum", weekly_params)
        store.write_json(f"{name}/weekly/null.json", null.to_dict(), "null_ensemble", weekly_params)
        store.write_frame(f"{name}/weekly/histogram.csv", histogram, "eigenvalue_histogram", weekly_params)

    def _selective_lag(
        self, store: ArtifactStore, name: str, panel: ReturnPanel, benchmark: str, params: dict
    ) -> None:
        """前日の基準系列との相関が強い系列だけを1日ずらしたパネルの相関とスペクトル"""
        method = self.config.correlation.method
        with stage(f"selective_lag[{name}]"):
            shifts = lead_lag_shifts(panel, benchmark, method)
            shifted = shift_series(panel, shifts)
            matrix = correlation_matrix(shifted, method)
            summary = eigendecompose(matrix)

        store.write_json(f"{name}/selective_lag/shifts.json", shifts, "lead_lag_shifts", params)
        store.write_matrix(
            f"{name}/selective_lag/correlation.csv", matrix.labels, matrix.values, "correlation", params
        )
        store.write_json(f"{name}/selective_lag/spectrum.json", summary.to_dict(), "spectrum", params)

    def _network(
        self,
        store: ArtifactStore,
        name: str,
        panel: ReturnPanel,
        matrix: CorrelationMatrix,
        params: dict,
    ) -> None:
        """距離行列・ノイズ距離閾値・アセットグラフ・中心性・埋め込み"""
        config = self.config
        enabled = config.stages
        network = config.network

        with stage(f"distance[{name}]"):
            dist = distance_matrix(matrix)
        if enabled.distance:
            store.write_matrix(f"{name}/distance.csv", dist.labels, dist.values, "distance", params)

        thresholds = list(network.thresholds)
        if enabled.noise_threshold:
            with stage(f"noise_threshold[{name}]"):
                seed = self.seed_for(f"noise_threshold:{name}")
                minima = shuffled_distance_minima(
                    panel, network.noise_sims, seed, matrix.method, config.spectrum.n_jobs
                )
                noise_threshold = float(minima.min())
            logger.info(f"ノイズ距離閾値 ({name}): {noise_threshold:.4f}")
            store.write_json(
                f"{name}/noise_threshold.json",
                {
                    "threshold": noise_threshold,
                    "n_sims": network.noise_sims,
                    "seed": seed,
                    "quantiles": {str(q): float(np.quantile(minima, q)) for q in NOISE_QUANTILES},
                },
                "noise_threshold",
                {**params, "n_sims": network.noise_sims},
            )
            if network.include_noise_threshold and noise_threshold not in thresholds:
                thresholds = sorted([*thresholds, noise_threshold])

        if enabled.graph or enabled.centrality:
            self._graphs(store, name, dist, thresholds, params)

        if enabled.embed:
            with stage(f"embed[{name}]"):
                seed = self.seed_for(f"embed:{name}")
                embedding = mds_embed(dist, network.embedding_dim, seed)
            embed_params = {**params, "m": network.embedding_dim, "seed": seed}
            store.write_frame(f"{name}/embedding.csv", embedding_frame(embedding), "embedding", embed_params)
            store.write_json(
                f"{name}/embedding_stress.json",
                {
                    "stress": embedding.stress,
                    "iterations": embedding.iterations,
                    "stress_history": list(embedding.stress_history),
                },
                "embedding_stress",
                embed_params,
            )

    def _graphs(
        self, store: ArtifactStore, name: str, dist: DistanceMatrix, thresholds: list[float], params: dict
    ) -> None:
        enabled = self.config.stages
        for threshold in thresholds:
            stem = f"{name}/graphs/{threshold_name(threshold)}"
            graph_params = {**params, "threshold": threshold}
            with stage(f"graph[{name}:{threshold_name(threshold)}]"):
                graph = asset_graph(dist, threshold)
            if enabled.graph:
                store.write_graph(stem, graph, graph_params)

            if not enabled.centrality:
                continue
            if graph.graph.number_of_edges() == 0:
                logger.warning(f"辺がないため中心性を計算しません: {name} T={threshold}")
                continue
            with stage(f"centrality[{name}:{threshold_name(threshold)}]"):
                report = centralities(graph)
            store.write_json(
                f"{stem}_centrality.json", report.to_dict(self.config.network.top), "centrality", graph_params
            )
            store.write_frame(f"{stem}_centrality.csv", centrality_frame(report), "centrality", graph_params)

    # ─── 全体 ────────────────────────────────────────────────────────────
    def run(self) -> Path:
        """
        パイプライン全体の実行

        Returns:
            成果物ディレクトリ
        """
        logger.info(f"パイプライン開始: 出力先 {self.output_dir}")
        with self.staging() as store:
            daily = self.daily_returns(self.load_prices())
            for split in self.config.splits:
                self.run_split(store, split, daily)
        return self.output_dir


def run_pipeline(config: PipelineConfig) -> Path:
    """
    設定に従ってパイプラインを実行

    Args:
        config: パイプライン設定

    Returns:
        成果物ディレクトリ（manifest.json を含む）
    """
    return PipelineRunner(config).run()
