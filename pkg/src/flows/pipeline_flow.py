"""
解析パイプラインのPrefectフロー

このモジュールでは、PipelineRunner の各ステージを Prefect のタスクとして登録し、
価格パネルの読み込みから成果物の出力までを1つのフローとして実行します。

処理順序:
1. 設定ファイルの読み込み
2. 価格パネルの読み込み（ファイル または 合成パネル）
3. カレンダー調整と対数リターンの計算
4. 期間分割ごとの解析（相関・スペクトル・モード除去・ネットワーク）
5. マニフェストの作成と出力先への移動

いずれかのタスクが失敗した場合は後続のタスクを実行せず、書きかけの出力を削除します。
"""
from prefect import flow, get_run_logger, task
from prefect.cache_policies import NO_CACHE

from src.pipeline_config import PipelineConfig, SplitSection, load_config
from src.tasks.artifact_store import ArtifactStore
from src.tasks.panel_ingest import PricePanel, ReturnPanel
from src.tasks.pipeline import PipelineRunner


@task(name="設定読み込みタスク", cache_policy=NO_CACHE)
def load_config_task(config_path: str | None, overrides: dict | None) -> PipelineConfig:
    """設定ファイルを読み込むタスク"""
    logger = get_run_logger()
    config = load_config(config_path, overrides)
    logger.info(f"設定読み込み完了: 期間分割 {[s.name for s in config.splits]}")
    return config


@task(name="価格パネル読み込みタスク", cache_policy=NO_CACHE)
def ingest_task(runner: PipelineRunner) -> PricePanel:
    """価格パネルを読み込むタスク"""
    logger = get_run_logger()
    prices = runner.load_prices()
    logger.info(f"価格パネル読み込み完了: {prices.n_dates}日 x {len(prices.labels)}系列")
    return prices


@task(name="リターン計算タスク", cache_policy=NO_CACHE)
def returns_task(runner: PipelineRunner, prices: PricePanel) -> ReturnPanel:
    """カレンダー調整と対数リターンを計算するタスク"""
    logger = get_run_logger()
    daily = runner.daily_returns(prices)
    logger.info(f"リターン計算完了: {daily.n_rows}日 x {daily.n_series}系列")
    return daily


@task(name="期間分割解析タスク", cache_policy=NO_CACHE)
def split_task(runner: PipelineRunner, store: ArtifactStore, split: SplitSection, daily: ReturnPanel) -> int:
    """1つの期間分割を解析するタスク（書き出した成果物の累計数を返す）"""
    logger = get_run_logger()
    logger.info(f"期間分割の解析開始: {split.name}")
    runner.run_split(store, split, daily)
    logger.info(f"期間分割の解析完了: {split.name} (成果物 {len(store.entries)}件)")
    return len(store.entries)


@flow(name="時差相関ネットワーク解析フロー")
def pipeline_flow(config_path: str | None = None, overrides: dict | None = None) -> dict:
    """
    パイプライン全体を実行するフロー

    Args:
        config_path: TOML 設定ファイルのパス
        overrides: "section.key" 形式の上書き値

    Returns:
        出力先ディレクトリと成果物数
    """
    logger = get_run_logger()
    logger.info("時差相関ネットワーク解析フローを開始します")

    config = load_config_task(config_path, overrides)
    runner = PipelineRunner(config)
    n_artifacts = 0
    with runner.staging() as store:
        prices = ingest_task(runner)
        daily = returns_task(runner, prices)
        for split in config.splits:
            n_artifacts = split_task(runner, store, split, daily)

    logger.info(f"時差相関ネットワーク解析フローが完了しました: {runner.output_dir} ({n_artifacts}件)")
    return {"output_dir": str(runner.output_dir), "artifacts": n_artifacts}


if __name__ == "__main__":
    pipeline_flow()
