"""
コマンドラインインターフェース

サブコマンド:
    ingest       価格ファイル -> リターン CSV
    correlate    リターン CSV -> 相関行列 CSV（--max-lag でラグ付き拡大）
    spectrum     リターン CSV -> 固有値・固有ベクトル JSON（--n-sims で分類付き）
    null         リターン CSV -> 帰無アンサンブル JSON
    remove-mode  リターン CSV -> 残差リターン CSV
    distance     相関行列 CSV -> 距離行列 CSV
    graph        距離行列 CSV -> アセットグラフ（辺リスト CSV + JSON）
    centrality   アセットグラフ JSON -> 中心性 JSON
    embed        距離行列 CSV -> MDS 座標 CSV
    synth        合成リードラグ価格パネル CSV
    run          設定ファイルに従ってパイプライン全体を実行

成功時は標準出力に1行の JSON を出力します。失敗時は標準エラーに1行の JSON
{"status": "error", "kind", "code", "stage", "message"} を出力し、
入力エラーは終了コード1、数値計算の失敗は終了コード2で終了します。
"""
import argparse
import json
import sys
from pathlib import Path

import pandas as pd

from env_settings import OUTPUT_PATH
from src.pipeline_config import load_config
from src.tasks.artifact_store import (
    centrality_frame,
    dumps_json,
    edge_list_frame,
    embedding_frame,
    frame_to_csv,
    matrix_frame,
    read_asset_graph,
    read_correlation_matrix,
    read_distance_matrix,
    read_return_panel,
    return_panel_frame,
)
from src.tasks.correlation_core import CorrelationMethod, correlation_matrix, lag_augment
from src.tasks.market_network import (
    asset_graph,
    centralities,
    distance_matrix,
    mds_embed,
    noise_distance_threshold,
)
from src.tasks.panel_ingest import (
    CalendarMode,
    CalendarPolicy,
    DefaultCalendar,
    Frequency,
    ReturnPanel,
    align_calendars,
    load_price_file,
    log_returns,
    weekly_average,
)
from src.tasks.pipeline import run_pipeline
from src.tasks.spectral_analysis import (
    classify_eigenvalues,
    eigendecompose,
    iterate_mode_removal,
    shuffle_null,
)
from src.tasks.synthetic import SyntheticSpec, generate_synthetic
from src.utils.exceptions import LagnetError, ValidationError
from src.utils.log_config import logger, setup_logging

METHODS = [m.value for m in CorrelationMethod]


def _default_output(name: str) -> str:
    return str(Path(OUTPUT_PATH) / name)


def _write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info(f"出力しました: {path}")
    return path


def _load_returns(args) -> ReturnPanel:
    panel = read_return_panel(args.returns, args.frequency)
    return lag_augment(panel, args.max_lag) if getattr(args, "max_lag", 0) else panel


# ─── サブコマンド ────────────────────────────────────────────────────────────
def cmd_ingest(args) -> dict:
    prices = load_price_file(args.input, args.delimiter)
    aligned = align_calendars(prices, CalendarPolicy(args.calendar, args.max_fill))
    panel = log_returns(aligned)
    if args.frequency == Frequency.WEEKLY.value:
        panel = weekly_average(panel)
    _write_text(args.output, frame_to_csv(return_panel_frame(panel)))
    return {"output": args.output, "rows": panel.n_rows, "series": panel.n_series}


def cmd_correlate(args) -> dict:
    panel = _load_returns(args)
    matrix = correlation_matrix(panel, args.method)
    _write_text(args.output, frame_to_csv(matrix_frame(matrix.labels, matrix.values)))
    return {"output": args.output, "dimension": matrix.dimension, "sample_size": matrix.sample_size}


def cmd_spectrum(args) -> dict:
    panel = _load_returns(args)
    matrix = correlation_matrix(panel, args.method)
    summary = eigendecompose(matrix)
    if args.n_sims > 0:
        null = shuffle_null(panel, args.n_sims, args.seed, args.method, args.n_jobs)
        summary = classify_eigenvalues(summary, null)
    _write_text(args.output, dumps_json(summary.to_dict()))
    return {"output": args.output, "largest_eigenvalue": float(summary.eigenvalues[0])}


def cmd_null(args) -> dict:
    panel = _load_returns(args)
    null = shuffle_null(panel, args.n_sims, args.seed, args.method, args.n_jobs)
    _write_text(args.output, dumps_json(null.to_dict()))
    return {"output": args.output, "global_min": null.global_min, "global_max": null.global_max}


def cmd_remove_mode(args) -> dict:
    panel = _load_returns(args)
    rounds = iterate_mode_removal(panel, args.n_modes, args.method)
    residuals = rounds[-1].removal.residuals
    _write_text(args.output, frame_to_csv(return_panel_frame(residuals)))
    return {
        "output": args.output,
        "removed_eigenvalues": [r.removed_eigenvalue for r in rounds],
        "residual_largest_eigenvalue": float(rounds[-1].residual_spectrum.eigenvalues[0]),
    }


def cmd_distance(args) -> dict:
    dist = distance_matrix(read_correlation_matrix(args.correlation))
    _write_text(args.output, frame_to_csv(matrix_frame(dist.labels, dist.values)))
    return {"output": args.output, "dimension": len(dist.labels)}


def cmd_graph(args) -> dict:
    dist = read_distance_matrix(args.distance)
    threshold = args.threshold
    if threshold is None:
        if args.noise_returns is None:
            raise ValidationError("--threshold か --noise-returns のどちらかを指定してください", "missing_threshold")
        panel = read_return_panel(args.noise_returns)
        threshold = noise_distance_threshold(panel, args.n_sims, args.seed, args.method, args.n_jobs)
    graph = asset_graph(dist, threshold)
    _write_text(f"{args.output}_edges.csv", frame_to_csv(edge_list_frame(graph), index=False))
    _write_text(f"{args.output}.json", dumps_json(graph.to_dict()))
    return {
        "output": args.output,
        "threshold": threshold,
        "nodes": graph.graph.number_of_nodes(),
        "edges": graph.graph.number_of_edges(),
    }


def cmd_centrality(args) -> dict:
    report = centralities(read_asset_graph(args.graph))
    _write_text(args.output, dumps_json(report.to_dict(args.top)))
    if args.table:
        _write_text(args.table, frame_to_csv(centrality_frame(report), index=False))
    return {"output": args.output, "nodes": len(report.degree)}


def cmd_embed(args) -> dict:
    embedding = mds_embed(read_distance_matrix(args.distance), args.dim, args.seed)
    _write_text(args.output, frame_to_csv(embedding_frame(embedding), index=False))
    return {"output": args.output, "stress": embedding.stress, "iterations": embedding.iterations}


def cmd_synth(args) -> dict:
    spec = SyntheticSpec(
        n_west=args.n_west,
        n_east=args.n_east,
        loading=args.loading,
        lead_lag_loading=args.lead_lag_loading,
        noise=args.noise,
        n_days=args.days,
        seed=args.seed,
        holiday_rate=args.holiday_rate,
        start_date=args.start_date,
    )
    frame = generate_synthetic(spec).to_frame()
    frame.index = pd.DatetimeIndex(frame.index).strftime("%Y-%m-%d")
    frame.index.name = "date"
    _write_text(args.output, frame_to_csv(frame))
    return {"output": args.output, "dates": len(frame), "series": frame.shape[1]}


def cmd_run(args) -> dict:
    overrides = {
        "input.path": args.input,
        "output.directory": args.output_dir,
        "seed.master": args.seed,
        "correlation.method": args.method,
        "lag.max_lag": args.max_lag,
    }
    if args.prefect:
        from src.flows.pipeline_flow import pipeline_flow

        result = pipeline_flow(args.config, overrides)
        return {"output": result["output_dir"], "artifacts": result["artifacts"]}

    output = run_pipeline(load_config(args.config, overrides))
    return {"output": str(output)}


# ─── 引数定義 ────────────────────────────────────────────────────────────────
def _add_returns_args(parser: argparse.ArgumentParser, lag: bool = True) -> None:
    parser.add_argument("--returns", required=True, help="リターン CSV（ingest の出力）")
    parser.add_argument("--frequency", choices=[f.value for f in Frequency], default=Frequency.DAILY.value)
    parser.add_argument("--method", choices=METHODS, default=CorrelationMethod.SPEARMAN.value)
    if lag:
        parser.add_argument("--max-lag", type=int, default=0, help="ラグ付き拡大の最大ラグ（0で拡大なし）")


def _add_simulation_args(parser: argparse.ArgumentParser, n_sims: int) -> None:
    parser.add_argument("--n-sims", type=int, default=n_sims)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lagnet", description="時差のある株価指数の相関ネットワーク解析")
    parser.add_argument("--log-level", default=None, help="ログレベル（既定は LOG_LEVEL 環境変数）")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="価格ファイルからリターンを作成")
    p.add_argument("--input", required=True)
    p.add_argument("--delimiter", default=None)
    p.add_argument("--calendar", choices=[m.value for m in CalendarMode], default=CalendarMode.UNION_FILL_FORWARD.value)
    p.add_argument("--max-fill", type=int, default=DefaultCalendar.MAX_CONSECUTIVE_FILL.value)
    p.add_argument("--frequency", choices=[f.value for f in Frequency], default=Frequency.DAILY.value)
    p.add_argument("--output", default=_default_output("returns.csv"))
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("correlate", help="相関行列")
    _add_returns_args(p)
    p.add_argument("--output", default=_default_output("correlation.csv"))
    p.set_defaults(handler=cmd_correlate)

    p = sub.add_parser("spectrum", help="固有値分解")
    _add_returns_args(p)
    _add_simulation_args(p, n_sims=0)
    p.add_argument("--output", default=_default_output("spectrum.json"))
    p.set_defaults(handler=cmd_spectrum)

    p = sub.add_parser("null", help="シャッフルによる帰無アンサンブル")
    _add_returns_args(p)
    _add_simulation_args(p, n_sims=100)
    p.add_argument("--output", default=_default_output("null.json"))
    p.set_defaults(handler=cmd_null)

    p = sub.add_parser("remove-mode", help="最大固有値モードの除去")
    _add_returns_args(p)
    p.add_argument("--n-modes", type=int, default=1)
    p.add_argument("--output", default=_default_output("residuals.csv"))
    p.set_defaults(handler=cmd_remove_mode)

    p = sub.add_parser("distance", help="相関行列から距離行列")
    p.add_argument("--correlation", required=True)
    p.add_argument("--output", default=_default_output("distance.csv"))
    p.set_defaults(handler=cmd_distance)

    p = sub.add_parser("graph", help="アセットグラフ")
    p.add_argument("--distance", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--noise-returns", default=None, help="閾値をノイズ距離から求める場合のリターン CSV")
    p.add_argument("--method", choices=METHODS, default=CorrelationMethod.SPEARMAN.value)
    _add_simulation_args(p, n_sims=100)
    p.add_argument("--output", default=_default_output("graph"), help="出力ファイル名の接頭辞")
    p.set_defaults(handler=cmd_graph)

    p = sub.add_parser("centrality", help="中心性指標")
    p.add_argument("--graph", required=True, help="アセットグラフ JSON")
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--table", default=None, help="ノードごとの中心性 CSV の出力先")
    p.add_argument("--output", default=_default_output("centrality.json"))
    p.set_defaults(handler=cmd_centrality)

    p = sub.add_parser("embed", help="MDS による2次元埋め込み")
    p.add_argument("--distance", required=True)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=_default_output("embedding.csv"))
    p.set_defaults(handler=cmd_embed)

    defaults = SyntheticSpec()
    p = sub.add_parser("synth", help="合成リードラグ価格パネル")
    p.add_argument("--n-west", type=int, default=defaults.n_west)
    p.add_argument("--n-east", type=int, default=defaults.n_east)
    p.add_argument("--loading", type=float, default=defaults.loading)
    p.add_argument("--lead-lag-loading", type=float, default=defaults.lead_lag_loading)
    p.add_argument("--noise", type=float, default=defaults.noise)
    p.add_argument("--days", type=int, default=defaults.n_days)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--holiday-rate", type=float, default=defaults.holiday_rate)
    p.add_argument("--start-date", default=defaults.start_date)
    p.add_argument("--output", default=_default_output("synthetic_prices.csv"))
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("run", help="パイプライン全体の実行")
    p.add_argument("--config", default=None, help="TOML 設定ファイル")
    p.add_argument("--input", default=None)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--method", choices=METHODS, default=None)
    p.add_argument("--max-lag", type=int, default=None)
    p.add_argument("--prefect", action="store_true", help="Prefect フローとして実行")
    p.set_defaults(handler=cmd_run)
    return parser


def error_line(error: Exception) -> str:
    """標準エラーに出力する1行の JSON"""
    return json.dumps(
        {
            "status": "error",
            "kind": getattr(error, "kind", "validation"),
            "code": getattr(error, "code", type(error).__name__),
            "stage": getattr(error, "stage", None),
            "message": str(error),
        },
        ensure_ascii=False,
    )


def main(argv: list[str] | None = None) -> int:
    """
    CLI のエントリーポイント

    Returns:
        終了コード（0: 成功, 1: 入力エラー, 2: 数値計算の失敗）
    """
    args = build_parser().parse_args(argv)
    if args.log_level:
        setup_logging(args.log_level.upper())

    try:
        result = args.handler(args)
    except LagnetError as e:
        print(error_line(e), file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(error_line(e), file=sys.stderr)
        return 1
    except ValueError as e:
        logger.error(f"入力値を処理できません: {e}")
        print(error_line(e), file=sys.stderr)
        return 1

    print(json.dumps({"status": "ok", "command": args.command, **result}, ensure_ascii=False))
    return 0


if __name__ == "__main__":
    sys.exit(main())
