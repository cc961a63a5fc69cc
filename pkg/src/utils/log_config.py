"""
ログ設定モジュール

このモジュールでは、アプリケーション全体で使用するロギング設定を提供します。
環境変数 LOG_DIR が設定されている場合は、当日の日付を含むファイル名で
ログファイルにも保存されます。
"""
import logging
from datetime import datetime
from pathlib import Path

from env_settings import LOG_DIR, LOG_LEVEL

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level=LOG_LEVEL, log_dir: str | None = LOG_DIR):
    """
    アプリケーション全体のログ設定をセットアップします

    Args:
        level: ログレベル（デフォルトは環境変数 LOG_LEVEL）
        log_dir: ログファイルの保存先。None の場合はコンソール出力のみ

    ログはコンソール（標準エラー出力）と、指定があれば日付ベースのファイルに出力されます。
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # 既存のハンドラをクリア
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    # コンソール出力用ハンドラ
    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root_logger.addHandler(console_handler)

    if log_dir:
        # ログディレクトリが存在しない場合は作成
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        log_file_path = Path(log_dir) / f"{datetime.now().strftime('%Y-%m-%d')}.log"

        file_handler = logging.FileHandler(log_file_path, encoding="utf-8")
        file_handler.setLevel(level)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root_logger.addHandler(file_handler)
        root_logger.debug(f"ログ設定を完了しました。ログファイル: {log_file_path}")

    return root_logger


# モジュールのインポート時に自動的にログ設定を行う
logger = setup_logging()
