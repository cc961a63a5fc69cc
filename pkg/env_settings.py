"""
環境変数設定ファイル
"""
import os
from pathlib import Path

# プロジェクトのベースディレクトリ
BASE_DIR = Path(__file__).resolve().parent

# 成果物の出力先（CLIの既定値）
OUTPUT_PATH = os.environ.get("OUTPUT_PATH", os.path.join(BASE_DIR, "output"))

# 実行設定
LOG_LEVEL = os.environ.get("LOG_LEVEL", "INFO")

# 未設定ならファイルへのログ出力は行わない
LOG_DIR = os.environ.get("LOG_DIR")
