"""
例外定義モジュール

パイプライン全体で使用する例外クラスを定義します。
各例外は機械可読なエラーコードを持ち、CLIの終了コードに対応します。

- ValidationError: 入力・前提条件の違反（終了コード 1）
- NumericalError: 数値計算の失敗・非収束（終了コード 2）
- StageError: パイプラインのステージ名を付けて原因例外を包む
"""


class LagnetError(Exception):
    """全例外の基底クラス"""

    exit_code = 1
    kind = "error"

    def __init__(self, message: str, code: str = "error"):
        super().__init__(message)
        self.message = message
        self.code = code


class ValidationError(LagnetError):
    """入力データや前提条件の違反"""

    exit_code = 1
    kind = "validation"


class NumericalError(LagnetError):
    """非収束などの数値計算上の失敗"""

    exit_code = 2
    kind = "numerical"


class StageError(LagnetError):
    """
    パイプラインのステージで発生した例外

    Attributes:
        stage: 失敗したステージ名
        cause: 原因となった例外
    """

    def __init__(self, stage: str, cause: Exception):
        code = getattr(cause, "code", type(cause).__name__)
        super().__init__(f"ステージ '{stage}' で失敗しました: {cause}", code)
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        self.kind = getattr(cause, "kind", "validation")
