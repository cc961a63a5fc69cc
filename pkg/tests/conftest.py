"""テスト共通のフィクスチャ"""
import numpy as np
import pandas as pd
import pytest

from src.tasks.correlation_core import CorrelationMatrix, CorrelationMethod
from src.tasks.panel_ingest import Frequency, ReturnPanel


def _make_panel(values, labels=None, start="2003-01-02", frequency=Frequency.DAILY) -> ReturnPanel:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if labels is None:
        labels = tuple(f"S{i:02d}" for i in range(values.shape[1]))
    dates = pd.bdate_range(start, periods=values.shape[0])
    return ReturnPanel(dates, tuple(labels), values, frequency)


def _make_matrix(values, labels=None, method=CorrelationMethod.PEARSON, sample_size=100) -> CorrelationMatrix:
    values = np.asarray(values, dtype=float)
    if labels is None:
        labels = tuple(f"S{i:02d}" for i in range(values.shape[0]))
    return CorrelationMatrix(tuple(labels), values, method, sample_size)


@pytest.fixture
def make_panel():
    """配列から日次 ReturnPanel を作る関数"""
    return _make_panel


@pytest.fixture
def make_matrix():
    """配列から CorrelationMatrix を作る関数"""
    return _make_matrix


@pytest.fixture
def rng():
    return np.random.default_rng(20030102)


@pytest.fixture
def gaussian_panel(rng):
    """i.i.d. 標準正規のパネル（N=79, T=1250）"""
    return _make_panel(rng.standard_normal((1250, 79)))


@pytest.fixture
def one_factor_panel(rng):
    """共通ファクター負荷 0.5 の1ファクターモデル（N=20, T=1000）"""
    factor = rng.standard_normal((1000, 1))
    return _make_panel(0.5 * factor + rng.standard_normal((1000, 20)))


@pytest.fixture
def synthetic_config_data(tmp_path):
    """小さな合成パネルでパイプラインを実行する設定"""
    return {
        "input": {
            "synthetic": {"n_west": 10, "n_east": 10, "n_days": 1250, "seed": 3},
        },
        "splits": [{"name": "full"}],
        "spectrum": {"n_sims": 5, "bins": 20},
        "network": {"noise_sims": 5, "thresholds": [1.1]},
        "seed": {"master": 11},
        "output": {"directory": str(tmp_path / "out")},
    }
