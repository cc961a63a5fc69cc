"""
乱数シード管理モジュール

マスターシードからステージ名ごとに独立した乱数ストリームを導出します。
シミュレーション番号ごとの子ストリームは SeedSequence.spawn で生成されるため、
並列実行と逐次実行で同じ結果になります。
"""
import zlib

import numpy as np


def stage_seed_sequence(master_seed: int, stage: str) -> np.random.SeedSequence:
    """
    ステージ名に対応するシード系列を返す

    Args:
        master_seed: マスターシード
        stage: ステージ名（例: "null", "noise_distance"）

    Returns:
        ステージ専用の SeedSequence
    """
    # hash() はプロセスごとに変わるため crc32 を使う
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(zlib.crc32(stage.encode("utf-8")),))


def stage_seed(master_seed: int, stage: str) -> int:
    """ステージ用の整数シード（マニフェスト記録用）"""
    return int(stage_seed_sequence(master_seed, stage).generate_state(1, dtype=np.uint32)[0])


def simulation_generators(seed: int, n_sims: int) -> list[np.random.Generator]:
    """
    シミュレーションごとの乱数生成器を作成

    i 番目の生成器は (seed, i) のみで決まります。
    """
    children = np.random.SeedSequence(seed).spawn(n_sims)
    return [np.random.default_rng(child) for child in children]
