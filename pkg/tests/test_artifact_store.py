import hashlib
import json

import networkx as nx
import numpy as np
import pytest

from src.tasks.artifact_store import (
    MANIFEST_NAME,
    ArtifactStore,
    centrality_frame,
    read_asset_graph,
    read_correlation_matrix,
    read_distance_matrix,
    read_return_panel,
)
from src.tasks.correlation_core import CorrelationMethod, pearson_matrix
from src.tasks.market_network import AssetGraph, asset_graph, centralities, distance_matrix
from src.utils.exceptions import ValidationError


@pytest.fixture
def store(tmp_path):
    return ArtifactStore(tmp_path / "artifacts")


def test_written_file_hash_recorded(store):
    path = store.write_json("a/info.json", {"name": "ネットワーク", "value": np.float64(0.5)}, "info", {"k": 1})
    entry = store.entries["a/info.json"]
    data = path.read_bytes()
    assert entry["sha256"] == hashlib.sha256(data).hexdigest()
    assert entry["bytes"] == len(data)
    assert entry["parameters"] == {"k": 1}
    assert json.loads(data) == {"name": "ネットワーク", "value": 0.5}


def test_manifest_lists_artifacts_in_path_order(store):
    store.write_json("b.json", {}, "x")
    store.write_json("a.json", {}, "x")
    path = store.write_manifest({"max_lag": 1}, {"null:full:plain": 7, "embed:full": 3})
    manifest = json.loads(path.read_text(encoding="utf-8"))
    assert path.name == MANIFEST_NAME
    assert manifest["status"] == "ok"
    assert [a["path"] for a in manifest["artifacts"]] == ["a.json", "b.json"]
    assert list(manifest["seeds"]) == ["embed:full", "null:full:plain"]


def test_return_panel_round_trip(store, make_panel, rng):
    panel = make_panel(rng.standard_normal((30, 3)) * 1e-3)
    path = store.write_returns("returns.csv", panel)
    restored = read_return_panel(path)
    assert restored.labels == panel.labels
    np.testing.assert_array_equal(restored.returns, panel.returns)
    np.testing.assert_array_equal(restored.dates, panel.dates)


def test_matrix_round_trip_is_exact(store, make_panel, rng):
    matrix = pearson_matrix(make_panel(rng.standard_normal((50, 4))))
    path = store.write_matrix("corr.csv", matrix.labels, matrix.values, "correlation")
    assert path.read_text().splitlines()[0] == "label,S00,S01,S02,S03"

    restored = read_correlation_matrix(path, CorrelationMethod.PEARSON, 50)
    np.testing.assert_array_equal(restored.values, matrix.values)

    dist = distance_matrix(matrix)
    restored_dist = read_distance_matrix(store.write_matrix("dist.csv", dist.labels, dist.values, "distance"))
    np.testing.assert_array_equal(restored_dist.values, dist.values)


def test_graph_written_in_two_formats(store):
    graph = nx.Graph()
    graph.add_edge("FTSE", "DAX", distance=0.4)
    graph.add_edge("DAX", "CAC", distance=0.3)
    edges_path, json_path = store.write_graph("graphs/T0.5000", AssetGraph(0.5, graph), {"threshold": 0.5})
    assert edges_path.read_text().splitlines() == [
        "source,target,distance",
        "CAC,DAX,0.29999999999999999",
        "DAX,FTSE,0.40000000000000002",
    ]

    restored = read_asset_graph(json_path)
    assert restored.threshold == 0.5
    assert restored.edges == [("CAC", "DAX", 0.3), ("DAX", "FTSE", 0.4)]


def test_centrality_frame_sorted_by_label(make_matrix):
    dist = distance_matrix(make_matrix([[1.0, 0.9, 0.8], [0.9, 1.0, 0.0], [0.8, 0.0, 1.0]], labels=("C", "A", "B")))
    frame = centrality_frame(centralities(asset_graph(dist, 1.0)))
    assert frame["label"].tolist() == ["A", "B", "C"]
    assert frame.set_index("label").loc["C", "degree"] == 2


def test_missing_inputs_rejected(tmp_path):
    with pytest.raises(ValidationError) as e:
        read_asset_graph(tmp_path / "none.json")
    assert e.value.code == "file_not_found"
    with pytest.raises(ValidationError) as e:
        read_distance_matrix(tmp_path / "none.csv")
    assert e.value.code == "file_not_found"


def test_non_square_matrix_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,A,B\nA,1,0\nC,0,1\n")
    with pytest.raises(ValidationError) as e:
        read_correlation_matrix(path)
    assert e.value.code == "shape_mismatch"
