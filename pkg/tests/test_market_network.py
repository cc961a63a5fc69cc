import itertools

import networkx as nx
import numpy as np
import pytest
from scipy.spatial import procrustes
from scipy.spatial.distance import pdist, squareform

from src.tasks.correlation_core import CorrelationMethod, pearson_matrix
from src.tasks.market_network import (
    AssetGraph,
    DistanceMatrix,
    Embedding,
    _principal_eigenvector,
    asset_graph,
    centralities,
    classical_scaling,
    distance_matrix,
    mds_embed,
    noise_distance_threshold,
    normalized_stress,
    shuffled_distance_minima,
)
from src.utils.exceptions import NumericalError, ValidationError


def _distances(values, labels=None):
    values = np.asarray(values, dtype=float)
    if labels is None:
        labels = tuple(f"S{i:02d}" for i in range(values.shape[0]))
    return DistanceMatrix(tuple(labels), values)


def _graph(edges):
    graph = nx.Graph()
    graph.add_edges_from(edges, distance=0.5)
    return AssetGraph(1.0, graph)


# ─── distance_matrix ─────────────────────────────────────────────────────────
def test_distance_endpoints(make_matrix):
    dist = distance_matrix(make_matrix([[1.0, 0.0, -1.0], [0.0, 1.0, 1.0], [-1.0, 1.0, 1.0]]))
    assert dist.values[0, 1] == pytest.approx(np.sqrt(2), abs=1e-12)
    assert dist.values[0, 2] == pytest.approx(2.0, abs=1e-12)
    assert dist.values[1, 2] == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.diag(dist.values) == 0.0)
    np.testing.assert_array_equal(dist.values, dist.values.T)


def test_distance_decreases_with_correlation(make_matrix):
    correlations = np.linspace(-1.0, 1.0, 41)
    distances = [distance_matrix(make_matrix([[1.0, c], [c, 1.0]])).values[0, 1] for c in correlations]
    assert np.all(np.diff(distances) < 0)


def test_out_of_range_correlation_rejected(make_matrix):
    with pytest.raises(ValidationError) as e:
        distance_matrix(make_matrix([[1.0, 1.5], [1.5, 1.0]]))
    assert e.value.code == "correlation_out_of_range"


# ─── asset_graph ─────────────────────────────────────────────────────────────
@pytest.fixture
def three_assets():
    return _distances([[0.0, 0.5, 1.0], [0.5, 0.0, 1.5], [1.0, 1.5, 0.0]], labels=("A", "B", "C"))


def test_zero_threshold_gives_empty_graph(three_assets):
    graph = asset_graph(three_assets, 0.0)
    assert graph.nodes == [] and graph.edges == []


def test_large_threshold_gives_complete_graph(three_assets):
    graph = asset_graph(three_assets, 2.5)
    assert graph.edges == [("A", "B", 0.5), ("A", "C", 1.0), ("B", "C", 1.5)]


def test_threshold_is_strict(three_assets):
    graph = asset_graph(three_assets, 1.0)
    assert graph.edges == [("A", "B", 0.5)]
    assert graph.nodes == ["A", "B"]


def test_negative_threshold_rejected(three_assets):
    with pytest.raises(ValidationError) as e:
        asset_graph(three_assets, -0.1)
    assert e.value.code == "invalid_threshold"


def test_graphs_nest_as_threshold_grows(rng):
    for _ in range(1000):
        n = int(rng.integers(3, 9))
        upper = np.triu(rng.uniform(0.0, 2.0, (n, n)), k=1)
        dist = _distances(upper + upper.T)
        low, high = sorted(rng.uniform(0.0, 2.0, 2))
        low_edges = {(u, v) for u, v, _ in asset_graph(dist, low).edges}
        high_edges = {(u, v) for u, v, _ in asset_graph(dist, high).edges}
        assert low_edges <= high_edges


def test_graph_dict_round_trip(three_assets):
    graph = asset_graph(three_assets, 1.2)
    restored = AssetGraph.from_dict(graph.to_dict())
    assert restored.threshold == 1.2
    assert restored.edges == graph.edges


# ─── centralities ────────────────────────────────────────────────────────────
def test_star_betweenness():
    report = centralities(_graph([("HUB", leaf) for leaf in "ABCD"]))
    assert report.betweenness["HUB"] == pytest.approx(6.0)
    assert all(report.betweenness[leaf] == 0.0 for leaf in "ABCD")
    assert report.degree["HUB"] == 4
    assert report.rankings["degree"][0] == "HUB"


def test_complete_graph_is_uniform():
    report = centralities(_graph(itertools.combinations("ABCD", 2)))
    assert set(report.degree.values()) == {3}
    assert set(report.betweenness.values()) == {0.0}
    np.testing.assert_allclose(list(report.eigenvector.values()), 0.5, atol=1e-10)


def test_path_eigenvector():
    report = centralities(_graph([("A", "B"), ("B", "C")]))
    assert report.eigenvector["A"] == pytest.approx(0.5, abs=1e-9)
    assert report.eigenvector["B"] == pytest.approx(1 / np.sqrt(2), abs=1e-9)
    assert report.eigenvector["C"] == pytest.approx(0.5, abs=1e-9)
    assert report.rankings["eigenvector"] == ["B", "A", "C"]


def test_eigenvector_satisfies_eigen_equation():
    checked = 0
    for seed in range(20):
        g = nx.gnp_random_graph(12, 0.4, seed=seed)
        if not nx.is_connected(g):
            continue
        g = nx.relabel_nodes(g, {i: f"N{i:02d}" for i in g.nodes})
        report = centralities(AssetGraph(1.0, g))
        nodes = sorted(g.nodes)
        adjacency = nx.to_numpy_array(g, nodelist=nodes, weight=None)
        vector = np.array([report.eigenvector[node] for node in nodes])
        eigenvalue = vector @ adjacency @ vector
        np.testing.assert_allclose(adjacency @ vector, eigenvalue * vector, atol=1e-8)
        assert np.linalg.norm(vector) == pytest.approx(1.0, abs=1e-10)
        assert eigenvalue == pytest.approx(np.linalg.eigvalsh(adjacency)[-1], abs=1e-8)
        checked += 1
    assert checked > 10


def test_eigenvector_tie_picks_smallest_label_component():
    report = centralities(_graph([("C", "D"), ("A", "B")]))
    assert report.eigenvector["A"] == pytest.approx(1 / np.sqrt(2), abs=1e-12)
    assert report.eigenvector["C"] == 0.0 and report.eigenvector["D"] == 0.0


def test_power_iteration_failure_is_numerical_error():
    with pytest.raises(NumericalError) as e:
        _principal_eigenvector(nx.path_graph(6), max_iter=1)
    assert e.value.code == "power_iteration_not_converged"
    assert e.value.exit_code == 2


def test_empty_graph_rejected():
    with pytest.raises(ValidationError) as e:
        centralities(AssetGraph(0.0, nx.Graph()))
    assert e.value.code == "empty_graph"


def test_tree_leaves_have_zero_betweenness(rng):
    for _ in range(20):
        n = int(rng.integers(3, 15))
        edges = [(f"N{i:02d}", f"N{int(rng.integers(0, i)):02d}") for i in range(1, n)]
        report = centralities(_graph(edges))
        for node, degree in report.degree.items():
            if degree == 1:
                assert report.betweenness[node] == 0.0


def _brute_force_betweenness(g: nx.Graph) -> dict:
    scores = dict.fromkeys(g.nodes, 0.0)
    for s, t in itertools.combinations(g.nodes, 2):
        if not nx.has_path(g, s, t):
            continue
        paths = list(nx.all_shortest_paths(g, s, t))
        for path in paths:
            for node in path[1:-1]:
                scores[node] += 1.0 / len(paths)
    return scores


def test_betweenness_matches_path_enumeration(rng):
    checked = 0
    for seed in range(200):
        n = int(rng.integers(2, 8))
        g = nx.gnp_random_graph(n, 0.5, seed=seed)
        g = nx.relabel_nodes(g, {i: f"N{i}" for i in g.nodes})
        g.remove_nodes_from([node for node, degree in dict(g.degree()).items() if degree == 0])
        if g.number_of_edges() == 0:
            continue
        report = centralities(AssetGraph(1.0, g))
        expected = _brute_force_betweenness(g)
        for node in g.nodes:
            assert report.betweenness[node] == pytest.approx(expected[node], abs=1e-9)
        checked += 1
    assert checked > 100


# ─── MDS ─────────────────────────────────────────────────────────────────────
def test_triangle_embeds_exactly():
    points = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]])
    embedding = mds_embed(_distances(squareform(pdist(points))), m=2)
    assert embedding.stress < 1e-9
    np.testing.assert_allclose(pdist(embedding.coordinates), [3.0, 4.0, 5.0], atol=1e-8)


@pytest.mark.parametrize("n_points", [20, 50])
def test_planar_points_recovered(rng, n_points):
    points = rng.uniform(-1.0, 1.0, (n_points, 2))
    embedding = mds_embed(_distances(squareform(pdist(points))), m=2, seed=1)
    _, _, disparity = procrustes(points, embedding.coordinates)
    assert disparity < 1e-6
    assert embedding.stress < 1e-8


def test_equidistant_points_cannot_embed_in_plane():
    values = np.ones((4, 4)) - np.eye(4)
    embedding = mds_embed(_distances(values), m=2)
    assert embedding.stress > 0.01


def test_stress_history_monotone(rng):
    for _ in range(100):
        n = int(rng.integers(4, 12))
        dist = _distances(squareform(pdist(rng.standard_normal((n, 5)))))
        embedding = mds_embed(dist, m=2)
        assert np.all(np.diff(embedding.stress_history) <= 1e-9)
        assert embedding.stress == embedding.stress_history[-1]
        assert embedding.iterations <= 500


def test_embedding_is_centered_and_read_only(rng):
    dist = _distances(squareform(pdist(rng.standard_normal((8, 4)))))
    embedding = mds_embed(dist, m=3)
    np.testing.assert_allclose(embedding.coordinates.mean(axis=0), 0.0, atol=1e-12)
    assert not embedding.coordinates.flags.writeable
    assert list(embedding.to_frame().columns) == ["label", "x", "y", "z"]


def test_embedding_dimension_errors(three_assets):
    with pytest.raises(ValidationError) as e:
        mds_embed(three_assets, m=0)
    assert e.value.code == "invalid_dimension"
    with pytest.raises(ValidationError) as e:
        mds_embed(three_assets, m=3)
    assert e.value.code == "dimension_too_large"


def test_mds_reproducible(rng):
    dist = _distances(squareform(pdist(rng.standard_normal((10, 3)))))
    a, b = mds_embed(dist, m=2, seed=4), mds_embed(dist, m=2, seed=4)
    np.testing.assert_array_equal(a.coordinates, b.coordinates)
    assert a.stress_history == b.stress_history


def test_classical_scaling_and_stress(rng):
    points = rng.standard_normal((6, 2))
    distances = squareform(pdist(points))
    coordinates = classical_scaling(distances, 2)
    assert normalized_stress(distances, coordinates) < 1e-10
    assert normalized_stress(distances, np.zeros((6, 2))) == pytest.approx(1.0)


def test_embedding_frame_beyond_three_axes():
    embedding = Embedding(("A", "B"), np.zeros((2, 4)), 0.0, (0.0,))
    assert list(embedding.to_frame().columns) == ["label", "x", "y", "z", "x4"]
    assert embedding.iterations == 0


# ─── ノイズ距離閾値 ──────────────────────────────────────────────────────────
def test_noise_threshold_reproducible(make_panel, rng):
    panel = make_panel(rng.standard_normal((200, 6)))
    a = shuffled_distance_minima(panel, 10, seed=2)
    b = shuffled_distance_minima(panel, 10, seed=2, n_jobs=4)
    np.testing.assert_array_equal(a, b)
    assert noise_distance_threshold(panel, 10, seed=2) == a.min()


def test_identical_columns_drift_to_sqrt_two(make_panel, rng):
    x = rng.standard_normal(1000)
    panel = make_panel(np.column_stack([x, x]))
    assert distance_matrix(pearson_matrix(panel)).values[0, 1] == pytest.approx(0.0, abs=1e-7)
    threshold = noise_distance_threshold(panel, 20, seed=0, method=CorrelationMethod.PEARSON)
    assert abs(threshold - np.sqrt(2)) < 0.15


def test_noise_threshold_errors(make_panel, rng):
    with pytest.raises(ValidationError) as e:
        noise_distance_threshold(make_panel(rng.standard_normal((50, 1))), 5, seed=0)
    assert e.value.code == "too_few_series"
    with pytest.raises(ValidationError) as e:
        noise_distance_threshold(make_panel(rng.standard_normal((50, 3))), 0, seed=0)
    assert e.value.code == "invalid_n_sims"


@pytest.mark.slow
def test_noise_threshold_for_gaussian_panel(make_panel):
    panel = make_panel(np.random.default_rng(6).standard_normal((2500, 79)))
    threshold = noise_distance_threshold(panel, 1000, seed=6)
    assert 1.30 <= threshold <= 1.42
