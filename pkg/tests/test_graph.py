"""Tests for kNN / hybrid graph construction and connected components."""

import numpy as np
import pytest

from wellplan.errors import ParameterError, ValidationError
from wellplan.graph import (
    SpatialGraph,
    connected_components,
    hybrid_graph,
    knn_graph,
    write_edges_csv,
)
from wellplan.ingest import ObservationSet, WellObservation


def brute_force_knn_edges(points, k):
    """Independent O(n^2) oracle with (distance, index) ordering."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    edges = set()
    for i in range(n):
        dists = sorted(
            (float(np.linalg.norm(pts[i] - pts[j])), j) for j in range(n) if j != i
        )
        for _, j in dists[:k]:
            edges.add((min(i, j), max(i, j)))
    return edges


def make_obs(xy, counties, y):
    wells = [
        WellObservation(site=(float(p[0]), float(p[1])), lon=float(p[0]), lat=float(p[1]),
                        county_id=c, y=int(v))
        for p, c, v in zip(xy, counties, y)
    ]
    return ObservationSet(wells, ref_lat=0.0)


class TestKnnGraph:
    def test_collinear_chain(self):
        g = knn_graph(np.array([[0.0, 0], [1, 0], [2, 0]]), k=1)
        assert {tuple(e) for e in g.edges} == {(0, 1), (1, 2)}

    def test_complete_graph_at_k_n_minus_1(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(size=(7, 2))
        g = knn_graph(pts, k=6)
        assert g.n_edges == 7 * 6 // 2

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        for trial in range(5):
            pts = rng.uniform(size=(10, 2))
            g = knn_graph(pts, k=2)
            assert {tuple(e) for e in g.edges} == brute_force_knn_edges(pts, 2)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(size=(12, 2))
        perm = rng.permutation(12)
        g1 = knn_graph(pts, k=3)
        g2 = knn_graph(pts[perm], k=3)
        # map g1 edges through the permutation and compare
        mapped = set()
        where = {orig: new for new, orig in enumerate(perm)}
        for i, j in g1.edges:
            a, b = where[i], where[j]
            mapped.add((min(a, b), max(a, b)))
        assert mapped == {tuple(e) for e in g2.edges}

    def test_parameter_errors(self):
        pts = np.zeros((3, 2))
        pts[1] = (1, 0)
        pts[2] = (2, 0)
        with pytest.raises(ParameterError):
            knn_graph(pts, k=3)
        with pytest.raises(ValidationError):
            knn_graph(np.zeros((3, 2)), k=1)

    def test_callable_metric(self):
        pts = np.array([[0.0, 0], [1, 0], [5, 0]])
        manhattan = lambda a, b: float(np.abs(a - b).sum())
        g = knn_graph(pts, k=1, metric=manhattan)
        assert {tuple(e) for e in g.edges} == {(0, 1), (1, 2)}


class TestEdgeIncidence:
    def test_constant_vector_maps_to_zero(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(size=(15, 2))
        g = knn_graph(pts, k=3)
        d = g.incidence().apply(np.full(15, 3.7))
        np.testing.assert_allclose(d, 0.0, atol=1e-15)

    def test_orientation(self):
        g = SpatialGraph(3, [(0, 1), (1, 2)])
        beta = np.array([5.0, 2.0, 1.0])
        np.testing.assert_allclose(g.incidence().apply(beta), [3.0, 1.0])


class TestHybridGraph:
    def test_single_county_equals_knn(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(size=(20, 2))
        obs = make_obs(pts, ["A"] * 20, rng.integers(0, 2, 20))
        g1 = hybrid_graph(obs, k_within=4, k_between=3, m_pairs=2)
        g2 = knn_graph(pts, k=4)
        assert np.array_equal(g1.edges, g2.edges)

    def test_two_equal_proportion_counties_single_cross_edge(self):
        # proportions 0.1 and 0.1; the cross edge joins the closest pair
        xa = np.column_stack([np.linspace(0, 1, 10), np.zeros(10)])
        xb = np.column_stack([np.linspace(3, 4, 10), np.zeros(10)])
        ya = np.zeros(10, dtype=int)
        ya[0] = 1
        yb = np.zeros(10, dtype=int)
        yb[5] = 1
        obs = make_obs(np.vstack([xa, xb]), ["A"] * 10 + ["B"] * 10, np.concatenate([ya, yb]))
        g = hybrid_graph(obs, k_within=1, k_between=1, m_pairs=1)
        within = knn_graph(xa, 1).n_edges + knn_graph(xb, 1).n_edges
        cross = [(i, j) for i, j in g.edges if (i < 10) != (j < 10)]
        assert len(cross) == 1
        # closest cross-county pair: x=1 (index 9) to x=3 (index 10)
        assert cross[0] == (9, 10)
        assert g.n_edges == within + 1

    def test_connectivity_when_county_graph_connected(self):
        rng = np.random.default_rng(9)
        for trial in range(10):
            n_counties = int(rng.integers(2, 5))
            pts, counties, y = [], [], []
            for c in range(n_counties):
                size = int(rng.integers(3, 7))
                center = rng.uniform(0, 10, 2)
                pts.extend(center + rng.normal(scale=0.3, size=(size, 2)))
                counties.extend([f"C{c}"] * size)
                y.extend(rng.integers(0, 2, size))
            obs = make_obs(np.array(pts), counties, y)
            # k_within large: every within-county graph is complete, so whole-graph
            # connectivity reduces to county-selection connectivity
            g = hybrid_graph(obs, k_within=6, k_between=1, m_pairs=1)
            county_index = {c: k for k, c in enumerate(sorted(set(counties)))}
            cg_edges = set()
            for i, j in g.edges:
                ci, cj = county_index[counties[i]], county_index[counties[j]]
                if ci != cj:
                    cg_edges.add((min(ci, cj), max(ci, cj)))
            county_graph = SpatialGraph(n_counties, cg_edges)
            county_labels = connected_components(county_graph)
            labels = connected_components(g)
            if county_labels.max() == 0:
                assert labels.max() == 0, f"trial {trial}: hybrid graph disconnected"

    def test_zero_k_between_leaves_counties_separate(self):
        pts = np.array([[0.0, 0], [1, 0], [10, 0], [11, 0]])
        obs = make_obs(pts, ["A", "A", "B", "B"], [0, 1, 0, 1])
        g = hybrid_graph(obs, k_within=1, k_between=0, m_pairs=1)
        assert connected_components(g).max() == 1  # two components


def union_find_labels(n, edges):
    """Independent union-find oracle, relabeled by smallest member."""
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    roots = {}
    labels = np.empty(n, dtype=int)
    for v in range(n):
        r = find(v)
        if r not in roots:
            roots[r] = len(roots)
        labels[v] = roots[r]
    return labels


class TestConnectedComponents:
    def test_all_active_connected(self):
        g = knn_graph(np.random.default_rng(0).uniform(size=(12, 2)), k=3)
        labels = connected_components(g, np.ones(g.n_edges, dtype=bool))
        if labels.max() == 0:
            assert set(labels) == {0}

    def test_all_inactive_singletons(self):
        g = SpatialGraph(6, [(0, 1), (2, 3), (4, 5)])
        labels = connected_components(g, np.zeros(3, dtype=bool))
        np.testing.assert_array_equal(labels, np.arange(6))

    def test_random_masks_match_union_find(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(size=(12, 2))
        g = knn_graph(pts, k=3)
        for _ in range(25):
            mask = rng.random(g.n_edges) < 0.5
            got = connected_components(g, mask)
            active = [tuple(e) for e, keep in zip(g.edges, mask) if keep]
            want = union_find_labels(12, active)
            np.testing.assert_array_equal(got, want)

    def test_labels_ordered_by_smallest_member(self):
        g = SpatialGraph(5, [(0, 4), (1, 2)])
        labels = connected_components(g)
        # component of vertex 0 gets label 0, of vertex 1 label 1, vertex 3 label 2
        np.testing.assert_array_equal(labels, [0, 1, 1, 2, 0])

    def test_partition_properties(self):
        rng = np.random.default_rng(13)
        g = knn_graph(rng.uniform(size=(30, 2)), k=2)
        mask = rng.random(g.n_edges) < 0.4
        labels = connected_components(g, mask)
        k = labels.max() + 1
        assert set(labels) == set(range(k))  # labels partition V


def test_edge_csv_export(tmp_path):
    g = SpatialGraph(4, [(0, 1), (2, 3)])
    path = tmp_path / "edges.csv"
    write_edges_csv(g, path)
    assert path.read_text().splitlines() == ["i,j", "0,1", "2,3"]
