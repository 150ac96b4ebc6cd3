"""Spatial graphs over well observations.

Two constructions: plain symmetrized kNN, and a hybrid graph that combines
per-county kNN (Euclidean) with county-level kNN on sample proportions,
realized as the closest cross-county well pairs.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy import sparse

from .errors import ParameterError, ValidationError


class SpatialGraph:
    """Undirected simple graph over vertex indices 0..n-1.

    Edges are stored as an (m, 2) int array with i < j, sorted
    lexicographically; construction deduplicates and validates.
    """

    def __init__(self, n_vertices, edges):
        n = int(n_vertices)
        if n < 1:
            raise ValidationError("graph needs at least one vertex")
        e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if len(e):
            lo = e.min(axis=1)
            hi = e.max(axis=1)
            if np.any(lo == hi):
                raise ValidationError("self-loop in edge list")
            if lo.min() < 0 or hi.max() >= n:
                raise ValidationError("edge index out of range")
            e = np.unique(np.column_stack([lo, hi]), axis=0)
        else:
            e = np.zeros((0, 2), dtype=np.int64)
        self.n_vertices = n
        self.edges = e
        self._incidence = None

    @property
    def n_edges(self):
        return len(self.edges)

    def incidence(self):
        if self._incidence is None:
            self._incidence = EdgeIncidence(self)
        return self._incidence

    def adjacency_lists(self, active_mask=None):
        adj = [[] for _ in range(self.n_vertices)]
        for e, (i, j) in enumerate(self.edges):
            if active_mask is None or active_mask[e]:
                adj[i].append(j)
                adj[j].append(i)
        return adj


class EdgeIncidence:
    """Oriented edge-difference operator D with rows beta_i - beta_j (i < j)."""

    def __init__(self, graph):
        m, n = graph.n_edges, graph.n_vertices
        if m:
            rows = np.repeat(np.arange(m), 2)
            cols = graph.edges.ravel()
            vals = np.tile([1.0, -1.0], m)
            self.matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(m, n))
        else:
            self.matrix = sparse.csr_matrix((0, n))

    def apply(self, beta):
        return self.matrix @ np.asarray(beta, dtype=float)


def _knn_edges(points, k, index_of=None):
    """Union-symmetrized kNN edge set; ties broken by lower index.

    ``index_of`` maps local row positions to global vertex ids.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    edges = set()
    # chunked O(n^2) scan keeps tie-breaking exact and memory bounded
    chunk = max(1, min(n, 2 ** 22 // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = np.linalg.norm(pts[start:stop, None, :] - pts[None, :, :], axis=2)
        for r in range(stop - start):
            i = start + r
            row = d[r].copy()
            row[i] = np.inf
            order = np.lexsort((np.arange(n), row))
            for j in order[:k]:
                a, b = (i, int(j)) if i < j else (int(j), i)
                if index_of is not None:
                    a, b = index_of[a], index_of[b]
                    a, b = (a, b) if a < b else (b, a)
                edges.add((a, b))
    return edges


def knn_graph(points, k, metric=None):
    """Symmetrized k-nearest-neighbor graph.

    An edge (i, j) is present iff j is among the k nearest neighbors of i or
    vice versa. Distance ties are broken by lower index. ``metric`` defaults
    to Euclidean; a callable metric(a, b) -> float switches to a slow path.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if k < 1 or int(k) != k:
        raise ParameterError("k must be a positive integer")
    k = int(k)
    if k >= n:
        raise ParameterError(f"k={k} must be smaller than the number of points n={n}")
    if len(np.unique(pts, axis=0)) != n:
        raise ValidationError("points must be distinct")
    if metric is None:
        edges = _knn_edges(pts, k)
    else:
        edges = set()
        for i in range(n):
            d = np.array([metric(pts[i], pts[j]) if j != i else np.inf for j in range(n)])
            order = np.lexsort((np.arange(n), d))
            for j in order[:k]:
                edges.add((min(i, int(j)), max(i, int(j))))
    return SpatialGraph(n, edges)


def hybrid_graph(obs, k_within=5, k_between=3, m_pairs=1):
    """County-aware graph over an ObservationSet.

    Union of (a) per-county Euclidean kNN with ``k_within`` (capped at the
    county size minus one) and (b) county-level kNN where the distance
    between counties is the absolute difference of their exceedance
    proportions; each selected county pair contributes the ``m_pairs``
    spatially closest cross-county well pairs.
    """
    if k_within < 1 or k_between < 0 or m_pairs < 1:
        raise ParameterError("k_within, m_pairs must be >= 1 and k_between >= 0")
    xy = obs.xy
    y = np.asarray(obs.y, dtype=float)
    counties = sorted(set(obs.counties))
    members = {c: np.flatnonzero([cc == c for cc in obs.counties]) for c in counties}

    edges = set()
    for c in counties:
        idx = members[c]
        if len(idx) < 2:
            continue
        kw = min(k_within, len(idx) - 1)
        edges |= _knn_edges(xy[idx], kw, index_of=idx)

    n_c = len(counties)
    if n_c >= 2 and k_between >= 1:
        props = np.array([y[members[c]].mean() for c in counties])
        kb = min(k_between, n_c - 1)
        pairs = set()
        for a in range(n_c):
            d = np.abs(props - props[a])
            d[a] = np.inf
            order = np.lexsort((np.arange(n_c), d))
            for b in order[:kb]:
                pairs.add((min(a, int(b)), max(a, int(b))))
        for a, b in sorted(pairs):
            ia, ib = members[counties[a]], members[counties[b]]
            d = np.linalg.norm(xy[ia][:, None, :] - xy[ib][None, :, :], axis=2)
            flat = np.lexsort((np.tile(ib, len(ia)), np.repeat(ia, len(ib)), d.ravel()))
            take = min(m_pairs, d.size)
            for f in flat[:take]:
                i = ia[f // len(ib)]
                j = ib[f % len(ib)]
                edges.add((min(int(i), int(j)), max(int(i), int(j))))
    return SpatialGraph(len(obs), edges)


def connected_components(graph, active_mask=None):
    """Per-vertex component labels over the edges active in ``active_mask``.

    Labels are 0..C-1 ordered by each component's smallest vertex index.
    """
    if active_mask is not None:
        active_mask = np.asarray(active_mask, dtype=bool)
        if len(active_mask) != graph.n_edges:
            raise ValidationError("active_mask length must equal the edge count")
    n = graph.n_vertices
    adj = graph.adjacency_lists(active_mask)
    labels = np.full(n, -1, dtype=np.int64)
    label = 0
    for root in range(n):
        if labels[root] >= 0:
            continue
        stack = [root]
        labels[root] = label
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if labels[w] < 0:
                    labels[w] = label
                    stack.append(w)
        label += 1
    return labels


def write_edges_csv(graph, path):
    """Export the edge list as 0-based ``i,j`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["i", "j"])
        for i, j in graph.edges:
            writer.writerow([int(i), int(j)])
