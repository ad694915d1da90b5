"""Undirected attributed graphs, normalized operators and exhaustive matching."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import IndexOutOfRange, IsolatedNode, LengthMismatch, TooLarge

MAX_MATCH_NODES = 10


@dataclass(frozen=True)
class Graph:
    """Symmetric sparse adjacency ``A`` plus dense node features ``X``.

    The adjacency is kept in CSR form with both directions of every edge
    stored.  Weights default to one; a self-loop is stored once on the
    diagonal.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    features: np.ndarray = field(repr=False)
    allows_self_loops: bool = False

    @classmethod
    def from_edges(cls, num_nodes, edges, features=None, weights=None,
                   allows_self_loops=False):
        """Build a graph from undirected pairs.

        Pairs may be listed in either or both directions; duplicates are
        merged (the first weight wins).  Self-loops are dropped unless
        ``allows_self_loops`` is set.
        """
        n = int(num_nodes)
        if n <= 0:
            raise ValueError("num_nodes must be positive")
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        w = (np.ones(len(e)) if weights is None
             else np.asarray(weights, dtype=np.float64).reshape(-1))
        if len(w) != len(e):
            raise LengthMismatch(f"{len(w)} weights for {len(e)} edges")
        if e.size and (e.min() < 0 or e.max() >= n):
            raise IndexOutOfRange(f"edge endpoint outside [0, {n})")
        lo = np.minimum(e[:, 0], e[:, 1])
        hi = np.maximum(e[:, 0], e[:, 1])
        if not allows_self_loops:
            keep = lo != hi
            lo, hi, w = lo[keep], hi[keep], w[keep]
        key = lo * n + hi
        _, first = np.unique(key, return_index=True)
        lo, hi, w = lo[first], hi[first], w[first]
        loop = lo == hi
        rows = np.concatenate([lo, hi[~loop]])
        cols = np.concatenate([hi, lo[~loop]])
        vals = np.concatenate([w, w[~loop]])
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        mat.sort_indices()
        if features is None:
            x = np.zeros((n, 0))
        else:
            x = np.asarray(features, dtype=np.float64)
            if x.ndim == 1:
                x = x[:, None]
            if x.shape[0] != n:
                raise LengthMismatch(f"{x.shape[0]} feature rows for {n} nodes")
        return cls(n, mat.indptr.astype(np.int64), mat.indices.astype(np.int64),
                   mat.data.astype(np.float64), x, bool(allows_self_loops))

    @classmethod
    def from_dense(cls, adjacency, features=None, allows_self_loops=None):
        a = np.asarray(adjacency, dtype=np.float64)
        if not np.allclose(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if allows_self_loops is None:
            allows_self_loops = bool(np.any(np.diag(a) != 0))
        r, c = np.nonzero(np.triu(a))
        return cls.from_edges(a.shape[0], np.stack([r, c], 1), features,
                              a[r, c], allows_self_loops)

    @property
    def num_features(self):
        return self.features.shape[1]

    @property
    def num_edges(self):
        """Number of undirected edges, self-loops included."""
        return len(self.edge_array())

    def adjacency(self):
        return sp.csr_matrix((self.weights, self.indices, self.indptr),
                             shape=(self.num_nodes, self.num_nodes))

    def dense_adjacency(self):
        return self.adjacency().toarray()

    def edge_array(self):
        """Undirected edges as an (E, 2) array with ``u <= v``, row-major order."""
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        keep = rows <= self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def edge_weights(self):
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        return self.weights[rows <= self.indices]

    def directed_edges(self):
        """(src, dst, weight) for every stored CSR entry, in CSR order."""
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        return rows, self.indices.copy(), self.weights.copy()

    def degree_info(self):
        return degree_info(self)

    def with_features(self, features):
        return Graph.from_edges(self.num_nodes, self.edge_array(), features,
                                self.edge_weights(), self.allows_self_loops)

    def with_self_loops(self, weight=1.0):
        """Same graph with a self-loop of ``weight`` on every node (existing loops kept)."""
        e = self.edge_array()
        has_loop = np.zeros(self.num_nodes, dtype=bool)
        has_loop[e[e[:, 0] == e[:, 1], 0]] = True
        nodes = np.flatnonzero(~has_loop)
        loops = np.stack([nodes, nodes], 1)
        return Graph.from_edges(
            self.num_nodes, np.concatenate([e, loops]), self.features,
            np.concatenate([self.edge_weights(), np.full(len(nodes), weight)]),
            allows_self_loops=True)

    def without_edges(self, edges):
        """Drop the given undirected pairs (either orientation)."""
        drop = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        e = self.edge_array()
        n = self.num_nodes
        key = e[:, 0] * n + e[:, 1]
        dkey = np.minimum(drop[:, 0], drop[:, 1]) * n + np.maximum(drop[:, 0], drop[:, 1])
        keep = ~np.isin(key, dkey)
        return Graph.from_edges(n, e[keep], self.features, self.edge_weights()[keep],
                                self.allows_self_loops)

    def with_edges(self, edges):
        add = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        return Graph.from_edges(
            self.num_nodes, np.concatenate([self.edge_array(), add]), self.features,
            np.concatenate([self.edge_weights(), np.ones(len(add))]),
            self.allows_self_loops)


@dataclass(frozen=True)
class DegreeInfo:
    degrees: np.ndarray
    d_max: float


def degree_info(g):
    deg = np.asarray(g.adjacency().sum(axis=1)).ravel()
    return DegreeInfo(deg, float(deg.max()) if len(deg) else 0.0)


@dataclass(frozen=True)
class Permutation:
    """Bijection on ``[0, N)``: node ``u`` is relabelled ``mapping[u]``."""

    mapping: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.int64)
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(len(m))):
            raise ValueError("mapping is not a bijection on [0, N)")
        object.__setattr__(self, "mapping", m)

    def __len__(self):
        return len(self.mapping)

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    @classmethod
    def random(cls, n, rng):
        return cls(rng.permutation(n))

    def inverse(self):
        return Permutation(np.argsort(self.mapping))

    def matrix(self):
        """Dense ``P`` with ``P[mapping[u], u] = 1`` so that ``(P x)[mapping[u]] = x[u]``."""
        n = len(self.mapping)
        p = np.zeros((n, n))
        p[self.mapping, np.arange(n)] = 1.0
        return p

    def apply_rows(self, x):
        """``P @ x`` without forming ``P``."""
        x = np.asarray(x)
        out = np.empty_like(x)
        out[self.mapping] = x
        return out

    def conjugate(self, b):
        """``P @ b @ P.T`` for a square dense matrix."""
        inv = np.argsort(self.mapping)
        return np.asarray(b)[np.ix_(inv, inv)]

    def map_edges(self, edges):
        return self.mapping[np.asarray(edges, dtype=np.int64)]


@dataclass(frozen=True)
class GraphMatch:
    permutation: Permutation
    distance: float


def _padded_adjacency(g, strict):
    a = g.adjacency()
    deg = np.asarray(a.sum(axis=1)).ravel()
    isolated = np.flatnonzero(deg <= 0)
    if len(isolated):
        if strict:
            raise IsolatedNode(f"nodes {isolated.tolist()[:10]} have zero degree")
        a = (a + sp.csr_matrix((np.ones(len(isolated)), (isolated, isolated)),
                               shape=a.shape)).tocsr()
        deg = np.asarray(a.sum(axis=1)).ravel()
    return a, deg


def normalized_adjacency(g, strict=False):
    """``D^-1/2 A D^-1/2`` as a sparse CSR matrix.

    Zero-degree nodes get a unit self-loop first unless ``strict``, in which
    case :class:`IsolatedNode` is raised.
    """
    a, deg = _padded_adjacency(g, strict)
    s = sp.diags(1.0 / np.sqrt(deg))
    out = (s @ a @ s).tocsr()
    out.sort_indices()
    return out


def normalized_laplacian(g, strict=False):
    """``L = I - A_hat``; PSD with spectrum in ``[0, 2]``."""
    n = g.num_nodes
    return (sp.identity(n, format="csr") - normalized_adjacency(g, strict)).tocsr()


def apply_permutation(g, perm):
    if len(perm) != g.num_nodes:
        raise LengthMismatch(f"permutation of length {len(perm)} for {g.num_nodes} nodes")
    edges = perm.map_edges(g.edge_array())
    return Graph.from_edges(g.num_nodes, edges, perm.apply_rows(g.features),
                            g.edge_weights(), g.allows_self_loops)


def matching_distance(g1, g2, perm):
    """``||L1 - P L2 P^T||_F + ||X1 - P X2||_F`` at a fixed permutation."""
    l1 = normalized_laplacian(g1).toarray()
    l2 = perm.conjugate(normalized_laplacian(g2).toarray())
    d = np.linalg.norm(l1 - l2)
    if g1.num_features or g2.num_features:
        d += np.linalg.norm(g1.features - perm.apply_rows(g2.features))
    return float(d)


def brute_force_match(g1, g2, batch=20000, tie_tol=1e-12):
    """Exhaustive search for the graph matching ``P*`` over all ``N!`` permutations.

    Ties (within ``tie_tol``) resolve to the lexicographically smallest
    mapping, which is also the enumeration order.
    """
    n = g1.num_nodes
    if g2.num_nodes != n:
        raise LengthMismatch(f"{n} vs {g2.num_nodes} nodes")
    if n > MAX_MATCH_NODES:
        raise TooLarge(f"exhaustive matching limited to {MAX_MATCH_NODES} nodes, got {n}")
    if g1.features.shape != g2.features.shape:
        raise LengthMismatch("feature shapes differ")
    l1 = normalized_laplacian(g1).toarray()
    l2 = normalized_laplacian(g2).toarray()
    x1, x2 = g1.features, g2.features
    best_val, best_perm = math.inf, None
    perms = itertools.permutations(range(n))
    while True:
        chunk = np.array(list(itertools.islice(perms, batch)), dtype=np.int64)
        if chunk.size == 0:
            break
        inv = np.argsort(chunk, axis=1)
        # (P L2 P^T)[i, j] = L2[inv[i], inv[j]]
        pl = l2[inv[:, :, None], inv[:, None, :]]
        vals = np.sqrt(((pl - l1) ** 2).sum(axis=(1, 2)))
        if x1.shape[1]:
            vals = vals + np.sqrt(((x2[inv] - x1) ** 2).sum(axis=(1, 2)))
        i = int(np.flatnonzero(vals <= vals.min() + tie_tol)[0])
        if vals[i] < best_val - tie_tol:
            best_val, best_perm = float(vals[i]), chunk[i]
    perm = Permutation(best_perm)
    return GraphMatch(perm, matching_distance(g1, g2, perm))
