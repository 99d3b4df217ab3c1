"""p-nearest-neighbour cosine graph, domain restriction, and graph Laplacian."""

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _backend
from .errors import InputError, InvariantViolation, ParameterError


class GraphMode(str, enum.Enum):
    NP = "np"    # no structure preserving
    T = "t"      # target-target edges only
    ST = "st"    # same-domain edges
    CST = "cst"  # every edge

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise InputError(f"unknown graph mode {value!r}; expected one of np, t, st, cst") from None


@dataclass(frozen=True)
class AffinityGraph:
    weights: sp.csr_matrix
    p: int
    mode: GraphMode = GraphMode.CST

    @property
    def order(self):
        return self.weights.shape[0]

    @property
    def nnz(self):
        return int(self.weights.count_nonzero())


@dataclass(frozen=True)
class Laplacian:
    values: sp.csr_matrix

    def toarray(self):
        return self.values.toarray()


def target_mask(domains):
    """Boolean array, True for target samples. Accepts bools or 's'/'t' tags."""
    arr = np.asarray(domains)
    if arr.dtype == bool:
        return arr.copy()
    tags = np.array([str(t).strip().lower() for t in arr.ravel()])
    bad = ~np.isin(tags, ("s", "t", "source", "target"))
    if bad.any():
        raise InputError(f"unknown domain tag {tags[bad][0]!r}")
    return np.isin(tags, ("t", "target"))


def cosine_similarity(X):
    """Bit-symmetric cosine similarity matrix of the rows of X."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise InputError("features must be a finite 2-d matrix")
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise InputError(f"row {zero[0]} has zero norm; cosine similarity is undefined")
    return _backend.ops.gram(np.ascontiguousarray(X / norms[:, None]))


def knn_affinity(X, p):
    """Symmetric p-NN graph with weights max(0, cos(x_i, x_j)).

    An edge is kept when either endpoint has the other among its p most
    similar samples. Ties in the ranking go to the lower sample index.
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0] if X.ndim == 2 else 0
    p = int(p)
    if p < 1 or p >= N:
        raise ParameterError(f"neighbour count p={p} must satisfy 1 <= p < n+m = {N}")
    S = cosine_similarity(X)
    nbrs = _backend.ops.topk_neighbors(S, p)
    rows = np.repeat(np.arange(N), p)
    cols = nbrs.ravel()
    picked = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(N, N)).tocsr()
    picked = (picked + picked.T).tocoo()
    r, c = picked.row, picked.col
    w = np.maximum(S[r, c], 0.0)
    keep = w > 0
    W = sp.csr_matrix((w[keep], (r[keep], c[keep])), shape=(N, N))
    W.sort_indices()
    return AffinityGraph(W, p, GraphMode.CST)


def apply_mode(G_hat, domains, mode):
    mode = GraphMode.parse(mode)
    is_t = target_mask(domains)
    W = G_hat.weights
    if is_t.shape[0] != W.shape[0]:
        raise InputError(f"{is_t.shape[0]} domain tags for a graph of order {W.shape[0]}")
    if mode is GraphMode.NP:
        out = sp.csr_matrix(W.shape)
    elif mode is GraphMode.CST:
        out = W.copy()
    else:
        coo = W.tocoo()
        if mode is GraphMode.T:
            keep = is_t[coo.row] & is_t[coo.col]
        else:
            keep = is_t[coo.row] == is_t[coo.col]
        out = sp.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=W.shape)
    out.sort_indices()
    return AffinityGraph(out, G_hat.p, mode)


def build_graph(X, domains, p, mode):
    """knn_affinity followed by apply_mode; NP skips the neighbour search."""
    mode = GraphMode.parse(mode)
    if mode is GraphMode.NP:
        N = np.asarray(X).shape[0]
        return AffinityGraph(sp.csr_matrix((N, N)), int(p), mode)
    return apply_mode(knn_affinity(X, p), domains, mode)


def _weights(G):
    return G.weights if isinstance(G, AffinityGraph) else sp.csr_matrix(G)


def laplacian(G):
    """L = D - G with D the diagonal degree matrix."""
    W = _weights(G).astype(np.float64)
    if W.shape[0] != W.shape[1]:
        raise InvariantViolation(f"affinity matrix is not square: {W.shape}")
    if (W != W.T).nnz:
        raise InvariantViolation("affinity matrix is not symmetric")
    if W.nnz and W.data.min() < 0:
        raise InvariantViolation("affinity matrix has negative weights")
    deg = np.asarray(W.sum(axis=1)).ravel()
    L = (sp.diags(deg) - W).tocsr()
    L.sort_indices()
    return Laplacian(L)


def laplacian_quadratic(F, G):
    """sum_ij ||F_i - F_j||^2 G_ij over ordered pairs; equals 2 tr(F^T L F)."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    W = _weights(G).tocoo()
    if F.shape[0] != W.shape[0]:
        raise InputError(f"{F.shape[0]} function values for a graph of order {W.shape[0]}")
    return _backend.ops.edge_pair_sum(W.row.astype(np.int64), W.col.astype(np.int64),
                                      np.ascontiguousarray(W.data, dtype=np.float64),
                                      np.ascontiguousarray(F))
