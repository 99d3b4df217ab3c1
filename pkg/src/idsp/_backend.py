"""Hot pairwise kernels, compiled with numba when available.

Every kernel has a pure-numpy twin with the same signature. The active
implementation is chosen once at import time:

    IDSP_DISABLE_NUMBA=1   force the numpy path
    (unset)                use numba if it imports, else numpy

Both paths compute each unordered pair exactly once, so symmetric outputs
are bit-symmetric. They are not guaranteed to agree with each other to the
last ulp (BLAS and the compiled loops sum in different orders).
"""

import os
import warnings

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

try:
    import numba
    from numba import njit, prange
except ImportError:  # pragma: no cover
    numba = None
else:
    # old system TBB: numba falls back to another threading layer, loudly
    warnings.filterwarnings("ignore", message=".*TBB threading layer.*")


def _env_disabled():
    return os.environ.get("IDSP_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


# ---------------------------------------------------------------------------
# numpy path


def np_sq_dists(X):
    return squareform(pdist(X, "sqeuclidean"))


def np_sq_dists_cross(A, B):
    return cdist(A, B, "sqeuclidean")


def np_gram(X):
    G = X @ X.T
    upper = np.triu(G)
    return upper + np.triu(G, 1).T


def np_topk_neighbors(S, p):
    """Indices of the p largest entries per row, self excluded, ties -> lower index."""
    S = np.array(S, dtype=np.float64, copy=True)
    np.fill_diagonal(S, -np.inf)
    order = np.argsort(-S, axis=1, kind="stable")
    return order[:, :p].astype(np.int64)


def np_edge_pair_sum(rows, cols, weights, F):
    diff = F[rows] - F[cols]
    return float(np.sum(weights * np.sum(diff * diff, axis=1)))


# ---------------------------------------------------------------------------
# numba path

if numba is not None:

    @njit(cache=True, parallel=True)
    def nb_sq_dists(X):
        n, d = X.shape
        out = np.zeros((n, n))
        for i in prange(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    t = X[i, k] - X[j, k]
                    acc += t * t
                out[i, j] = acc
                out[j, i] = acc
        return out

    @njit(cache=True, parallel=True)
    def nb_sq_dists_cross(A, B):
        n, d = A.shape
        q = B.shape[0]
        out = np.empty((n, q))
        for i in prange(n):
            for j in range(q):
                acc = 0.0
                for k in range(d):
                    t = A[i, k] - B[j, k]
                    acc += t * t
                out[i, j] = acc
        return out

    @njit(cache=True, parallel=True)
    def nb_gram(X):
        n, d = X.shape
        out = np.empty((n, n))
        for i in prange(n):
            for j in range(i, n):
                acc = 0.0
                for k in range(d):
                    acc += X[i, k] * X[j, k]
                out[i, j] = acc
                out[j, i] = acc
        return out

    @njit(cache=True, parallel=True)
    def nb_topk_neighbors(S, p):
        n = S.shape[0]
        out = np.empty((n, p), dtype=np.int64)
        for i in prange(n):
            best_v = np.full(p, -np.inf)
            best_j = np.full(p, n, dtype=np.int64)
            filled = 0
            for j in range(n):
                if j == i:
                    continue
                v = S[i, j]
                # j ascends, so an equal value never displaces an earlier index
                if filled == p and not v > best_v[p - 1]:
                    continue
                pos = filled if filled < p else p - 1
                while pos > 0 and v > best_v[pos - 1]:
                    if pos < p:
                        best_v[pos] = best_v[pos - 1]
                        best_j[pos] = best_j[pos - 1]
                    pos -= 1
                best_v[pos] = v
                best_j[pos] = j
                if filled < p:
                    filled += 1
            for t in range(p):
                out[i, t] = best_j[t]
        return out

    @njit(cache=True)
    def nb_edge_pair_sum(rows, cols, weights, F):
        # serial on purpose: a parallel reduction would depend on the schedule
        c = F.shape[1]
        total = 0.0
        for e in range(rows.shape[0]):
            acc = 0.0
            for k in range(c):
                t = F[rows[e], k] - F[cols[e], k]
                acc += t * t
            total += weights[e] * acc
        return total


class _Ops:
    def __init__(self, name, sq_dists, sq_dists_cross, gram, topk_neighbors, edge_pair_sum):
        self.name = name
        self.sq_dists = sq_dists
        self.sq_dists_cross = sq_dists_cross
        self.gram = gram
        self.topk_neighbors = topk_neighbors
        self.edge_pair_sum = edge_pair_sum


NUMPY_OPS = _Ops("numpy", np_sq_dists, np_sq_dists_cross, np_gram, np_topk_neighbors, np_edge_pair_sum)

if numba is not None:

    def _nb_edge_pair_sum(rows, cols, weights, F):
        return float(nb_edge_pair_sum(rows, cols, weights, F))

    NUMBA_OPS = _Ops("numba", nb_sq_dists, nb_sq_dists_cross, nb_gram, nb_topk_neighbors,
                     _nb_edge_pair_sum)
else:  # pragma: no cover
    NUMBA_OPS = None

ops = NUMPY_OPS if (NUMBA_OPS is None or _env_disabled()) else NUMBA_OPS
BACKEND = ops.name
