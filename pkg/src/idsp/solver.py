"""Closed-form IDSP solve, objective evaluation, and the JDA-extended loop.

Samples are indexed source-first: rows ``0..n-1`` are labelled source
samples and rows ``n..n+m-1`` are unlabelled target samples. With a kernel
matrix ``K``, Laplacian ``L`` and label indicator ``V`` the coefficients are

    alpha = ((V + gamma L + eta M) K + lambda I)^{-1} V Y^T

and the classifier is ``f(x) = sum_i alpha_i K(x_i, x)``.
"""

import time
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import InputError, NumericalError, ParameterError
from .graph import GraphMode, Laplacian, build_graph, laplacian, target_mask
from .kernels import KernelMatrix, KernelSpec, build_kernel_matrix, cross_kernel

PDA_DEFAULTS = dict(lam=0.1, gamma=5.0, p=10)
UDA_DEFAULTS = dict(lam=0.1, gamma=1.0, p=10)
JDA_PDA_DEFAULTS = dict(gamma=10.0, eta=0.01)
JDA_UDA_DEFAULTS = dict(gamma=2.0, eta=0.5)


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.1
    gamma: float = 1.0
    eta: float = 0.0
    p: int = 10
    mode: GraphMode = GraphMode.T
    kernel: KernelSpec = KernelSpec()
    max_iter: int = 10
    stop_on_stable_labels: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", GraphMode.parse(self.mode))
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ParameterError(f"lambda must be > 0, got {self.lam}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ParameterError(f"gamma must be >= 0, got {self.gamma}")
        if not (np.isfinite(self.eta) and self.eta >= 0):
            raise ParameterError(f"eta must be >= 0, got {self.eta}")
        if int(self.p) != self.p or self.p < 1:
            raise ParameterError(f"p must be a positive integer, got {self.p}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ParameterError(f"max_iter must be a positive integer, got {self.max_iter}")

    @classmethod
    def defaults(cls, pda, jda=False, **overrides):
        base = dict(PDA_DEFAULTS if pda else UDA_DEFAULTS)
        if jda:
            base.update(JDA_PDA_DEFAULTS if pda else JDA_UDA_DEFAULTS)
        base.update(overrides)
        return cls(**base)

    def echo(self):
        return {
            "lambda": self.lam,
            "gamma": self.gamma,
            "eta": self.eta,
            "p": self.p,
            "mode": self.mode.value,
            "kernel": self.kernel.describe(),
            "max_iter": self.max_iter,
            "stop_on_stable_labels": self.stop_on_stable_labels,
        }


@dataclass(frozen=True)
class LabelEncoding:
    """One-hot source labels ``Y`` (C x (n+m)) and the source indicator ``v``.

    Target columns of ``Y`` are zero; ``V = diag(v)``.
    """

    Y: np.ndarray
    v: np.ndarray

    @property
    def V(self):
        return np.diag(self.v)

    @property
    def n_source(self):
        return int(self.v.sum())

    @property
    def class_count(self):
        return self.Y.shape[0]

    @property
    def source_labels(self):
        return np.argmax(self.Y[:, : self.n_source], axis=0)


@dataclass(frozen=True)
class Coefficients:
    alpha: np.ndarray
    kernel: Optional[KernelSpec] = None


@dataclass(frozen=True)
class MmdMatrix:
    values: np.ndarray
    vectors: np.ndarray  # row 0 is the marginal block, row c+1 is class c

    def block(self, c):
        u = self.vectors[c]
        return np.outer(u, u)


def encode_labels(source_labels, class_count, target_count):
    y = np.asarray(source_labels)
    if y.ndim != 1:
        raise InputError("source labels must be a 1-d sequence")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise InputError("source labels must be integers")
        y = y.astype(np.int64)
    C, m, n = int(class_count), int(target_count), y.size
    if C < 1:
        raise InputError(f"class count must be >= 1, got {C}")
    if m < 0:
        raise InputError(f"target count must be >= 0, got {m}")
    bad = (y < 0) | (y >= C)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise InputError(f"source label {y[i]} at position {i} is outside [0, {C})")
    Y = np.zeros((C, n + m))
    Y[y, np.arange(n)] = 1.0
    v = np.concatenate([np.ones(n), np.zeros(m)])
    return LabelEncoding(Y, v)


def _dense(A):
    if A is None:
        return None
    if isinstance(A, (KernelMatrix,)):
        return A.values
    if isinstance(A, MmdMatrix):
        return A.values
    if isinstance(A, Laplacian):
        return A.values
    return A


def _alpha(a):
    return a.alpha if isinstance(a, Coefficients) else np.asarray(a, dtype=np.float64)


def system_matrix(K, L, enc, lam, gamma, eta=0.0, M=None):
    """(V + gamma L + eta M) K + lambda I as a dense array."""
    K = np.asarray(_dense(K), dtype=np.float64)
    L = _dense(L)
    A = enc.v[:, None] * K
    if gamma != 0 and L is not None and (not sp.issparse(L) or L.nnz):
        A += gamma * (L @ K)
    if eta != 0:
        if M is None:
            raise InputError("eta > 0 requires an MMD matrix")
        A += eta * (_dense(M) @ K)
    A[np.diag_indices_from(A)] += lam
    return A


def solve_closed_form(K, L, enc, lam, gamma, eta=0.0, M=None):
    """Coefficients alpha solving ((V + gamma L + eta M) K + lambda I) alpha = V Y^T.

    The system matrix is generally nonsymmetric, so a general LU
    factorization is used.
    """
    spec = K.spec if isinstance(K, KernelMatrix) else None
    Kv = np.asarray(_dense(K), dtype=np.float64)
    N = Kv.shape[0]
    if Kv.shape != (N, N) or enc.Y.shape[1] != N:
        raise InputError(f"kernel of shape {Kv.shape} does not match {enc.Y.shape[1]} samples")
    if not lam > 0:
        raise ParameterError(f"lambda must be > 0, got {lam}")
    A = system_matrix(Kv, L, enc, lam, gamma, eta, M)
    rhs = enc.v[:, None] * enc.Y.T
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"non-finite system matrix (order {N}, lambda={lam})")
    with warnings.catch_warnings():
        # a zero pivot is reported below through the condition estimate
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    anorm = np.linalg.norm(A, 1)
    rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not rcond > np.finfo(float).eps:
        raise NumericalError(
            f"system matrix is singular to machine precision (order {N}, lambda={lam}, rcond={rcond:.3g})")
    alpha = sla.lu_solve((lu, piv), rhs, check_finite=False)
    return Coefficients(alpha, spec)


def objective_value(alpha, K, L, enc, lam, gamma, eta=0.0, M=None):
    """||(Y - alpha^T K) V||_F^2 + tr(lambda alpha^T K alpha + alpha^T K (gamma L + eta M) K alpha)."""
    a = _alpha(alpha)
    K = np.asarray(_dense(K), dtype=np.float64)
    F = K @ a
    R = enc.v[:, None] * (enc.Y.T - F)
    value = np.sum(R * R) + lam * np.sum(a * F)
    L = _dense(L)
    if gamma != 0 and L is not None:
        value += gamma * np.sum(F * (L @ F))
    if eta != 0:
        if M is None:
            raise InputError("eta > 0 requires an MMD matrix")
        value += eta * np.sum(F * (_dense(M) @ F))
    return float(value)


def mmd_matrix(domains, source_labels, pseudo_labels, class_count):
    """Marginal plus class-conditional MMD matrix.

    Each block is ``u u^T`` with ``u = 1/n_c`` on source members and
    ``-1/m_c`` on target members of the group. Groups with no source or no
    target member contribute nothing.
    """
    is_t = target_mask(domains)
    ys = np.asarray(source_labels, dtype=np.int64)
    yt = np.asarray(pseudo_labels, dtype=np.int64)
    C = int(class_count)
    if ys.size != np.count_nonzero(~is_t) or yt.size != np.count_nonzero(is_t):
        raise InputError("label counts do not match the domain tags")
    if yt.size and (yt.min() < 0 or yt.max() >= C):
        raise InputError(f"pseudo labels must lie in [0, {C})")
    N = is_t.size
    src_idx = np.flatnonzero(~is_t)
    tgt_idx = np.flatnonzero(is_t)
    vectors = np.zeros((C + 1, N))
    groups = [(src_idx, tgt_idx)]
    groups += [(src_idx[ys == c], tgt_idx[yt == c]) for c in range(C)]
    for row, (s, t) in enumerate(groups):
        if s.size == 0 or t.size == 0:
            continue
        vectors[row, s] = 1.0 / s.size
        vectors[row, t] = -1.0 / t.size
    values = np.zeros((N, N))
    for u in vectors:
        if u.any():
            values += np.outer(u, u)
    return MmdMatrix(values, vectors)


def predict_in_sample(alpha, K):
    a = _alpha(alpha)
    K = np.asarray(_dense(K), dtype=np.float64)
    if K.shape[1] != a.shape[0]:
        raise InputError(f"kernel has {K.shape[1]} columns but alpha has {a.shape[0]} rows")
    scores = K @ a
    return scores, np.argmax(scores, axis=1)


def predict_out_of_sample(alpha, X_train, X_query, spec=None):
    if spec is None:
        spec = alpha.kernel if isinstance(alpha, Coefficients) else None
    if spec is None:
        raise InputError("kernel spec required for out-of-sample prediction")
    a = _alpha(alpha)
    Kq = cross_kernel(X_train, X_query, spec)
    if Kq.shape[1] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(Kq.T @ a, axis=1)


@dataclass
class JdaResult:
    coefficients: Coefficients
    history: List[np.ndarray]  # history[0] = initial pseudo labels
    converged: bool
    objectives: List[float] = field(default_factory=list)

    @property
    def n_iter(self):
        return len(self.history) - 1


def _check_canonical(is_t):
    n = int(np.count_nonzero(~is_t))
    if is_t[:n].any():
        raise InputError("samples must be ordered source block first, then target block")
    return n


def solve_jda(X, config, enc, K=None, L=None):
    """IDSP with a joint-distribution MMD term and pseudo-label iteration.

    Pseudo labels start from a plain (eta=0) solve. Each iteration rebuilds
    only the MMD matrix; kernel, graph and labels stay fixed.
    """
    if not config.eta > 0:
        raise ParameterError("solve_jda needs eta > 0")
    is_t = enc.v == 0
    n = _check_canonical(is_t)
    if K is None:
        K = build_kernel_matrix(X, config.kernel)
    if L is None:
        L = laplacian(build_graph(X, is_t, config.p, config.mode))
    C = enc.class_count
    ys = enc.source_labels

    coef = solve_closed_form(K, L, enc, config.lam, config.gamma)
    labels = predict_in_sample(coef, K)[1][n:]
    history = [labels]
    objectives = []
    converged = False
    for _ in range(config.max_iter):
        M = mmd_matrix(is_t, ys, history[-1], C)
        coef = solve_closed_form(K, L, enc, config.lam, config.gamma, config.eta, M)
        objectives.append(objective_value(coef, K, L, enc, config.lam, config.gamma, config.eta, M))
        labels = predict_in_sample(coef, K)[1][n:]
        stable = np.array_equal(labels, history[-1])
        history.append(labels)
        if stable:
            converged = True
            if config.stop_on_stable_labels:
                break
    return JdaResult(coef, history, converged, objectives)


@dataclass
class FitResult:
    config: SolverConfig
    coefficients: Coefficients
    kernel: KernelMatrix
    laplacian: Laplacian
    scores: np.ndarray
    labels: np.ndarray
    n_source: int
    timings: dict
    encoding: LabelEncoding
    jda: Optional[JdaResult] = None

    @property
    def target_labels(self):
        return self.labels[self.n_source:]

    @property
    def target_scores(self):
        return self.scores[self.n_source:]


def fit(X, domains, source_labels, class_count, config, K=None):
    """Graph -> kernel -> solve -> predict.

    Pass a precomputed ``K`` to share one kernel across several fits.
    """
    X = np.asarray(X, dtype=np.float64)
    is_t = target_mask(domains)
    n = _check_canonical(is_t)
    if len(source_labels) != n:
        raise InputError(f"{len(source_labels)} source labels for {n} source samples")
    enc = encode_labels(source_labels, class_count, is_t.size - n)
    timings = {}

    t0 = time.perf_counter()
    L = laplacian(build_graph(X, is_t, config.p, config.mode))
    timings["graph"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if K is None:
        K = build_kernel_matrix(X, config.kernel)
    config = replace(config, kernel=K.spec)
    timings["kernel"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    jda = None
    if config.eta > 0:
        jda = solve_jda(X, config, enc, K=K, L=L)
        coef = jda.coefficients
    else:
        coef = solve_closed_form(K, L, enc, config.lam, config.gamma)
    scores, labels = predict_in_sample(coef, K)
    timings["solve"] = time.perf_counter() - t0
    return FitResult(config, coef, K, L, scores, labels, n, timings, enc, jda)


__all__ = [
    "SolverConfig", "LabelEncoding", "Coefficients", "MmdMatrix", "JdaResult", "FitResult",
    "encode_labels", "solve_closed_form", "objective_value", "mmd_matrix", "solve_jda",
    "predict_in_sample", "predict_out_of_sample", "system_matrix", "fit",
]
