"""Gram matrices and out-of-sample kernel rows."""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import _backend
from .errors import DegenerateBandwidthError, InputError

KINDS = ("linear", "rbf", "cosine")
BANDWIDTH_RULES = ("explicit", "median_heuristic")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice.

    ``rbf`` uses ``exp(-||x - y||^2 / (2 * bandwidth^2))``. With
    ``bandwidth_rule="median_heuristic"`` the bandwidth is the median
    pairwise Euclidean distance of the training rows; :func:`resolve`
    freezes it so out-of-sample queries reuse the training value.
    """

    kind: str = "linear"
    bandwidth: Optional[float] = None
    bandwidth_rule: str = "explicit"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown kernel kind {self.kind!r}")
        if self.bandwidth_rule not in BANDWIDTH_RULES:
            raise InputError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.kind == "rbf" and (self.bandwidth_rule == "explicit" or self.bandwidth is not None):
            if self.bandwidth is None or not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
                raise InputError(f"rbf bandwidth must be positive, got {self.bandwidth!r}")

    @classmethod
    def parse(cls, text):
        """Parse ``linear``, ``cosine``, ``rbf`` (median heuristic) or ``rbf:<sigma>``."""
        text = text.strip().lower()
        if text == "rbf":
            return cls("rbf", bandwidth_rule="median_heuristic")
        if text.startswith("rbf:"):
            try:
                sigma = float(text[4:])
            except ValueError:
                raise InputError(f"bad rbf bandwidth in {text!r}") from None
            return cls("rbf", bandwidth=sigma)
        return cls(text)

    @property
    def resolved(self):
        return self.kind != "rbf" or self.bandwidth is not None

    def describe(self):
        if self.kind != "rbf":
            return self.kind
        if self.bandwidth is None:
            return "rbf:median"
        suffix = " (median)" if self.bandwidth_rule == "median_heuristic" else ""
        return f"rbf:{self.bandwidth!r}{suffix}"


@dataclass(frozen=True)
class KernelMatrix:
    values: np.ndarray
    spec: KernelSpec

    @property
    def order(self):
        return self.values.shape[0]


def _as_features(X, name="X"):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InputError(f"{name} must be a 2-d feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains non-finite values")
    return X


def median_bandwidth(X):
    X = _as_features(X)
    if X.shape[0] < 2:
        raise DegenerateBandwidthError("median heuristic needs at least two rows")
    iu = np.triu_indices(X.shape[0], 1)
    dist = np.sqrt(_backend.ops.sq_dists(X)[iu])
    sigma = float(np.median(dist))
    if not sigma > 0:
        raise DegenerateBandwidthError("median pairwise distance is zero (rows identical)")
    return sigma


def resolve(spec, X):
    """Return ``spec`` with any median-heuristic bandwidth computed from ``X``."""
    if spec.resolved:
        return spec
    return replace(spec, bandwidth=median_bandwidth(X))


def _unit_rows(X, name):
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    if np.any(norms == 0):
        raise InputError(f"{name} has a zero-norm row; cosine is undefined")
    return np.ascontiguousarray(X / norms[:, None])


def _rbf(sq, sigma):
    return np.exp(-sq / (2.0 * sigma * sigma))


def build_kernel_matrix(X, spec=KernelSpec()):
    X = _as_features(X)
    n, d = X.shape
    if n < 1 or d < 1:
        raise InputError(f"empty feature matrix {X.shape}")
    spec = resolve(spec, X)
    ops = _backend.ops
    if spec.kind == "linear":
        K = ops.gram(X)
    elif spec.kind == "cosine":
        K = np.clip(ops.gram(_unit_rows(X, "X")), -1.0, 1.0)
    else:
        K = _rbf(ops.sq_dists(X), spec.bandwidth)
    return KernelMatrix(K, spec)


def cross_kernel(X_train, X_query, spec):
    """Matrix of K(x_train_i, x_query_j), shape (n_train, n_query)."""
    X_train = _as_features(X_train, "X_train")
    X_query = np.asarray(X_query, dtype=np.float64)
    if X_query.ndim == 2 and X_query.shape[0] == 0:
        return np.zeros((X_train.shape[0], 0))
    X_query = _as_features(X_query, "X_query")
    if X_query.shape[1] != X_train.shape[1]:
        raise InputError(
            f"feature dimension mismatch: train {X_train.shape[1]}, query {X_query.shape[1]}")
    if not spec.resolved:
        raise InputError("rbf bandwidth must be resolved (frozen at fit time) before querying")
    ops = _backend.ops
    if spec.kind == "linear":
        return X_train @ X_query.T
    if spec.kind == "cosine":
        return np.clip(_unit_rows(X_train, "X_train") @ _unit_rows(X_query, "X_query").T, -1.0, 1.0)
    return _rbf(ops.sq_dists_cross(X_train, X_query), spec.bandwidth)
