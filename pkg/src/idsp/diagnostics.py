"""Accuracy, the model-smoothness probe, and a first-order reference minimizer."""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InputError

ORACLE_MAX_ORDER = 50


def accuracy(pred, truth):
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.size == 0:
        raise InputError("accuracy of an empty prediction vector is undefined")
    if pred.size != truth.size:
        raise InputError(f"length mismatch: {pred.size} predictions, {truth.size} labels")
    return float(np.mean(pred == truth))


# ---------------------------------------------------------------------------
# smoothness


@dataclass(frozen=True)
class SmoothnessReport:
    r: float
    epsilon_hat: float
    samples_per_point: int
    points_used: int
    corners_included: bool


def _directions(rng, d, count):
    """Unit-cube directions: all 2^d corners first when they fit, then uniform draws."""
    corners = 2 ** d <= count
    parts = []
    if corners:
        parts.append(np.array(list(itertools.product((-1.0, 1.0), repeat=d))))
    rest = count - (2 ** d if corners else 0)
    if rest:
        parts.append(rng.uniform(-1.0, 1.0, size=(rest, d)))
    return np.vstack(parts), corners


def smoothness_curve(score_fn, X, radii, samples_per_point=64, seed=0):
    """Estimate E_x[ sup_{||delta||_inf <= r} ||f(x + delta) - f(x)||_inf ] for each r.

    The sup is approximated by a max over ``samples_per_point`` perturbations
    ``r * u`` with ``u`` in the unit cube. Directions are fixed per point
    (seeded substream) and reused across radii, and each point's running max
    is carried from smaller to larger radii, so estimates are nondecreasing
    in r. ``score_fn`` maps a (k, d) array to (k, C) or (k,) scores.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    radii = [float(r) for r in radii]
    if any(r < 0 or not np.isfinite(r) for r in radii):
        raise InputError("radii must be finite and nonnegative")
    spp = int(samples_per_point)
    if spp < 1:
        raise InputError("samples_per_point must be >= 1")
    n, d = X.shape
    streams = np.random.SeedSequence(seed).spawn(n)
    dirs = []
    corners = False
    for i in range(n):
        U, corners = _directions(np.random.default_rng(streams[i]), d, spp)
        dirs.append(U)
    U = np.stack(dirs)  # (n, spp, d)

    base = np.asarray(score_fn(X), dtype=np.float64).reshape(n, -1)
    running = np.zeros(n)
    by_radius = {}
    for r in sorted(set(radii)):
        if r > 0:
            pts = (X[:, None, :] + r * U).reshape(n * spp, d)
            out = np.asarray(score_fn(pts), dtype=np.float64).reshape(n, spp, -1)
            change = np.abs(out - base[:, None, :]).max(axis=2).max(axis=1)
            running = np.maximum(running, change)
        by_radius[r] = float(running.mean()) if n else 0.0
    return [SmoothnessReport(r, by_radius[r], spp, n, corners) for r in radii]


def smoothness_probe(score_fn, X, r, samples_per_point=64, seed=0):
    return smoothness_curve(score_fn, X, [r], samples_per_point, seed)[0]


# ---------------------------------------------------------------------------
# first-order oracle


@dataclass
class OracleResult:
    alpha: np.ndarray
    grad_inf: float
    iterations: int
    converged: bool


def _objective_parts(K, v, Yt, lam, P):
    """Objective and gradient of the IDSP quadratic in alpha.

    J(a) = ||diag(v)(Yt - K a)||^2 + lam tr(a^T K a) + tr(a^T K P K a),
    with P = gamma L + eta M.
    """
    def value_grad(a):
        F = K @ a
        R = v[:, None] * (F - Yt)
        PF = P @ F
        J = np.sum(R * R) + lam * np.sum(a * F) + np.sum(F * PF)
        g = 2.0 * (K @ (R + PF) + lam * F)
        return J, g
    return value_grad


def gd_oracle(K, L, enc, lam, gamma, eta=0.0, M=None, tol=1e-8, max_iter=200_000, lipschitz0=1.0):
    """Minimize the IDSP objective by accelerated gradient descent.

    Step sizes come from backtracking on the gradient-Lipschitz inequality
    <g(x+) - g(y), x+ - y> <= Lk ||x+ - y||^2, which stays reliable near the
    optimum where objective differences drown in rounding. Momentum restarts
    whenever it points uphill. Stops once ||grad||_inf < tol.
    """
    K = np.asarray(getattr(K, "values", K), dtype=np.float64)
    N = K.shape[0]
    if N > ORACLE_MAX_ORDER:
        raise InputError(f"gd_oracle is for small instances (n+m <= {ORACLE_MAX_ORDER}), got {N}")
    P = np.zeros((N, N))
    if gamma:
        Lv = getattr(L, "values", L)
        P += gamma * (Lv.toarray() if hasattr(Lv, "toarray") else np.asarray(Lv))
    if eta:
        if M is None:
            raise InputError("eta > 0 requires an MMD matrix")
        P += eta * np.asarray(getattr(M, "values", M))
    vg = _objective_parts(K, enc.v.astype(np.float64), enc.Y.T, lam, P)

    x = np.zeros((N, enc.Y.shape[0]))
    _, gx = vg(x)
    y, gy = x, gx
    t = 1.0
    Lk = float(lipschitz0)
    it = 0
    while it < max_iter:
        if np.max(np.abs(gx)) < tol:
            return OracleResult(x, float(np.max(np.abs(gx))), it, True)
        it += 1
        while True:
            x_new = y - gy / Lk
            _, g_new = vg(x_new)
            step = x_new - y
            ss = np.sum(step * step)
            if ss == 0 or np.sum((g_new - gy) * step) <= Lk * ss:
                break
            Lk *= 2.0
        if np.sum(gy * (x_new - x)) > 0:
            t_new, y_next = 1.0, x_new
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y_next = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, gx, t = x_new, g_new, t_new
        if y_next is x_new:
            y, gy = x, gx
        else:
            y = y_next
            _, gy = vg(y)
    return OracleResult(x, float(np.max(np.abs(gx))), it, False)
