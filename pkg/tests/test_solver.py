from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from idsp.diagnostics import gd_oracle
from idsp.errors import InputError, NumericalError, ParameterError
from idsp.graph import GraphMode, build_graph, laplacian
from idsp.kernels import KernelSpec, build_kernel_matrix
from idsp.data import SynthTaskSpec, generate_synth
from idsp.solver import (SolverConfig, encode_labels, fit, mmd_matrix, objective_value,
                         predict_in_sample, predict_out_of_sample, solve_closed_form, solve_jda)
from instances import TOY_KERNEL, TOY_MEANS, random_instance, seed5_toy

LINEAR = KernelSpec("linear")


def toy_problem():
    X, is_t, labels = seed5_toy()
    K = build_kernel_matrix(X, TOY_KERNEL)
    L = laplacian(build_graph(X, is_t, 1, "t"))
    enc = encode_labels(labels, 2, 2)
    return X, K, L, enc


# --- encode_labels ---------------------------------------------------------

def test_encode_two_sources_one_target():
    enc = encode_labels([0, 1], 2, 1)
    assert np.array_equal(enc.Y, [[1, 0, 0], [0, 1, 0]])
    assert np.array_equal(enc.V, np.diag([1.0, 1.0, 0.0]))


def test_encode_without_targets():
    assert np.array_equal(encode_labels([1, 0, 1], 2, 0).V, np.eye(3))


def test_encode_columns():
    Y = encode_labels([2, 0, 2], 3, 2).Y
    e = np.eye(3)
    assert np.array_equal(Y.T, [e[2], e[0], e[2], np.zeros(3), np.zeros(3)])


def test_encode_rejects_out_of_range():
    with pytest.raises(InputError):
        encode_labels([0, 3], 3, 1)
    with pytest.raises(InputError):
        encode_labels([-1], 2, 0)


# --- solve_closed_form -----------------------------------------------------

def test_ridge_reduction():
    rng = np.random.default_rng(0)
    for _ in range(5):
        inst = random_instance(rng, m_zero=True)
        K = inst.K.values
        alpha = solve_closed_form(inst.K, inst.L, inst.enc, inst.lam, 0.0).alpha
        ridge = np.linalg.solve(K + inst.lam * np.eye(inst.order), inst.enc.Y.T)
        np.testing.assert_allclose(alpha, ridge, rtol=1e-8, atol=1e-12)


def test_scalar_case():
    K = np.array([[2.5]])
    enc = encode_labels([1], 3, 0)
    alpha = solve_closed_form(K, None, enc, 0.5, 0.0).alpha
    np.testing.assert_allclose(alpha, [[0.0, 1.0 / 3.0, 0.0]], rtol=1e-15)


def test_toy_matches_first_order_oracle():
    _, K, L, enc = toy_problem()
    closed = solve_closed_form(K, L, enc, 0.1, 1.0).alpha
    gd = gd_oracle(K, L, enc, 0.1, 1.0, tol=1e-8)
    assert gd.converged
    assert np.max(np.abs(closed - gd.alpha)) < 1e-5
    labels_closed = predict_in_sample(closed, K)[1]
    labels_gd = np.argmax(K.values @ gd.alpha, axis=1)
    assert np.array_equal(labels_closed, labels_gd)


def test_singular_system_is_a_numerical_error():
    K = np.ones((3, 3))
    enc = encode_labels([0, 1, 0], 2, 0)
    with pytest.raises(NumericalError, match="order 3"):
        solve_closed_form(K, None, enc, 1e-20, 0.0)


def test_nonpositive_lambda_rejected():
    with pytest.raises(ParameterError):
        solve_closed_form(np.eye(2), None, encode_labels([0, 1], 2, 0), 0.0, 0.0)


# --- objective -------------------------------------------------------------

def test_objective_at_zero_counts_sources():
    _, K, L, enc = toy_problem()
    assert objective_value(np.zeros((5, 2)), K, L, enc, 0.1, 1.0) == 3.0


def test_closed_form_beats_perturbations():
    _, K, L, enc = toy_problem()
    alpha = solve_closed_form(K, L, enc, 0.1, 1.0).alpha
    best = objective_value(alpha, K, L, enc, 0.1, 1.0)
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert best <= objective_value(alpha + 0.1 * rng.standard_normal(alpha.shape), K, L, enc, 0.1, 1.0)


def samplewise_objective(alpha, K, W, labels, n, lam, gamma):
    """Loss, kernel norm and graph penalty accumulated one sample (pair) at a time."""
    N, C = alpha.shape
    f = [[sum(alpha[j, c] * K[j, i] for j in range(N)) for c in range(C)] for i in range(N)]
    loss = sum((float(labels[i] == c) - f[i][c]) ** 2 for i in range(n) for c in range(C))
    norm = sum(alpha[i, c] * K[i, j] * alpha[j, c] for c in range(C) for i in range(N) for j in range(N))
    pairs = sum(W[i, j] * sum((f[i][c] - f[j][c]) ** 2 for c in range(C))
                for i in range(N) for j in range(N))
    return loss + lam * norm + gamma * 0.5 * pairs


def test_objective_matches_samplewise_sums():
    rng = np.random.default_rng(2)
    for mode in GraphMode:
        inst = random_instance(rng, mode=mode)
        alpha = rng.standard_normal((inst.order, inst.enc.class_count))
        W = np.diag(np.diag(inst.L.values.toarray())) - inst.L.values.toarray()
        expected = samplewise_objective(alpha, inst.K.values, W, inst.labels, inst.labels.size,
                                        inst.lam, inst.gamma)
        got = objective_value(alpha, inst.K, inst.L, inst.enc, inst.lam, inst.gamma)
        assert got == pytest.approx(expected, rel=1e-10)


def test_stationarity():
    rng = np.random.default_rng(3)
    for _ in range(5):
        inst = random_instance(rng)
        alpha = solve_closed_form(inst.K, inst.L, inst.enc, inst.lam, inst.gamma).alpha
        J = objective_value(alpha, inst.K, inst.L, inst.enc, inst.lam, inst.gamma)
        h = 1e-4
        for _ in range(10):
            u = rng.standard_normal(alpha.shape)
            u /= np.linalg.norm(u)
            plus = objective_value(alpha + h * u, inst.K, inst.L, inst.enc, inst.lam, inst.gamma)
            minus = objective_value(alpha - h * u, inst.K, inst.L, inst.enc, inst.lam, inst.gamma)
            assert abs(plus - minus) / (2 * h) < 1e-6 * (1 + abs(J))


def test_lambda_shrinks_coefficients():
    rng = np.random.default_rng(4)
    inst = random_instance(rng)
    norms = [np.linalg.norm(solve_closed_form(inst.K, inst.L, inst.enc, lam, inst.gamma).alpha)
             for lam in np.logspace(0, 6, 13)]
    assert all(b < a for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-5


def test_representer_projection_never_hurts():
    # linear kernel with d > n+m, so a primal W can leave the span of the rows
    rng = np.random.default_rng(6)
    X = rng.standard_normal((6, 9))
    is_t = np.r_[np.zeros(4, bool), np.ones(2, bool)]
    enc = encode_labels([0, 1, 2, 1], 3, 2)
    L = laplacian(build_graph(X, is_t, 2, "t")).toarray()
    lam, gamma = 0.3, 2.0

    def primal(W):
        F = X @ W
        R = enc.v[:, None] * (enc.Y.T - F)
        return np.sum(R * R) + lam * np.sum(W * W) + gamma * np.sum(F * (L @ F))

    K = X @ X.T
    P = X.T @ np.linalg.pinv(X.T)
    for _ in range(20):
        W = rng.standard_normal((9, 3))
        W_par = P @ W
        alpha = np.linalg.lstsq(X.T, W_par, rcond=None)[0]
        assert primal(W_par) <= primal(W)
        assert objective_value(alpha, K, L, enc, lam, gamma) == pytest.approx(primal(W_par), rel=1e-9)


# --- graph mode NP ---------------------------------------------------------

def test_mode_np_equals_zero_gamma_bitwise():
    ds = generate_synth(SynthTaskSpec(samples_per_class=15, seed=2))
    a = fit(ds.X, ds.is_target, ds.source_labels, ds.class_count, SolverConfig(gamma=5.0, mode="np"))
    b = fit(ds.X, ds.is_target, ds.source_labels, ds.class_count, SolverConfig(gamma=0.0, mode="t"))
    assert np.array_equal(a.coefficients.alpha, b.coefficients.alpha)
    assert np.array_equal(a.labels, b.labels)


# --- mmd_matrix ------------------------------------------------------------

def test_mmd_two_sources_one_target():
    M = mmd_matrix(["s", "s", "t"], [0, 0], [0], 1)
    block = np.array([[0.25, 0.25, -0.5], [0.25, 0.25, -0.5], [-0.5, -0.5, 1.0]])
    np.testing.assert_array_equal(M.values, 2 * block)
    np.testing.assert_array_equal(M.block(1), block)


def test_mmd_class_without_target_members():
    M = mmd_matrix(["s", "s", "t", "t"], [0, 1], [0, 0], 2)
    assert not M.vectors[2].any()
    assert np.array_equal(M.block(2), np.zeros((4, 4)))


def explicit_mmd(n, m, ys, yt, C):
    N = n + m
    total = np.zeros((N, N))
    groups = [(list(range(n)), list(range(n, N)))]
    for c in range(C):
        groups.append(([i for i in range(n) if ys[i] == c], [n + j for j in range(m) if yt[j] == c]))
    for s, t in groups:
        if not s or not t:
            continue
        u = np.zeros(N)
        for i in s:
            u[i] = 1.0 / len(s)
        for j in t:
            u[j] = -1.0 / len(t)
        for i in range(N):
            for j in range(N):
                total[i, j] += u[i] * u[j]
    return total


def test_mmd_explicit_construction():
    rng = np.random.default_rng(9)
    ys, yt = rng.integers(0, 3, 6), rng.integers(0, 3, 4)
    M = mmd_matrix(np.r_[np.zeros(6, bool), np.ones(4, bool)], ys, yt, 3)
    np.testing.assert_allclose(M.values, explicit_mmd(6, 4, ys, yt, 3), rtol=0, atol=1e-12)
    for c in range(4):
        assert abs(M.block(c).sum()) < 1e-10
    assert np.linalg.eigvalsh(M.values)[0] >= -1e-10


def test_mmd_label_checks():
    with pytest.raises(InputError):
        mmd_matrix(["s", "t"], [0, 0], [0], 2)
    with pytest.raises(InputError):
        mmd_matrix(["s", "t"], [0], [5], 2)


# --- solve_jda -------------------------------------------------------------

def jda_setup(seed, **spec):
    ds = generate_synth(SynthTaskSpec(**spec, seed=seed))
    config = SolverConfig.defaults(pda=False, jda=True, kernel=KernelSpec.parse("rbf"))
    enc = encode_labels(ds.source_labels, ds.class_count, ds.m)
    return ds, config, enc


def test_jda_stops_once_labels_repeat():
    ds, config, enc = jda_setup(1, class_count=2, private_source_classes=0, samples_per_class=20,
                                shift=0.0, separation=8.0)
    res = solve_jda(ds.X, config, enc)
    # well separated: the first extended solve reproduces the initial labels
    assert res.converged
    assert len(res.history) == 2
    assert np.array_equal(res.history[0], res.history[1])


def test_jda_single_iteration():
    ds, config, enc = jda_setup(3, class_count=3, private_source_classes=0, samples_per_class=20)
    res = solve_jda(ds.X, replace(config, max_iter=1), enc)
    assert len(res.history) == 2 and len(res.objectives) == 1


def test_jda_two_class_uda_stabilizes():
    ds, config, enc = jda_setup(13, class_count=2, private_source_classes=0, samples_per_class=40)
    res = solve_jda(ds.X, config, enc)
    assert res.converged and res.n_iter <= 10


def test_jda_needs_positive_eta():
    ds, config, enc = jda_setup(0, class_count=2, private_source_classes=0, samples_per_class=5)
    with pytest.raises(ParameterError):
        solve_jda(ds.X, replace(config, eta=0.0), enc)


# --- prediction ------------------------------------------------------------

def test_zero_alpha_predicts_class_zero():
    scores, labels = predict_in_sample(np.zeros((4, 3)), np.eye(4))
    assert not scores.any() and not labels.any()


def test_single_class():
    rng = np.random.default_rng(0)
    _, labels = predict_in_sample(rng.standard_normal((5, 1)), np.eye(5))
    assert not labels.any()


def test_out_of_sample_consistency():
    X, K, L, enc = toy_problem()
    coef = solve_closed_form(K, L, enc, 0.1, 1.0)
    in_sample = predict_in_sample(coef, K)[1]
    for i in range(5):
        assert predict_out_of_sample(coef, X, X[i:i + 1])[0] == in_sample[i]
    assert predict_out_of_sample(coef, X, np.zeros((0, 2))).size == 0
    with pytest.raises(InputError):
        predict_out_of_sample(coef, X, np.zeros((1, 3)))


def test_out_of_sample_near_class_means():
    X, K, L, enc = toy_problem()
    coef = solve_closed_form(K, L, enc, 0.1, 1.0)
    held_out = TOY_MEANS + np.array([[0.1, -0.2], [-0.15, 0.1]])
    nearest = np.argmin(((held_out[:, None] - TOY_MEANS[None]) ** 2).sum(-1), axis=1)
    assert np.array_equal(predict_out_of_sample(coef, X, held_out), nearest)


def test_fit_requires_source_first():
    X = np.random.default_rng(0).standard_normal((4, 2))
    with pytest.raises(InputError):
        fit(X, ["s", "t", "s", "t"], [0, 1], 2, SolverConfig(p=1))
