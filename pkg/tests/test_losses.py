"""Objectives: reconstruction BCE, soft assignments, targets, KL, total."""

import math

import numpy as np
import pytest

from dgen import losses as L
from dgen import tensor as T
from dgen.errors import ContractError, DimensionError


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            xp = x.copy(); xp[i, j] += h
            xm = x.copy(); xm[i, j] -= h
            g[i, j] = (f(xp) - f(xm)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# reconstruct


def test_reconstruct_zero_embedding_gives_half():
    np.testing.assert_allclose(L.reconstruct(np.zeros((4, 3))), np.full((4, 4), 0.5))


def test_reconstruct_orthogonal_unit_rows():
    z = np.eye(3)
    a = L.reconstruct(z)
    s1 = 1 / (1 + math.exp(-1))
    np.testing.assert_allclose(np.diag(a), [s1, s1, s1])
    off = a[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, 0.5)


def test_reconstruct_matches_naive_loop():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(5, 3))
    a = L.reconstruct(z)
    for i in range(5):
        for j in range(5):
            assert a[i, j] == pytest.approx(1 / (1 + math.exp(-z[i] @ z[j])))
    np.testing.assert_allclose(a, a.T)
    assert np.all((a > 0) & (a < 1))


def test_reconstruct_tensor_matches_numpy():
    rng = np.random.default_rng(1)
    zv = rng.normal(size=(4, 2))
    out = L.reconstruct(T.parameter(zv))
    np.testing.assert_allclose(out.value, L.reconstruct(zv), atol=1e-12)


# ---------------------------------------------------------------------------
# reconstruction loss


def ring_adjacency(n):
    a = np.zeros((n, n))
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1.0
    return a


def test_reconstruction_loss_perfect_prediction_near_zero():
    a = ring_adjacency(5)
    t = a.copy()
    np.fill_diagonal(t, 1.0)
    eps = 1e-7
    a_hat = np.clip(t, eps, 1 - eps)
    assert L.reconstruction_loss(a_hat, a) == pytest.approx(0.0, abs=1e-5)


def test_reconstruction_loss_half_on_balanced_reference():
    # 4 nodes, 4 undirected edges: 8 present entries, 8 absent (incl. diagonal
    # before retargeting), so the class weight is exactly 1
    a = np.zeros((4, 4))
    for i, j in [(0, 1), (0, 2), (1, 3), (2, 3)]:
        a[i, j] = a[j, i] = 1.0
    assert L._bce_weight(a) == 1.0
    assert L.reconstruction_loss(np.full((4, 4), 0.5), a) == pytest.approx(math.log(2))


def test_reconstruction_loss_matches_hand_rolled_loop():
    rng = np.random.default_rng(2)
    n = 6
    a = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.4:
                a[i, j] = a[j, i] = 1.0
    a_hat = rng.uniform(0.05, 0.95, size=(n, n))

    w = (n * n - a.sum()) / a.sum()
    t = a.copy()
    np.fill_diagonal(t, 1.0)
    expect = 0.0
    for i in range(n):
        for j in range(n):
            if t[i, j] == 1.0:
                expect -= w * math.log(a_hat[i, j])
            else:
                expect -= math.log(1.0 - a_hat[i, j])
    expect /= n * n
    assert L.reconstruction_loss(a_hat, a) == pytest.approx(expect, rel=1e-12)


def test_reconstruction_loss_tensor_value_and_gradient():
    rng = np.random.default_rng(3)
    n = 5
    a = ring_adjacency(n)
    zv = rng.normal(size=(n, 3)) * 0.5

    def scalar(z):
        return L.reconstruction_loss(L.reconstruct(z), a)

    z = T.parameter(zv)
    with T.Tape() as tape:
        loss = L.reconstruction_loss(L.reconstruct(z), a)
        tape.backward(loss)
    assert loss.value[0, 0] == pytest.approx(scalar(zv), rel=1e-12)
    np.testing.assert_allclose(z.grad, fd_grad(scalar, zv), atol=1e-6)


def test_reconstruction_loss_validates():
    with pytest.raises(DimensionError):
        L.reconstruction_loss(np.full((3, 3), 0.5), np.zeros((4, 4)))
    with pytest.raises(ContractError):
        L.reconstruction_loss(np.full((2, 2), 0.5), np.full((2, 2), 0.3))


def test_reconstruction_loss_edgeless_reference_degenerates_gracefully():
    a = np.zeros((3, 3))
    val = L.reconstruction_loss(np.full((3, 3), 0.5), a)
    assert val == pytest.approx(math.log(2))


# ---------------------------------------------------------------------------
# soft assignment


def test_soft_assign_single_center_all_ones():
    rng = np.random.default_rng(4)
    q = L.soft_assign(rng.normal(size=(6, 2)), np.zeros((1, 2)))
    np.testing.assert_allclose(q, 1.0)


def test_soft_assign_equidistant_rows_split_evenly():
    mu = np.array([[1.0, 0.0], [-1.0, 0.0]])
    z = np.array([[0.0, 0.0], [0.0, 5.0]])
    q = L.soft_assign(z, mu)
    np.testing.assert_allclose(q, 0.5)


def test_soft_assign_worked_example():
    # at center 1, second center sqrt(3) away: (1, 1/4) -> (0.8, 0.2)
    mu = np.array([[0.0], [math.sqrt(3.0)]])
    z = np.array([[0.0]])
    np.testing.assert_allclose(L.soft_assign(z, mu), [[0.8, 0.2]], atol=1e-12)


def test_soft_assign_rows_stochastic_and_positive():
    rng = np.random.default_rng(5)
    q = L.soft_assign(rng.normal(size=(40, 4)) * 3, rng.normal(size=(5, 4)))
    assert np.all(q > 0)
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-9)


def test_soft_assign_tensor_matches_numpy():
    rng = np.random.default_rng(6)
    zv, mv = rng.normal(size=(7, 3)), rng.normal(size=(2, 3))
    q = L.soft_assign(T.parameter(zv), T.parameter(mv))
    np.testing.assert_allclose(q.value, L.soft_assign(zv, mv), atol=1e-12)


def test_soft_assign_validates():
    with pytest.raises(DimensionError):
        L.soft_assign(np.zeros((3, 2)), np.zeros((2, 3)))
    with pytest.raises(ContractError):
        L.soft_assign(np.zeros((3, 2)), np.zeros((0, 2)))


# ---------------------------------------------------------------------------
# target distribution


def test_target_uniform_rows_are_fixed_point():
    q = np.full((5, 2), 0.5)
    np.testing.assert_allclose(L.target_distribution(q), q)


def test_target_one_hot_rows_are_fixed_point():
    q = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(L.target_distribution(q), q)


def test_target_worked_example():
    q = np.array([[0.9, 0.1], [0.6, 0.4]])
    p = L.target_distribution(q)
    # f = (1.5, 0.5); row 1 ~ (0.54, 0.02); row 2 ~ (0.24, 0.32)
    np.testing.assert_allclose(p[0], [0.54 / 0.56, 0.02 / 0.56], atol=1e-12)
    np.testing.assert_allclose(p[1], [0.24 / 0.56, 0.32 / 0.56], atol=1e-12)


def test_target_rows_stochastic():
    rng = np.random.default_rng(7)
    q = rng.dirichlet(np.ones(4), size=50)
    p = L.target_distribution(q)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(p >= 0)


def test_target_sharpens_balanced_assignments():
    # with comparable cluster masses the squared-and-renormalized rows
    # concentrate; heavily skewed masses can push a row the other way
    # (this very case appears above: q=(0.6,0.4) -> p=(0.43,0.57))
    rng = np.random.default_rng(8)
    q = rng.dirichlet(np.ones(4), size=50)
    p = L.target_distribution(q)
    assert np.all(p.max(axis=1) >= q.max(axis=1) - 1e-12)


def test_target_rejects_non_stochastic_rows():
    with pytest.raises(ContractError):
        L.target_distribution(np.array([[0.9, 0.3]]))


# ---------------------------------------------------------------------------
# clustering loss


def test_kl_zero_when_equal():
    rng = np.random.default_rng(9)
    q = rng.dirichlet(np.ones(3), size=10)
    assert L.clustering_loss(q, q) == pytest.approx(0.0, abs=1e-12)


def test_kl_analytic_case():
    p = np.array([[1.0, 0.0]])
    q = np.array([[0.5, 0.5]])
    assert L.clustering_loss(p, q) == pytest.approx(math.log(2))


def test_kl_matches_naive_double_loop():
    rng = np.random.default_rng(10)
    p = rng.dirichlet(np.ones(3), size=8)
    q = rng.dirichlet(np.ones(3), size=8)
    expect = 0.0
    for i in range(8):
        for j in range(3):
            if p[i, j] > 0:
                expect += p[i, j] * math.log(p[i, j] / q[i, j])
    assert L.clustering_loss(p, q) == pytest.approx(expect, rel=1e-12)


def test_kl_nonnegative_randomized():
    rng = np.random.default_rng(11)
    for _ in range(20):
        p = rng.dirichlet(np.ones(4), size=6)
        q = rng.dirichlet(np.ones(4), size=6)
        assert L.clustering_loss(p, q) >= -1e-9


def test_kl_clamps_zero_q_and_counts():
    L.reset_clamp_warnings()
    p = np.array([[0.5, 0.5]])
    q = np.array([[1.0, 0.0]])
    val = L.clustering_loss(p, q)
    assert np.isfinite(val)
    assert L.clamp_warning_count() == 1
    L.reset_clamp_warnings()


def test_kl_gradients_match_fd_through_soft_assign():
    rng = np.random.default_rng(12)
    zv = rng.normal(size=(6, 2))
    mv = rng.normal(size=(3, 2))
    p = L.target_distribution(L.soft_assign(zv, mv))

    def scalar_z(z):
        return L.clustering_loss(p, L.soft_assign(z, mv))

    def scalar_m(m):
        return L.clustering_loss(p, L.soft_assign(zv, m))

    z, mu = T.parameter(zv), T.parameter(mv)
    with T.Tape() as tape:
        loss = L.clustering_loss(p, L.soft_assign(z, mu))
        tape.backward(loss)
    assert loss.value[0, 0] == pytest.approx(scalar_z(zv), rel=1e-12)
    np.testing.assert_allclose(z.grad, fd_grad(scalar_z, zv), atol=1e-6)
    np.testing.assert_allclose(mu.grad, fd_grad(scalar_m, mv), atol=1e-6)


def test_kl_shape_mismatch():
    with pytest.raises(DimensionError):
        L.clustering_loss(np.full((2, 2), 0.5), np.full((2, 3), 1 / 3))


# ---------------------------------------------------------------------------
# total loss


def test_total_loss_arithmetic():
    assert L.total_loss(0.3, 0.05, 10.0) == pytest.approx(0.8)
    assert L.total_loss(0.7, 99.0, 0.0) == pytest.approx(0.7)


def test_total_loss_rejects_negative_weight():
    with pytest.raises(ContractError):
        L.total_loss(0.1, 0.1, -1.0)


def test_total_loss_tensor_path_carries_gradient():
    lr = T.parameter(np.array([[0.3]]))
    lc = T.parameter(np.array([[0.05]]))
    with T.Tape() as tape:
        total = L.total_loss(lr, lc, 10.0)
        tape.backward(total)
    assert total.value[0, 0] == pytest.approx(0.8)
    np.testing.assert_allclose(lr.grad, [[1.0]])
    np.testing.assert_allclose(lc.grad, [[10.0]])


# ---------------------------------------------------------------------------
# cluster state


def test_cluster_state_flow():
    rng = np.random.default_rng(13)
    mu = T.parameter(rng.normal(size=(3, 2)), name="mu")
    st = L.ClusterState(mu=mu)
    with pytest.raises(ContractError):
        st.hard_labels
    with pytest.raises(ContractError):
        st.refresh_target()
    z = rng.normal(size=(10, 2))
    st.refresh_target(z)
    assert st.q.shape == (10, 3)
    assert st.p.shape == (10, 3)
    np.testing.assert_array_equal(st.hard_labels, st.q.argmax(axis=1))
    assert st.num_clusters == 3
