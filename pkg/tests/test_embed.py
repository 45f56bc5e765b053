import numpy as np
import pytest

from hap import tensor as tn
from hap.embed import GatLayer, GcnLayer, make_layer
from hap.graph import er_random_graph


def gcn_reference(A, H, W):
    """Dense loop evaluation of the symmetric-normalised propagation rule."""
    n = A.shape[0]
    At = A + np.eye(n)
    d = At.sum(axis=1)
    HW = H @ W
    out = np.zeros((n, W.shape[1]))
    for i in range(n):
        for j in range(n):
            out[i] += At[i, j] / np.sqrt(d[i] * d[j]) * HW[j]
    return np.maximum(out, 0)


def gat_reference(A, H, W, a_src, a_dst):
    n = A.shape[0]
    HW = H @ W
    out = np.zeros((n, W.shape[1]))
    alpha = np.zeros((n, n))
    for i in range(n):
        nbrs = [j for j in range(n) if j == i or A[i, j] > 0]
        e = []
        for j in nbrs:
            z = HW[i] @ a_src + HW[j] @ a_dst
            e.append(z if z > 0 else 0.01 * z)
        e = np.exp(np.array(e) - max(e))
        e /= e.sum()
        for w, j in zip(e, nbrs):
            alpha[i, j] = w
            out[i] += w * HW[j]
    return np.maximum(out, 0), alpha


def set_weight(layer, W):
    layer.W.value[...] = W


def test_gcn_single_node():
    layer = GcnLayer(2, 2, np.random.default_rng(0))
    set_weight(layer, np.eye(2))
    np.testing.assert_allclose(layer([[0.0]], [[2.0, 3.0]]).value, [[2, 3]])


def test_gcn_two_node_path():
    layer = GcnLayer(2, 2, np.random.default_rng(0))
    set_weight(layer, np.eye(2))
    out = layer([[0, 1], [1, 0]], np.eye(2)).value
    np.testing.assert_allclose(out, 0.5 * np.ones((2, 2)), atol=1e-15)


def test_gcn_matches_reference():
    rng = np.random.default_rng(3)
    g = er_random_graph(6, 0.5, rng)
    H = rng.normal(size=(6, 4))
    layer = GcnLayer(4, 5, rng)
    np.testing.assert_allclose(layer(g.adjacency, H).value,
                               gcn_reference(g.adjacency, H, layer.W.value), atol=1e-12)


def test_gcn_weighted_adjacency_reference():
    rng = np.random.default_rng(4)
    A = rng.uniform(size=(5, 5))
    A = A + A.T
    np.fill_diagonal(A, 0)
    H = rng.normal(size=(5, 3))
    layer = GcnLayer(3, 2, rng)
    np.testing.assert_allclose(layer(A, H).value, gcn_reference(A, H, layer.W.value), atol=1e-12)


def test_gat_single_node():
    rng = np.random.default_rng(1)
    layer = GatLayer(3, 2, rng)
    H = rng.normal(size=(1, 3))
    np.testing.assert_allclose(layer.attention([[0.0]], H).value, [[1.0]])
    np.testing.assert_allclose(layer([[0.0]], H).value, np.maximum(H @ layer.W.value, 0))


def test_gat_zero_attention_on_clique_is_mean():
    rng = np.random.default_rng(2)
    layer = GatLayer(3, 4, rng)
    layer.attn_src.value[...] = 0
    layer.attn_dst.value[...] = 0
    A = np.ones((4, 4)) - np.eye(4)
    H = rng.normal(size=(4, 3))
    np.testing.assert_allclose(layer.attention(A, H).value, np.full((4, 4), 0.25))
    expected = np.maximum(np.tile(H.mean(axis=0) @ layer.W.value, (4, 1)), 0)
    np.testing.assert_allclose(layer(A, H).value, expected, atol=1e-14)


def test_gat_attention_rows_normalised_and_masked():
    rng = np.random.default_rng(5)
    g = er_random_graph(5, 0.4, rng)
    layer = GatLayer(3, 4, rng)
    alpha = layer.attention(g.adjacency, rng.normal(size=(5, 3))).value
    np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-12)
    off_support = (g.adjacency + np.eye(5)) == 0
    assert np.all(alpha[off_support] == 0)


def test_gat_matches_reference():
    rng = np.random.default_rng(6)
    g = er_random_graph(7, 0.4, rng)
    H = rng.normal(size=(7, 3))
    layer = GatLayer(3, 4, rng)
    out, alpha = gat_reference(g.adjacency, H, layer.W.value,
                               layer.attn_src.value.ravel(), layer.attn_dst.value.ravel())
    np.testing.assert_allclose(layer.attention(g.adjacency, H).value, alpha, atol=1e-12)
    np.testing.assert_allclose(layer(g.adjacency, H).value, out, atol=1e-12)


@pytest.mark.parametrize("kind", ["gcn", "gat"])
def test_permutation_equivariance(kind):
    rng = np.random.default_rng(7)
    for _ in range(10):
        n = int(rng.integers(2, 15))
        g = er_random_graph(n, 0.3, rng)
        H = rng.normal(size=(n, 4))
        layer = make_layer(kind, 4, 6, rng)
        perm = rng.permutation(n)
        base = layer(g.adjacency, H).value
        moved = layer(g.adjacency[np.ix_(perm, perm)], H[perm]).value
        assert np.max(np.abs(moved - base[perm])) <= 1e-10


@pytest.mark.parametrize("kind", ["gcn", "gat"])
def test_layer_gradients(kind):
    rng = np.random.default_rng(9)
    g = er_random_graph(6, 0.5, rng)
    H = rng.normal(size=(6, 3))
    layer = make_layer(kind, 3, 4, rng)
    probe = tn.const(rng.normal(size=(6, 4)))

    def f():
        return tn.sum_all(layer(g.adjacency, H) * probe)

    for p in layer.parameters().values():
        assert grad_err(f, p) <= 1e-4


def grad_err(f, p):
    return tn.grad_check(f, p)


def test_gcn_gradient_through_adjacency():
    # the adjacency of deeper levels is itself a function of parameters
    rng = np.random.default_rng(10)
    A = tn.param(rng.uniform(0.1, 1.0, size=(4, 4)))
    H = rng.normal(size=(4, 3))
    layer = GcnLayer(3, 2, rng)
    assert tn.grad_check(lambda: tn.sum_all(layer(A, H)), A) <= 1e-4


def test_make_layer_rejects_unknown():
    with pytest.raises(ValueError):
        make_layer("sage", 2, 2, np.random.default_rng(0))
