import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hap import tensor as tn
from hap.heads import (
    ClassifierHead,
    SimilarityConfig,
    TripletRecord,
    classify,
    euclidean,
    hierarchical_readout,
    loss_pair,
    loss_single,
    loss_triple,
    similarity_score,
)


def zero_head(in_dim, hidden, c):
    head = ClassifierHead(in_dim, hidden, c, np.random.default_rng(0))
    for p in head.parameters().values():
        p.value[...] = 0
    return head


def test_readout_examples():
    np.testing.assert_array_equal(hierarchical_readout([[[1.0, 2.0]]])[0].value, [[1, 2]])
    np.testing.assert_array_equal(hierarchical_readout([[[1.0, 3.0], [3.0, 1.0]]])[0].value, [[2, 2]])
    H = np.random.default_rng(1).normal(size=(5, 3))
    a = hierarchical_readout([H])[0].value
    b = hierarchical_readout([H[::-1]])[0].value
    np.testing.assert_allclose(a, b, atol=1e-15)
    with pytest.raises(ValueError):
        hierarchical_readout([])


def test_classify_zero_weights_uniform():
    np.testing.assert_allclose(classify(zero_head(4, 3, 5), np.ones((1, 4))).value, 0.2, atol=1e-15)


def test_classify_closed_form():
    head = zero_head(2, 2, 2)
    head.b2.value[...] = [[math.log(3), 0.0]]
    np.testing.assert_allclose(classify(head, [[1.0, -1.0]]).value, [[0.75, 0.25]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_classify_valid_distribution(seed, shift):
    rng = np.random.default_rng(seed)
    head = ClassifierHead(4, 6, 3, rng)
    p = classify(head, rng.normal(size=(1, 4)) + shift).value
    assert abs(p.sum() - 1) <= 1e-12
    assert np.all(p > 0)


def test_loss_single_examples():
    assert loss_single([[[0.0, 1.0]]], [1]).item() == 0.0
    assert loss_single([[[0.5, 0.5]]], [0]).item() == pytest.approx(math.log(2), abs=1e-15)
    p = [[0.2, 0.7, 0.1]]
    assert loss_single([p, p], [1, 1]).item() == 2 * loss_single([p], [1]).item()


def test_loss_single_clamps_zero():
    assert loss_single([[[1.0, 0.0]]], [1]).item() == pytest.approx(-math.log(1e-12))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=5), st.integers(0, 4))
def test_loss_single_nonnegative(weights, y):
    p = np.array(weights) / np.sum(weights)
    y = y % len(weights)
    loss = loss_single([p[None, :]], [y]).item()
    assert loss >= 0
    assert (loss == 0) == (p[y] == 1.0)


def test_similarity_examples():
    assert similarity_score(0.0) == 1.0
    assert similarity_score(2.0, 0.5) == pytest.approx(math.exp(-1), abs=1e-15)
    assert similarity_score(2.0, 0.5) == pytest.approx(0.36788, abs=5e-6)
    values = [similarity_score(d) for d in (0, 1, 10, 100, 1000)]
    assert all(a > b for a, b in zip(values, values[1:])) and values[-1] > 0
    assert similarity_score(tn.const([[2.0]])).item() == pytest.approx(math.exp(-1))
    with pytest.raises(ValueError):
        similarity_score(-1.0)


@settings(max_examples=50)
@given(st.floats(0, 100), st.floats(0, 100))
def test_similarity_monotone(a, b):
    sa, sb = similarity_score(a), similarity_score(b)
    assert 0 < sa <= 1 and 0 < sb <= 1
    if a < b and sa != sb:
        assert sa > sb


def test_loss_pair_examples():
    assert loss_pair([0.0, 0.0], 1).item() == pytest.approx(0.0, abs=1e-11)
    d_half = 2 * math.log(2)  # exp(-0.5 d) = 0.5
    assert loss_pair([d_half], 1).item() == pytest.approx(math.log(2), abs=1e-14)
    assert loss_pair([d_half], 0).item() == pytest.approx(math.log(2), abs=1e-14)
    assert loss_pair([0.0], 0).item() == pytest.approx(-math.log(1e-12), rel=1e-6)


def test_loss_pair_averages_levels():
    d = [0.3, 1.7]
    both = loss_pair(d, 0).item()
    assert both == pytest.approx((loss_pair([d[0]], 0).item() + loss_pair([d[1]], 0).item()) / 2)


def test_loss_pair_literal_ignores_negatives():
    assert loss_pair([1.3, 0.4], 0, paper_literal=True).item() == 0.0
    assert loss_pair([1.3], 1, paper_literal=True).item() == pytest.approx(0.65)


def test_loss_triple_examples():
    assert loss_triple([1.0, 2.0], [1.0, 2.0], 0.0).item() == 0.0
    assert loss_triple([4.0], [1.0], 1.0).item() == 4.0
    assert loss_triple([4.0], [1.0], 1.0, paper_literal=True).item() == 2.0
    with pytest.raises(ValueError):
        loss_triple([1.0], [1.0, 2.0], 0.0)


@settings(max_examples=80)
@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50)), min_size=1, max_size=4),
       st.floats(-20, 20))
def test_loss_triple_swap_symmetry(pairs, r):
    d12 = [a for a, _ in pairs]
    d13 = [b for _, b in pairs]
    assert loss_triple(d12, d13, r).item() == loss_triple(d13, d12, -r).item()


def test_euclidean_and_gradient():
    rng = np.random.default_rng(3)
    x = tn.param(rng.normal(size=(1, 4)))
    y = tn.const(rng.normal(size=(1, 4)))
    assert euclidean(x, y).item() == pytest.approx(np.linalg.norm(x.value - y.value))
    assert tn.grad_check(lambda: euclidean(x, y), x) <= 1e-6


def test_loss_gradients():
    rng = np.random.default_rng(4)
    a = tn.param(rng.normal(size=(1, 3)))
    b = tn.param(rng.normal(size=(1, 3)))
    c = tn.param(rng.normal(size=(1, 3)))
    head = ClassifierHead(3, 4, 2, rng)

    def pair():
        return loss_pair([euclidean(a, b)], 1) + loss_pair([euclidean(a, c)], 0)

    def triple():
        return loss_triple([euclidean(a, b)], [euclidean(a, c)], 0.7)

    def single():
        return loss_single([head(a)], [1])

    for f in (pair, triple):
        assert tn.grad_check(f, [a, b, c]) <= 1e-4
    assert tn.grad_check(single, [a, *head.parameters().values()]) <= 1e-4


def test_config_and_record_validation():
    assert SimilarityConfig().scale == 0.5
    with pytest.raises(ValueError):
        SimilarityConfig(scale=-0.5)
    with pytest.raises(ValueError):
        SimilarityConfig(levels=0)
    with pytest.raises(ValueError):
        TripletRecord(0, 2, 2, 1.0)
