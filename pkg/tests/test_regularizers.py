import math

import numpy as np
import pytest

from hiertax import tensor as T
from hiertax.errors import ValidationError
from hiertax.regularizers import (
    LossWeights,
    derive_fine_distribution,
    distribution_loss,
    similarity_loss,
    total_loss,
)
from hiertax.tensor import Tensor


def test_similarity_zero_for_equal_embeddings():
    V = np.random.default_rng(0).normal(size=(2, 4))
    assert similarity_loss(V, Tensor(V[[0, 0, 1]]), [(0, 0), (0, 1), (1, 2)]).data == 0.0


def test_similarity_single_edge():
    assert similarity_loss(np.array([[3.0, 4.0]]), Tensor([[0.0, 0.0]]), [(0, 0)]).data == 12.5


def test_similarity_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    V1, V2 = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    edges = [(0, 0), (0, 2), (1, 1), (2, 2)]
    ref = sum(0.5 * sum((V1[i, k] - V2[j, k]) ** 2 for k in range(5)) for i, j in edges)
    assert abs(similarity_loss(V1, Tensor(V2), edges).data - ref) < 1e-12


def test_similarity_invalid_edge():
    with pytest.raises(ValidationError):
        similarity_loss(np.zeros((1, 2)), Tensor(np.zeros((1, 2))), [(0, 3)])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_similarity_gradients_both_tables(seed):
    rng = np.random.default_rng(seed)
    V1, V2 = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    edges = [(0, 0), (0, 1), (1, 2), (2, 3), (2, 4), (1, 4)]
    assert T.grad_check(lambda v: similarity_loss(v, Tensor(V2), edges), Tensor(V1)) < 1e-5
    assert T.grad_check(lambda v: similarity_loss(V1, v, edges), Tensor(V2)) < 1e-5


def test_fine_distribution_worked_example():
    w = np.array([[1.0, 0.5, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(derive_fine_distribution([1.0, 0.0], w), [2 / 3, 1 / 3, 0.0], atol=1e-15)
    assert derive_fine_distribution([0.3], np.array([[1.0]])).tolist() == [1.0]


def test_fine_distribution_properties():
    rng = np.random.default_rng(2)
    for _ in range(200):
        w = rng.random((3, 5)) * (rng.random((3, 5)) < 0.6)
        P = rng.random(3)
        if (P @ w).sum() == 0:
            continue
        d = derive_fine_distribution(P, w)
        assert d.min() >= 0 and abs(d.sum() - 1) < 1e-9
        np.testing.assert_allclose(derive_fine_distribution(P * 7.3, w), d, atol=1e-12)


def test_fine_distribution_zero_mass():
    with pytest.raises(ValidationError, match="skip"):
        derive_fine_distribution([0.0, 0.0], np.ones((2, 2)))


def test_distribution_loss_examples():
    assert distribution_loss([0.0, 1.0], Tensor([0.3, 1 - 1e-9])).data < 1e-6
    assert abs(distribution_loss([1.0, 0.0], Tensor([0.5, 0.9])).data - math.log(2)) < 1e-15
    rng = np.random.default_rng(3)
    d, p = rng.dirichlet(np.ones(4)), rng.uniform(0.05, 0.95, 4)
    ref = sum(a * math.log(a / b) for a, b in zip(d, p))
    assert abs(distribution_loss(d, Tensor(p)).data - ref) < 1e-12


def test_distribution_loss_normalised_minimum_at_proportional():
    rng = np.random.default_rng(4)
    for _ in range(100):
        d = rng.dirichlet(np.ones(5))
        at_target = distribution_loss(d, Tensor(d * rng.uniform(0.1, 1.0)), normalize=True).data
        other = distribution_loss(d, Tensor(rng.uniform(0.01, 1.0, 5)), normalize=True).data
        assert abs(at_target) < 1e-12
        assert other >= at_target - 1e-12


@pytest.mark.parametrize("normalize", [False, True])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_distribution_loss_gradients(seed, normalize):
    rng = np.random.default_rng(seed)
    d = rng.dirichlet(np.ones(4))
    logits = Tensor(rng.normal(size=4))
    assert T.grad_check(lambda x: distribution_loss(d, T.sigmoid(x), normalize), logits) < 1e-5


def test_total_loss():
    assert total_loss(1.5, 7.0, 9.0, LossWeights(0.0, 0.0)).data == 1.5
    assert total_loss(1.0, 2.0, 3.0, LossWeights(1.0, 1.0)).data == 6.0
    assert abs(total_loss(1.0, 2.0, 3.0, LossWeights()).data - 1.023) < 1e-15
    with pytest.raises(ValidationError):
        LossWeights(-1.0, 0.0)
