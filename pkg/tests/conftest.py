import numpy as np
import pytest

from staircase_attack.models import Dense, Flatten, Model, convnet, cross_entropy, mlp, softmax


class ConstantGradient:
    """Loss whose input gradient is a fixed vector everywhere (J = c . x)."""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=np.float64)

    def loss(self, x, label):
        return float(np.sum(self.c * x))

    def input_gradient(self, x, label):
        return self.c.copy()


class Quadratic:
    """J = ||x||^2 / 2."""

    def loss(self, x, label):
        return 0.5 * float(np.sum(np.asarray(x) ** 2))

    def input_gradient(self, x, label):
        return np.asarray(x, dtype=np.float64).copy()


class LinearLogits:
    """logits = A x (x flattened), cross-entropy loss."""

    def __init__(self, A, input_shape):
        self.A = np.asarray(A, dtype=np.float64)
        self.input_shape = tuple(input_shape)
        self.num_classes = self.A.shape[0]

    def logits(self, x):
        return self.A @ np.ravel(x)

    def loss(self, x, label):
        return cross_entropy(self.logits(x), label)

    def input_gradient(self, x, label):
        p = softmax(self.logits(x))
        p[label] -= 1.0
        return (self.A.T @ p).reshape(self.input_shape)


def linear_model(A, b=None):
    """A Model made of flatten -> dense, so logits = A x + b."""
    A = np.asarray(A, dtype=np.float64)
    n_out, n_in = A.shape
    b = np.zeros(n_out) if b is None else np.asarray(b, dtype=np.float64)
    return Model([Flatten(), Dense(n_in, n_out)], (1, 1, n_in), n_out, np.concatenate([A.ravel(), b]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_mlp():
    return mlp((1, 8, 8), 5, seed=3)


@pytest.fixture(scope="session")
def small_convnet():
    return convnet((1, 8, 8), 5, seed=4)
