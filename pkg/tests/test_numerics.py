import math

import numpy as np
import pytest

from src.errors import DimensionMismatchError, NonFiniteInputError, ZeroVectorError
from src.numerics import cosine, entropy, logsumexp, normalize, normalize_rows, softmax


@pytest.mark.parametrize(
    "v, expected",
    [
        ((3, 4), (0.6, 0.8)),
        ((1, 0, 0), (1, 0, 0)),
        ((2, 2), (1 / math.sqrt(2), 1 / math.sqrt(2))),
    ],
)
def test_normalize_examples(v, expected):
    assert normalize(v) == pytest.approx(expected, abs=1e-12)


def test_normalize_is_idempotent_bitwise():
    rng = np.random.default_rng(0)
    for _ in range(50):
        u = normalize(rng.standard_normal(7))
        assert np.array_equal(normalize(u), u)


def test_normalize_rejects_zero_and_non_finite():
    with pytest.raises(ZeroVectorError):
        normalize([0.0, 0.0])
    with pytest.raises(NonFiniteInputError):
        normalize([np.nan, 1.0])


def test_normalize_rows_names_the_bad_row():
    with pytest.raises(ZeroVectorError, match="row 1"):
        normalize_rows([[1.0, 0.0], [0.0, 0.0]])


def test_cosine_examples():
    u = normalize([0.3, -0.2, 0.9])
    assert cosine(u, u) == pytest.approx(1.0)
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 0], [0.6, 0.8]) == pytest.approx(0.6)


def test_cosine_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        cosine([1, 0], [1, 0, 0])


def test_softmax_examples():
    assert softmax([0, 0, 0]) == pytest.approx([1 / 3] * 3)
    assert softmax([math.log(2), 0]) == pytest.approx([2 / 3, 1 / 3])
    a, b = 0.7, -1.3
    assert softmax([a, b], tau=0.5) == pytest.approx(softmax([2 * a, 2 * b]))


def test_softmax_is_stable_at_small_temperature():
    p = softmax([1.0, 0.99, -1.0], tau=1e-4)
    assert np.all(np.isfinite(p))
    assert p.sum() == pytest.approx(1.0)
    assert p[0] == pytest.approx(1.0)


def test_softmax_rejects_bad_input():
    with pytest.raises(NonFiniteInputError):
        softmax([np.inf, 0.0])
    with pytest.raises(ValueError):
        softmax([0.0, 1.0], tau=0.0)


def test_softmax_rows():
    p = softmax(np.array([[0.0, 0.0], [math.log(3), 0.0]]))
    assert p[0] == pytest.approx([0.5, 0.5])
    assert p[1] == pytest.approx([0.75, 0.25])


def test_entropy_examples():
    assert entropy([0, 1, 0]) == 0.0
    assert entropy([0.2] * 5) == pytest.approx(math.log(5))
    assert entropy([0.5, 0.5]) == pytest.approx(math.log(2))


def test_entropy_of_rows_returns_array():
    h = entropy(np.array([[1.0, 0.0], [0.5, 0.5]]))
    assert h.shape == (2,)
    assert h == pytest.approx([0.0, math.log(2)])


def test_logsumexp_matches_direct_evaluation():
    z = np.array([0.1, -2.0, 3.5])
    assert logsumexp(z) == pytest.approx(math.log(np.exp(z).sum()))
    assert logsumexp(np.array([1000.0, 1000.0])) == pytest.approx(1000 + math.log(2))
