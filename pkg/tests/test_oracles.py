import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chatty import oracles as O
from chatty import plotting
from chatty.errors import ParameterError

sklearn_metrics = pytest.importorskip("sklearn.metrics")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(1, 3))
def test_silhouette_matches_sklearn(seed, k, d):
    rng = np.random.default_rng(seed)
    n = 5 * k
    labels = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    x = rng.normal(size=(n, d)) + labels[:, None]
    ref = sklearn_metrics.silhouette_score(x, labels)
    assert O.silhouette(x, labels) == pytest.approx(ref, abs=1e-12)


def test_silhouette_singleton_clusters_score_zero():
    x = np.array([[0.0], [0.1], [5.0]])
    y = np.array([0, 0, 1])
    assert O.silhouette(x, y) == pytest.approx(sklearn_metrics.silhouette_score(x, y))


def test_finite_difference_of_known_function():
    p = {"w": np.array([[1.0, -2.0], [0.5, 3.0]])}
    g = O.finite_difference(lambda: float(np.sum(p["w"] ** 3)), p)
    np.testing.assert_allclose(g["w"], 3 * p["w"] ** 2, rtol=1e-8)
    # parameters are restored after probing
    assert p["w"].tolist() == [[1.0, -2.0], [0.5, 3.0]]


def test_rel_error_floor():
    assert O.rel_error([1.0], [1.00001]) < 1e-4
    assert O.rel_error([1e-12], [5e-12]) < 1e-4     # both below the absolute floor
    assert O.rel_error([1e-3], [2e-3]) > 0.4


def test_projection_rules():
    rng = np.random.default_rng(0)
    z2, z3, z4 = rng.normal(size=(10, 2)), rng.normal(size=(10, 3)), rng.normal(size=(10, 4))
    xy, labels = plotting.project(z2)
    assert np.array_equal(xy, z2) and labels == ("logit 0", "logit 1")
    xy, labels = plotting.project(z3)
    assert xy.shape == (10, 2) and labels == ("PC 1", "PC 2")
    # principal axes keep the total variance of the top two components
    s = np.linalg.svd(z3 - z3.mean(0), compute_uv=False)
    np.testing.assert_allclose(np.sum(xy ** 2), s[0] ** 2 + s[1] ** 2)
    with pytest.raises(ParameterError, match="--pca"):
        plotting.project(z4)
    assert plotting.project(z4, pca=True)[0].shape == (10, 2)


def test_projection_sign_is_stable():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(20, 3))
    a = plotting.principal_axes(z)
    b = plotting.principal_axes(z[::-1])[::-1]
    np.testing.assert_allclose(a, b, atol=1e-12)
