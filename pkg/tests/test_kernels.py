import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kode.kernels import (
    KernelSpec,
    eval_kernel,
    grad_x_matrix,
    kernel_grad_x,
    kernel_matrix,
    median_heuristic,
)

GAUSS = KernelSpec("gaussian", 1.0)
LAP = KernelSpec("laplace", 1.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("gaussian", 0.0)
    with pytest.raises(ValueError):
        KernelSpec("gaussian", -1.0)
    with pytest.raises(ValueError):
        KernelSpec("matern", 1.0)


def test_eval_identity_and_formulas():
    x = np.array([0.3, -0.7])
    assert eval_kernel(GAUSS, x, x) == pytest.approx(1.0)
    assert eval_kernel(LAP, x, x) == pytest.approx(1.0)
    # |x - y| = 1
    assert eval_kernel(GAUSS, [0.0], [1.0]) == pytest.approx(np.exp(-0.5), abs=1e-12)
    assert eval_kernel(LAP, [0.0], [1.0]) == pytest.approx(np.exp(-1.0), abs=1e-12)


def test_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_kernel(GAUSS, [0.0, 1.0], [0.0])
    with pytest.raises(ValueError):
        kernel_matrix(GAUSS, np.zeros((3, 2)), np.zeros((4, 3)))


def test_grad_closed_forms():
    assert np.allclose(kernel_grad_x(GAUSS, [1.0, 2.0], [1.0, 2.0]), 0.0)
    # d/dx exp(-(x-y)^2/2) at x=1, y=0 is -(x-y) k = -exp(-0.5)
    g = kernel_grad_x(GAUSS, [1.0], [0.0])
    assert g[0] == pytest.approx(-np.exp(-0.5), rel=1e-12)
    g = kernel_grad_x(LAP, [1.0], [0.0])
    assert g[0] == pytest.approx(-np.exp(-1.0), rel=1e-12)
    # laplace at coincident points: zero subgradient convention
    assert np.allclose(kernel_grad_x(LAP, [0.5, 0.5], [0.5, 0.5]), 0.0)


def _fd_grad(spec, x, y, h=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (eval_kernel(spec, xp, y) - eval_kernel(spec, xm, y)) / (2 * h)
    return g


@pytest.mark.parametrize("family", ["gaussian", "laplace"])
def test_grad_matches_finite_differences(family):
    spec = KernelSpec(family, 0.7)
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 30:
        x = rng.normal(size=3)
        y = rng.normal(size=3)
        if family == "laplace" and np.linalg.norm(x - y) <= 0.1:
            continue
        g = kernel_grad_x(spec, x, y)
        fd = _fd_grad(spec, x, y)
        assert np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12) < 1e-6
        checked += 1


def test_kernel_matrix_unit_diagonal_and_formula():
    X = np.array([[0.0], [1.0]])
    K = kernel_matrix(GAUSS, X, X)
    expected = np.array([[1.0, np.exp(-0.5)], [np.exp(-0.5), 1.0]])
    assert np.allclose(K, expected, atol=1e-15)
    rng = np.random.default_rng(0)
    Y = rng.normal(size=(7, 3))
    assert np.allclose(np.diag(kernel_matrix(LAP, Y, Y)), 1.0)


@pytest.mark.parametrize("family", ["gaussian", "laplace"])
def test_kernel_matrix_matches_scalar_eval(family):
    spec = KernelSpec(family, 1.3)
    rng = np.random.default_rng(1)
    X = rng.normal(size=(5, 3))
    Y = rng.normal(size=(4, 3))
    K = kernel_matrix(spec, X, Y)
    for i in range(5):
        for j in range(4):
            assert K[i, j] == pytest.approx(eval_kernel(spec, X[i], Y[j]), rel=1e-12)


@pytest.mark.parametrize("family", ["gaussian", "laplace"])
def test_kernel_matrix_psd(family):
    spec = KernelSpec(family, 0.9)
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 2))
    eig = np.linalg.eigvalsh(kernel_matrix(spec, X, X))
    assert eig.min() >= -1e-10


def test_grad_x_matrix_matches_pairwise():
    spec = KernelSpec("gaussian", 0.8)
    rng = np.random.default_rng(3)
    X = rng.normal(size=(4, 2))
    Y = rng.normal(size=(3, 2))
    G = grad_x_matrix(spec, X, Y)
    for i in range(4):
        for j in range(3):
            assert np.allclose(G[i, j], kernel_grad_x(spec, X[i], Y[j]), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=2, max_size=4),
    st.lists(st.floats(-5, 5), min_size=2, max_size=4),
    st.sampled_from(["gaussian", "laplace"]),
)
def test_symmetry_and_range(xs, ys, family):
    d = min(len(xs), len(ys))
    x, y = np.array(xs[:d]), np.array(ys[:d])
    spec = KernelSpec(family, 1.1)
    kxy = eval_kernel(spec, x, y)
    assert kxy == pytest.approx(eval_kernel(spec, y, x), rel=1e-14)
    assert 0.0 < kxy <= 1.0


def test_median_heuristic_small_cases():
    assert median_heuristic(np.array([[0.0], [1.0], [3.0]])) == pytest.approx(2.0)
    assert median_heuristic(np.array([[0.0], [2.0]])) == pytest.approx(2.0)


def test_median_heuristic_matches_brute_force():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(100, 2))
    dists = [np.linalg.norm(X[i] - X[j]) for i in range(100) for j in range(i + 1, 100)]
    assert median_heuristic(X) == pytest.approx(float(np.median(dists)), rel=1e-12)


def test_median_heuristic_errors():
    with pytest.raises(ValueError):
        median_heuristic(np.array([[1.0, 2.0]]))
    with pytest.raises(ValueError):
        median_heuristic(np.zeros((4, 2)))


def test_median_heuristic_duplicates_in_pool():
    # duplicates contribute zero distances but the median can still be positive
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    # pairwise distances: 0, 1, 1, 1, 1, 0 -> median 1
    assert median_heuristic(X) == pytest.approx(1.0)
