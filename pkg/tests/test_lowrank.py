import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrm_functa.lowrank import compose_modulation, gram_schmidt, init_subspace, ortho_penalty
from lrm_functa.numerics import ShapeError, finite_diff_grad, make_rng, matmul, relative_error


def test_zero_update_returns_video_code():
    v = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(compose_modulation(v, np.ones((2, 3)), np.zeros(2)), v)


def test_compose_hand_example():
    m = compose_modulation([1.0, 1.0], [[0.0, 1.0]], [2.0])
    assert m.tolist() == [1.0, 3.0]


def test_compose_vs_matmul_oracle():
    rng = make_rng(0)
    v, basis, phi = rng.normal(size=6), rng.normal(size=(3, 6)), rng.normal(size=(5, 3))
    want = matmul(phi, basis) + v
    assert np.max(np.abs(compose_modulation(v, basis, phi) - want)) < 1e-12


def test_compose_shape_mismatch():
    with pytest.raises(ShapeError):
        compose_modulation(np.zeros(3), np.zeros((2, 4)), np.zeros(2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_compose_linear(seed, a, b):
    rng = make_rng(seed)
    basis = rng.normal(size=(2, 5))
    v1, v2 = rng.normal(size=5), rng.normal(size=5)
    p1, p2 = rng.normal(size=2), rng.normal(size=2)
    lhs = compose_modulation(a * v1 + b * v2, basis, a * p1 + b * p2)
    rhs = a * compose_modulation(v1, basis, p1) + b * compose_modulation(v2, basis, p2)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_penalty_zero_for_orthonormal_rows():
    pen, grad = ortho_penalty(np.eye(3)[:2])
    assert pen == 0.0 and np.all(grad == 0)


def test_penalty_hand_example():
    pen, _ = ortho_penalty([[2.0, 0.0], [0.0, 1.0]])
    assert pen == pytest.approx(3.0)


def test_penalty_gradient_vs_finite_differences():
    basis = make_rng(1).normal(size=(3, 5))
    _, grad = ortho_penalty(basis)
    fd = finite_diff_grad(lambda b: ortho_penalty(b)[0], basis.copy())
    assert relative_error(grad, fd) < 1e-4


def test_penalty_invariant_under_rotation():
    rng = make_rng(2)
    basis = rng.normal(size=(3, 6))
    rot, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    assert abs(ortho_penalty(basis)[0] - ortho_penalty(basis @ rot)[0]) < 1e-9


@pytest.mark.parametrize("k,q", [(1, 4), (2, 256), (7, 7)])
def test_ortho_init_is_orthonormal(k, q):
    sub = init_subspace(k, q, "ortho", seed=3)
    assert np.allclose(sub.basis @ sub.basis.T, np.eye(k), atol=1e-10)
    assert ortho_penalty(sub.basis)[0] < 1e-10
    if k == q:
        assert abs(abs(np.linalg.det(sub.basis)) - 1.0) < 1e-8


def test_basic_init_scale_and_determinism():
    a = init_subspace(4, 400, "basic", seed=9)
    b = init_subspace(4, 400, "basic", seed=9)
    assert np.array_equal(a.basis, b.basis)
    assert 0.8 < np.linalg.norm(a.basis, axis=1).mean() < 1.2


def test_init_rejects_rank_above_q():
    with pytest.raises(ValueError):
        init_subspace(5, 4)


def test_gram_schmidt_rejects_dependent_rows():
    with pytest.raises(ValueError):
        gram_schmidt([[1.0, 2.0], [2.0, 4.0]])
