import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enrnn import params as P
from enrnn.errors import ContractError, DefectiveEigenvalueError, SolverError
from enrnn.linalg import dominant_eigenpair, eigvals, spectral_radius
from enrnn.optim import make_optimizer
from oracles import finite_difference, match_multisets


def rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def normalized_loss(G, eps):
    # independent route: spectral radius from numpy's LAPACK eigenvalues
    def f(T):
        rho = np.max(np.abs(np.linalg.eigvals(T)))
        return float(np.sum(G * T / (rho + eps)))
    return f


# -- eigennorm_gradient -----------------------------------------------------

def test_gradient_hand_examples():
    T = np.diag([2.0, 1.0])
    eig = dominant_eigenpair(T)
    np.testing.assert_allclose(P.eigennorm_gradient(T, eig, 0.0, np.zeros((2, 2))), 0.0)
    e11 = np.array([[1.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(P.eigennorm_gradient(T, eig, 0.0, e11), 0.0, atol=1e-15)
    e22 = np.array([[0.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(P.eigennorm_gradient(T, eig, 0.0, e22), [[-0.25, 0.0], [0.0, 0.5]], atol=1e-15)
    fd = finite_difference(normalized_loss(e22, 0.0), T, h=1e-6)
    np.testing.assert_allclose(fd, [[-0.25, 0.0], [0.0, 0.5]], atol=1e-8)


@pytest.mark.parametrize("eps", [0.0, 0.01, 0.5])
def test_gradient_matches_finite_differences(eps):
    rng = np.random.default_rng(int(eps * 100))
    for _ in range(15):
        n = int(rng.integers(2, 9))
        T = rng.standard_normal((n, n))
        G = rng.standard_normal((n, n))
        got = P.eigennorm_gradient(T, dominant_eigenpair(T), eps, G)
        fd = finite_difference(normalized_loss(G, eps), T, h=1e-5)
        assert np.max(np.abs(got - fd)) <= 1e-5 * np.max(np.abs(fd))


@given(st.integers(0, 2**31), st.integers(2, 10), st.sampled_from([0.0, 0.1]))
@settings(max_examples=40, deadline=None)
def test_gradient_conjugate_invariant(seed, n, eps):
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((n, n))
    G = rng.standard_normal((n, n))
    eig = dominant_eigenpair(T)
    a = P.eigennorm_gradient(T, eig, eps, G)
    b = P.eigennorm_gradient(T, eig.conjugate(), eps, G)
    assert np.max(np.abs(a - b)) <= 1e-12


@given(st.integers(0, 2**31), st.integers(1, 8), st.floats(0.0, 1.0))
@settings(max_examples=40, deadline=None)
def test_gradient_is_linear_in_cotangent(seed, n, eps):
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((n, n))
    eig = dominant_eigenpair(T)
    G1, G2 = rng.standard_normal((2, n, n))
    lhs = P.eigennorm_gradient(T, eig, eps, 2.0 * G1 - G2)
    rhs = 2.0 * P.eigennorm_gradient(T, eig, eps, G1) - P.eigennorm_gradient(T, eig, eps, G2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * (1 + np.max(np.abs(lhs))))


def test_gradient_rejects_defective_and_zero_radius():
    J = np.array([[2.0, 1.0], [0.0, 2.0]])
    with pytest.raises(DefectiveEigenvalueError):
        P.eigennorm_gradient(J, dominant_eigenpair(J), 0.0, np.ones((2, 2)))
    N = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(DefectiveEigenvalueError):
        P.eigennorm_gradient(N, dominant_eigenpair(N), 0.0, np.ones((2, 2)))
    with pytest.raises(ContractError):
        P.eigennorm_gradient(np.eye(2), dominant_eigenpair(np.eye(2) * 2), 0.0, np.ones((3, 3)))


# -- EigenNormBlock ---------------------------------------------------------

def test_normalize_examples():
    b = P.EigenNormBlock(np.diag([2.0, 1.0]), active=True)
    np.testing.assert_allclose(b.W, np.diag([1.0, 0.5]), atol=1e-15)
    T = np.random.default_rng(0).standard_normal((4, 4))
    np.testing.assert_array_equal(P.EigenNormBlock(T).W, T)
    b = P.EigenNormBlock(3.0 * rot(0.4), epsilon=0.1, active=True)
    np.testing.assert_allclose(b.W, (3.0 / 3.1) * rot(0.4), atol=1e-14)


@given(st.integers(0, 2**31), st.integers(1, 10), st.sampled_from([0.0, 0.01, 0.3]))
@settings(max_examples=40, deadline=None)
def test_active_block_radius(seed, n, eps):
    T = np.random.default_rng(seed).standard_normal((n, n)) * 3
    b = P.EigenNormBlock(T, epsilon=eps, active=True)
    rho = spectral_radius(T)
    assert abs(spectral_radius(b.W) - rho / (rho + eps)) <= 1e-10
    np.testing.assert_array_equal(b.W, T / (b.rho + eps))


def test_inactive_gradient_is_identity_and_stale_cache_detected():
    T = np.diag([0.5, 0.2])
    b = P.EigenNormBlock(T)
    G = np.arange(4.0).reshape(2, 2)
    np.testing.assert_array_equal(b.gradient(G), G)
    b.active = True
    b.normalize()
    b.T = b.T + 0.1
    with pytest.raises(ContractError):
        b.gradient(G)


def test_update_keeps_inactive_below_one():
    b = P.EigenNormBlock(np.diag([0.7, 0.1]))
    # SGD with lr 1: T <- T - G lands at rho = 0.8
    b.update(np.diag([-0.1, 0.0]), make_optimizer("sgd"), 1.0)
    assert not b.active
    assert b.rho == pytest.approx(0.8)
    np.testing.assert_array_equal(b.W, b.T)


def test_update_activates_above_one():
    b = P.EigenNormBlock(np.diag([0.9, 0.1]))
    b.update(np.diag([-0.3, 0.0]), make_optimizer("sgd"), 1.0)
    assert b.active
    assert b.rho == pytest.approx(1.2)
    np.testing.assert_allclose(b.W, b.T / 1.2)


def test_active_update_follows_gradient_descent():
    rng = np.random.default_rng(3)
    T = rng.standard_normal((5, 5))
    b = P.EigenNormBlock(T, active=True)
    G = rng.standard_normal((5, 5))
    expected_grad = P.eigennorm_gradient(T, dominant_eigenpair(T), 0.0, G)
    g = b.update(G, make_optimizer("sgd"), 0.01)
    np.testing.assert_allclose(g, expected_grad, rtol=0, atol=0)
    np.testing.assert_allclose(b.T, T - 0.01 * expected_grad, rtol=0, atol=0)
    np.testing.assert_allclose(b.W, b.T / spectral_radius(b.T), rtol=1e-12)


def test_activation_is_monotone():
    rng = np.random.default_rng(1)
    b = P.EigenNormBlock(0.5 * np.eye(3))
    opt = make_optimizer("sgd")
    seen = []
    for k in range(30):
        G = -np.eye(3) * 0.05 if k < 15 else np.eye(3) * 0.5 + rng.standard_normal((3, 3)) * 0.01
        b.update(G, opt, 1.0)
        seen.append(b.active)
    first = seen.index(True)
    assert all(seen[first:])


def test_defective_step_falls_back_to_raw_gradient(caplog):
    J = np.array([[2.0, 1.0], [0.0, 2.0]])
    b = P.EigenNormBlock(J, active=True)
    G = np.array([[0.1, 0.2], [0.3, 0.4]])
    with caplog.at_level("WARNING"):
        g = b.update(G, make_optimizer("sgd"), 1.0)
    np.testing.assert_array_equal(g, G)
    np.testing.assert_array_equal(b.T, J - G)
    assert "skipped" in caplog.text


def test_solver_failure_rolls_back(monkeypatch):
    b = P.EigenNormBlock(np.diag([2.0, 1.0]), active=True)
    before = (b.T.copy(), b.W.copy(), b.active)

    def boom(T):
        raise SolverError("no convergence", residual=1.0)

    monkeypatch.setattr(P, "dominant_eigenpair", boom)
    with pytest.raises(SolverError):
        b.update(np.ones((2, 2)), make_optimizer("sgd"), 0.1)
    np.testing.assert_array_equal(b.T, before[0])
    np.testing.assert_array_equal(b.W, before[1])
    assert b.active == before[2]


# -- initialization ---------------------------------------------------------

def test_rotation_block_example():
    T = P.rotation_blocks([np.pi / 3], [0.5], 2)
    ev = eigvals(T)
    assert match_multisets(ev, [0.5 * np.exp(1j * np.pi / 3), 0.5 * np.exp(-1j * np.pi / 3)]) < 1e-15


@pytest.mark.parametrize("n", [1, 2, 3, 4, 7, 16])
def test_init_spectrum_matches_block_parameters(n):
    rng = np.random.default_rng(n)
    for _ in range(5):
        thetas, gammas = P.rotation_block_params(n, np.random.default_rng(rng.integers(2**31)))
        assert len(thetas) == n // 2 and len(gammas) == n // 2 + n % 2
        T = P.rotation_blocks(thetas, gammas, n)
        expected = [g * np.exp(s * 1j * t) for t, g in zip(thetas, gammas) for s in (1, -1)]
        if n % 2:
            expected.append(gammas[-1])
        assert match_multisets(eigvals(T), expected) <= 1e-10
        assert spectral_radius(T) <= np.max(np.abs(gammas)) + 1e-15 <= 1 + 1e-15


def test_glorot_bounds_and_mean():
    rng = np.random.default_rng(0)
    assert abs(P.glorot_uniform(1, 1, rng)[0, 0]) <= np.sqrt(3)
    assert np.all(np.abs(P.glorot_uniform(4, 2, rng)) <= 1.0)
    big = P.glorot_uniform(300, 300, rng)
    s = np.sqrt(6 / 600)
    sigma = s / np.sqrt(3) / np.sqrt(big.size)
    assert abs(big.mean()) < 3 * sigma
    with pytest.raises(ContractError):
        P.glorot_uniform(0, 3, rng)


# -- Cayley block -----------------------------------------------------------

def test_cayley_identity_and_rotation():
    b = P.CayleyOrthogonalBlock(np.zeros((3, 3)), np.ones(3))
    np.testing.assert_allclose(b.W, np.eye(3), atol=1e-15)
    a = 0.37
    b = P.CayleyOrthogonalBlock(np.array([[0.0, a], [-a, 0.0]]), np.ones(2))
    # direct 2x2 algebra: (I + A)^{-1} (I - A) with A = [[0, a], [-a, 0]]
    hand = np.array([[1 - a * a, -2 * a], [2 * a, 1 - a * a]]) / (1 + a * a)
    np.testing.assert_allclose(b.W, hand, atol=1e-15)
    np.testing.assert_allclose(b.W, rot(2 * np.arctan(a)), atol=1e-15)


@given(st.integers(0, 2**31), st.integers(1, 12))
@settings(max_examples=40, deadline=None)
def test_cayley_orthogonal_and_skew(seed, q):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((q, q))
    b = P.CayleyOrthogonalBlock(M - M.T, P.sign_diagonal(q, int(rng.integers(0, q + 1))))
    A = b.A
    np.testing.assert_array_equal(A, -A.T)
    assert np.linalg.norm(b.W.T @ b.W - np.eye(q)) <= 1e-10


def test_cayley_init_eigen_angles():
    rng = np.random.default_rng(5)
    A = P.cayley_init_skew(6, rng)
    W = P.CayleyOrthogonalBlock(A, np.ones(6)).W
    ev = eigvals(W)
    np.testing.assert_allclose(np.abs(ev), 1.0, atol=1e-12)
    # angles of the rotation blocks lie in [0, pi/2)
    assert np.all(np.abs(np.angle(ev)) < np.pi / 2 + 1e-12)


def test_sign_diagonal():
    np.testing.assert_array_equal(P.sign_diagonal(5, 2), [1, 1, 1, -1, -1])
    np.testing.assert_array_equal(P.sign_diagonal(3, 0), [1, 1, 1])
    with pytest.raises(ContractError):
        P.sign_diagonal(3, 4)


def _cayley_fd(block, G, h=1e-6):
    iu = np.triu_indices(block.size, 1)
    out = np.zeros(len(iu[0]))
    for k in range(out.size):
        vals = []
        for s in (1, -1):
            up = block.upper.copy()
            up[k] += s * h
            A = np.zeros((block.size, block.size))
            A[iu] = up
            vals.append(np.sum(G * P.CayleyOrthogonalBlock(A - A.T, block.D).W))
        out[k] = (vals[0] - vals[1]) / (2 * h)
    return out


@pytest.mark.parametrize("q,seed", [(4, 0), (6, 1), (6, 2)])
def test_cayley_gradient_finite_differences(q, seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((q, q))
    if seed == 0:
        block = P.CayleyOrthogonalBlock(np.zeros((q, q)), np.ones(q))
    else:
        M = rng.standard_normal((q, q)) * 0.5
        block = P.CayleyOrthogonalBlock(M - M.T, P.sign_diagonal(q, q // 2))
    got = block.gradient(G)
    np.testing.assert_array_equal(got, -got.T)
    fd = _cayley_fd(block, G)
    err = np.max(np.abs(got[block._iu] - fd)) / np.max(np.abs(fd))
    assert err <= 1e-5
    assert np.all(block.gradient(np.zeros((q, q))) == 0)


def test_cayley_update_stays_orthogonal():
    rng = np.random.default_rng(0)
    block = P.CayleyOrthogonalBlock(P.cayley_init_skew(8, rng), P.sign_diagonal(8, 4))
    opt = make_optimizer("rmsprop")
    for _ in range(50):
        block.update(rng.standard_normal((8, 8)), opt, 1e-2)
    assert np.linalg.norm(block.W.T @ block.W - np.eye(8)) <= 1e-10
