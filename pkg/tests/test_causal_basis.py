import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalnash.causal_basis import basis_count, build_basis, build_martingales, causality_residual
from causalnash.errors import PreconditionError
from causalnash.path_space import Coupling, MarkovSpec, PathMeasure, PathSpace, markov_to_measure


def random_measure(space, rng, zeros=False):
    w = rng.random(space.size)
    if zeros:
        w[rng.random(space.size) < 0.3] = 0
        w[0] += 0.01
    return PathMeasure(space, w / w.sum(), atol=1e-9)


def adapted_coupling(eta, y_space, rng):
    """Compose random stage-wise kernels y_t ~ K_t(x_{<=t}, y_{<t}) against eta."""
    xs = eta.space
    n, m, T = xs.alphabet_size, y_space.alphabet_size, xs.horizon
    P = eta.weights[:, None] * np.ones((1, y_space.size))
    for t in range(1, T + 1):
        K = rng.random((n**t, m ** (t - 1), m))
        K /= K.sum(axis=2, keepdims=True)
        for i in range(xs.size):
            for j in range(y_space.size):
                xn = i // n ** (T - t)
                yn = j // m ** (T - t + 1)
                b = (j // m ** (T - t)) % m
                P[i, j] *= K[xn, yn, b]
    return Coupling(xs, y_space, P, atol=1e-9)


def test_martingales_uniform():
    mart = build_martingales(PathMeasure.uniform(PathSpace(2, 2)))
    # leaf (E,E) is index 0
    assert np.allclose(mart.at(1)[0], [0.5, 0.0])
    assert np.allclose(mart.at(2)[0], [1, 0, 0, 0])


def test_martingales_markov():
    eta = markov_to_measure(MarkovSpec.symmetric([0.5, 0.5], 0.9, 2))
    assert abs(build_martingales(eta).at(1)[0, 0] - 0.9) < 1e-12


def test_martingale_dirac_is_one_along_path():
    space = PathSpace(2, 3)
    eta = PathMeasure.dirac(space, (1, 0, 1))
    mart = build_martingales(eta)
    leaf = 5
    assert mart.at(1)[leaf, 1] == 1.0
    assert mart.at(2)[leaf, 2] == 1.0
    assert mart.at(3)[leaf, 5] == 1.0


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_martingale_recursion(seed):
    rng = np.random.default_rng(seed)
    eta = random_measure(PathSpace(2, 3), rng, zeros=True)
    mart = build_martingales(eta)
    for t in (1, 2):
        pw = eta.prefix_weights(t)
        nxt = eta.prefix_weights(t + 1).reshape(-1, 2)
        for node in np.flatnonzero(pw > 0):
            expect = (nxt[node] / pw[node]) @ mart.at(t + 1)[:, 2 * node:2 * node + 2].T
            assert np.allclose(mart.at(t)[:, node], expect, atol=1e-12)
    # time-1 values average to the leaf masses
    assert np.allclose(mart.at(1) @ eta.prefix_weights(1), eta.weights, atol=1e-12)


@pytest.mark.parametrize("n,m,T,K", [(2, 2, 2, 8), (2, 2, 1, 0), (2, 3, 3, 96)])
def test_basis_size(n, m, T, K):
    basis = build_basis(PathMeasure.uniform(PathSpace(n, T)), PathSpace(m, T))
    assert basis.size == K == basis_count(n, m, T)


def test_drop_last_leaf():
    basis = build_basis(PathMeasure.uniform(PathSpace(2, 2)), PathSpace(2, 2), drop_last_leaf=True)
    assert basis.size == 6


def test_product_is_causal():
    rng = np.random.default_rng(1)
    eta = random_measure(PathSpace(2, 3), rng)
    nu = random_measure(PathSpace(3, 3), rng)
    assert causality_residual(Coupling.product(eta, nu), build_basis(eta, nu.space)) <= 1e-14


def test_anticipative_coupling_residual():
    # y_1 copies x_2, y_2 = 0.  By hand the largest pairing is 1/8.
    space = PathSpace(2, 2)
    eta = PathMeasure.uniform(space)
    P = np.zeros((4, 4))
    for x in range(4):
        P[x, 2 * (x % 2)] = 0.25
    res = causality_residual(Coupling(space, space, P), build_basis(eta, space))
    assert abs(res - 0.125) < 1e-14


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.booleans())
def test_adapted_couplings_are_causal(seed, zeros):
    rng = np.random.default_rng(seed)
    eta = random_measure(PathSpace(2, 3), rng, zeros)
    ys = PathSpace(2, 3)
    pi = adapted_coupling(eta, ys, rng)
    assert causality_residual(pi, build_basis(eta, ys)) <= 1e-12


def test_residual_checks_marginal():
    space = PathSpace(2, 2)
    basis = build_basis(PathMeasure.uniform(space), space)
    eta2 = PathMeasure(space, np.array([0.4, 0.1, 0.25, 0.25]))
    with pytest.raises(PreconditionError):
        causality_residual(Coupling.product(eta2, PathMeasure.uniform(space)), basis)


def test_basis_is_deterministic():
    eta = markov_to_measure(MarkovSpec.symmetric([0.3, 0.7], 0.8, 3))
    a = build_basis(eta, PathSpace(2, 3))
    b = build_basis(eta, PathSpace(2, 3))
    assert np.array_equal(a.elements, b.elements) and a.provenance == b.provenance
