import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalnash.cot import transport_lp_oracle
from causalnash.entropic_ot import SinkhornConfig, entropy, entropy_bound, sinkhorn
from causalnash.errors import ConvergenceError, InputError
from causalnash.path_space import Coupling, PathMeasure, PathSpace
from oracles import transport


def measure(space, w):
    w = np.asarray(w, float)
    return PathMeasure(space, w / w.sum(), atol=1e-9)


def test_entropy_examples():
    s = PathSpace(2, 2)
    assert abs(entropy(Coupling(s, s, np.full((4, 4), 1 / 16))) - math.log(16)) < 1e-12
    point = np.zeros((4, 4))
    point[1, 2] = 1
    assert entropy(Coupling(s, s, point)) == 0.0
    assert abs(entropy_bound(4, 4) - 16 / math.e) < 1e-12
    assert abs(entropy_bound(4, 4) - 5.8861) < 1e-4


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_entropy_within_bound(seed):
    rng = np.random.default_rng(seed)
    P = rng.random((4, 4)) ** 3
    P /= P.sum()
    s = PathSpace(2, 2)
    assert 0 <= entropy(Coupling(s, s, P)) <= entropy_bound(4, 4)


def test_config_validation():
    with pytest.raises(InputError):
        SinkhornConfig(epsilon=0)
    with pytest.raises(InputError):
        SinkhornConfig(marginal_tolerance=-1)


def test_zero_cost_gives_product():
    s = PathSpace(2, 2)
    eta, nu = measure(s, [1, 2, 3, 4]), measure(s, [4, 1, 1, 2])
    sol = sinkhorn(eta, nu, np.zeros((4, 4)), SinkhornConfig(epsilon=1.0))
    assert np.allclose(sol.coupling.matrix, np.outer(eta.weights, nu.weights), atol=1e-12)
    # potentials are eps*log of the marginals up to a shared constant
    assert np.allclose(sol.phi - np.log(eta.weights), (sol.phi - np.log(eta.weights))[0])
    assert np.allclose(sol.psi - np.log(nu.weights), (sol.psi - np.log(nu.weights))[0])


@pytest.mark.parametrize("eps", [0.1, 0.01, 0.001])
def test_small_epsilon_concentrates(eps):
    s = PathSpace(2, 1)
    eta = PathMeasure.uniform(s)
    sol = sinkhorn(eta, eta, np.array([[0.0, 1], [1, 0]]), SinkhornConfig(epsilon=eps))
    off = sol.coupling.matrix[0, 1]
    assert off < 2 * math.exp(-1 / eps) + 1e-12
    assert abs(sol.primal_value) <= eps * entropy_bound(2, 2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1.0, 0.1, 0.01]))
def test_against_convex_oracle(seed, eps):
    rng = np.random.default_rng(seed)
    s = PathSpace(2, 2)
    eta, nu = measure(s, rng.random(4) + 0.05), measure(s, rng.random(4) + 0.05)
    f = rng.random((4, 4))
    sol = sinkhorn(eta, nu, f, SinkhornConfig(epsilon=eps, marginal_tolerance=1e-11))
    ref, _ = transport(eta.weights, nu.weights, f, 2, 2, 2, causal=False, epsilon=eps)
    assert abs(sol.primal_value - ref) < 1e-6
    assert abs(sol.primal_value - sol.dual_value) < 1e-8
    P = sol.coupling.matrix
    assert np.abs(P.sum(1) - eta.weights).sum() <= 1e-11
    assert np.abs(P.sum(0) - nu.weights).sum() <= 1e-11
    gibbs = P * np.exp((f - sol.phi[:, None] - sol.psi[None, :]) / eps)
    assert np.allclose(gibbs, 1, atol=1e-8)
    assert abs(sol.psi.mean()) < 1e-10
    lp, _ = transport_lp_oracle(eta, nu, f)
    assert lp - eps * entropy_bound(4, 4) - 1e-9 <= sol.primal_value <= lp + 1e-9


def test_zero_mass_entries_are_excluded():
    s = PathSpace(2, 2)
    eta = measure(s, [0.5, 0, 0.5, 0])
    nu = measure(s, [0.2, 0.3, 0, 0.5])
    f = np.arange(16.0).reshape(4, 4) / 16
    sol = sinkhorn(eta, nu, f, SinkhornConfig(epsilon=0.01))
    P = sol.coupling.matrix
    assert np.all(P[[1, 3]] == 0) and np.all(P[:, 2] == 0)
    assert np.isneginf(sol.phi[1]) and np.isneginf(sol.psi[2])
    sup = np.ix_([0, 2], [0, 1, 3])
    gibbs = P[sup] * np.exp((f[sup] - sol.phi[[0, 2]][:, None] - sol.psi[[0, 1, 3]][None, :]) / 0.01)
    assert np.allclose(gibbs, 1, atol=1e-8)


def test_dual_ascent_is_monotone():
    rng = np.random.default_rng(3)
    s = PathSpace(2, 2)
    eta, nu = measure(s, rng.random(4) + 0.1), measure(s, rng.random(4) + 0.1)
    hist = []
    sinkhorn(eta, nu, rng.random((4, 4)), SinkhornConfig(epsilon=0.5, newton_after=None), history=hist)
    assert len(hist) > 2
    assert all(b >= a - 1e-12 for a, b in zip(hist, hist[1:]))


def test_log_and_scaling_domains_agree():
    rng = np.random.default_rng(5)
    s = PathSpace(2, 2)
    eta, nu = measure(s, rng.random(4) + 0.1), measure(s, rng.random(4) + 0.1)
    f = rng.random((4, 4))
    a = sinkhorn(eta, nu, f, SinkhornConfig(epsilon=0.2, log_domain=True))
    b = sinkhorn(eta, nu, f, SinkhornConfig(epsilon=0.2, log_domain=False))
    assert np.allclose(a.coupling.matrix, b.coupling.matrix, atol=1e-9)


def test_nonconvergence_raises():
    rng = np.random.default_rng(0)
    s = PathSpace(2, 2)
    eta, nu = measure(s, rng.random(4) + 0.1), measure(s, rng.random(4) + 0.1)
    with pytest.raises(ConvergenceError) as err:
        sinkhorn(eta, nu, rng.random((4, 4)),
                 SinkhornConfig(epsilon=0.01, max_iterations=2, newton_after=None))
    assert err.value.gap > 0


def test_shape_and_finiteness_checked():
    s = PathSpace(2, 2)
    eta = PathMeasure.uniform(s)
    with pytest.raises(InputError):
        sinkhorn(eta, eta, np.zeros((4, 3)))
    f = np.zeros((4, 4))
    f[0, 0] = np.inf
    with pytest.raises(InputError):
        sinkhorn(eta, eta, f)
