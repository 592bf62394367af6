"""Finite basis of the causality test functions and the causality residual.

A coupling ``pi`` with x-marginal ``eta`` is causal iff it integrates to
zero every function

    e(x, y) = 1{y_{<=s} = u} * (M_{s+1}(x_{<=s+1}) - M_s(x_{<=s})),

with ``u`` a y-node at time ``s < T`` and ``M`` an ``eta``-martingale.  The
martingales generated by the leaf indicators span all of them, which gives
the finite family built here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .path_space import Coupling, PathMeasure, PathSpace, marginals, one_step_conditionals

MARGINAL_ATOL = 1e-9


@dataclass(frozen=True)
class MartingaleFamily:
    """``values[t - 1][j, node]`` is ``M^j_t`` at the time-``t`` node ``node``.

    ``M^j_T`` is the indicator of leaf ``j``; earlier times come from
    backward conditional expectation under ``eta``.
    """

    eta: PathMeasure
    values: tuple[np.ndarray, ...]

    def at(self, t: int) -> np.ndarray:
        return self.values[t - 1]

    def on_paths(self, t: int) -> np.ndarray:
        """``M^j_t`` evaluated on every full x-path, shape (leaves, paths)."""
        space = self.eta.space
        nodes = space.prefix_index(np.arange(space.size), t)
        return self.values[t - 1][:, nodes]


def build_martingales(eta: PathMeasure) -> MartingaleFamily:
    space = eta.space
    n, T = space.alphabet_size, space.horizon
    L = space.size
    vals = [None] * T
    vals[T - 1] = np.eye(L)
    for t in range(T - 1, 0, -1):
        Q = one_step_conditionals(eta, t)  # (n**t, n)
        nxt = vals[t].reshape(L, n**t, n)
        vals[t - 1] = np.einsum("jka,ka->jk", nxt, Q)
    for v in vals:
        v.setflags(write=False)
    return MartingaleFamily(eta, tuple(vals))


@dataclass(frozen=True)
class CausalBasis:
    """Dense basis matrices ``elements[k]`` of shape (n**T, m**T).

    ``provenance[k] = (s, u, j)``: y-node ``u`` at time ``s`` and x-leaf ``j``.
    """

    eta: PathMeasure
    y_space: PathSpace
    elements: np.ndarray
    provenance: tuple[tuple[int, int, int], ...]

    @property
    def size(self) -> int:
        return len(self.provenance)

    def combine(self, lam) -> np.ndarray:
        """The matrix ``sum_k lam_k e_k``."""
        lam = np.asarray(lam, dtype=float)
        if self.size == 0:
            return np.zeros((self.eta.space.size, self.y_space.size))
        return np.tensordot(lam, self.elements, axes=1)

    def pairings(self, matrix) -> np.ndarray:
        """Vector ``(sum_{i,j} e_k[i, j] * matrix[i, j])_k``."""
        if self.size == 0:
            return np.zeros(0)
        return np.tensordot(self.elements, np.asarray(matrix), axes=([1, 2], [0, 1]))


def build_basis(eta: PathMeasure, y_space: PathSpace, drop_last_leaf: bool = False) -> CausalBasis:
    """Basis of the causality constraint space for x-marginal ``eta``.

    Only y-nodes at times ``1..T-1`` generate elements.  The leaf martingales
    sum to the constant 1, so one of them is redundant; it is kept unless
    ``drop_last_leaf`` is set.
    """
    xs = eta.space
    T = xs.horizon
    if y_space.horizon != T:
        raise PreconditionError(f"horizons differ: x has {T}, y has {y_space.horizon}")
    mart = build_martingales(eta)
    leaves = range(xs.size - 1) if drop_last_leaf else range(xs.size)
    y_idx = np.arange(y_space.size)
    elems, prov = [], []
    for s in range(1, T):
        incr = mart.on_paths(s + 1) - mart.on_paths(s)  # (leaves, x-paths)
        y_nodes = y_space.prefix_index(y_idx, s)
        for u in range(y_space.nodes_at(s)):
            h = (y_nodes == u).astype(float)
            for j in leaves:
                elems.append(np.outer(incr[j], h))
                prov.append((s, u, j))
    if elems:
        arr = np.stack(elems)
    else:
        arr = np.zeros((0, xs.size, y_space.size))
    arr.setflags(write=False)
    return CausalBasis(eta, y_space, arr, tuple(prov))


def causality_residual(pi: Coupling, basis: CausalBasis, atol: float = MARGINAL_ATOL) -> float:
    """``max_k |<e_k, pi>|``; zero exactly for causal couplings."""
    x_marg, _ = marginals(pi)
    gap = np.abs(x_marg.weights - basis.eta.weights).max()
    if gap > atol:
        raise PreconditionError(
            f"coupling x-marginal differs from the basis' eta by {gap:.3g}"
        )
    if basis.size == 0:
        return 0.0
    return float(np.abs(basis.pairings(pi.matrix)).max())


def basis_count(n: int, m: int, T: int) -> int:
    return n**T * sum(m**t for t in range(1, T))
