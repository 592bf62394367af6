"""Knothe-Rosenblatt (stage-wise quantile) coupling of path measures.

Drawing ``U_1, ..., U_T`` iid uniform and setting ``X_t``, ``Y_t`` to the
conditional quantiles of ``U_t`` gives a causal coupling.  For discrete
measures, conditionally on the prefixes the pair at stage ``t`` is the
monotone (north-west corner) plan between the two conditional laws, which
is how it is built here.  Alphabet order is the symbol index order unless
a permutation is supplied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .causal_basis import build_basis, causality_residual
from .cot import cot_lp_oracle
from .errors import InputError
from .path_space import Coupling, PathMeasure, PathSpace


def northwest_corner(a, b) -> np.ndarray:
    """Monotone plan between probability vectors ``a`` and ``b``.

    Mass is filled along a staircase starting at the top-left cell; this
    is the comonotone coupling of the two quantile functions.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if abs(a.sum() - b.sum()) > 1e-9:
        raise InputError(f"masses differ: {a.sum()} vs {b.sum()}")
    P = np.zeros((a.size, b.size))
    r, c = a.copy(), b.copy()
    i = j = 0
    while i < a.size and j < b.size:
        t = min(r[i], c[j])
        P[i, j] += t
        r[i] -= t
        c[j] -= t
        # Leftover rounding mass stays in the row or column we do not advance.
        if r[i] <= c[j]:
            if i == a.size - 1:
                j += 1
            else:
                i += 1
        else:
            j += 1
    return P


def _kr(a, b, n, m, T):
    if T == 1:
        return northwest_corner(a, b)
    a1 = a.reshape(n, -1).sum(axis=1)
    b1 = b.reshape(m, -1).sum(axis=1)
    first = northwest_corner(a1, b1)
    bx, by = a.size // n, b.size // m
    P = np.zeros((a.size, b.size))
    for i, j in zip(*np.nonzero(first)):
        sub = _kr(a[i * bx:(i + 1) * bx] / a1[i], b[j * by:(j + 1) * by] / b1[j], n, m, T - 1)
        P[i * bx:(i + 1) * bx, j * by:(j + 1) * by] = first[i, j] * sub
    return P


def _path_permutation(space: PathSpace, order):
    """Index map sending paths over the reordered alphabet to original indices."""
    if order is None:
        return None
    order = [space.symbol_of(s) if isinstance(s, str) else int(s) for s in order]
    if sorted(order) != list(range(space.alphabet_size)):
        raise InputError(f"order {order} is not a permutation of the alphabet")
    idx = np.zeros(space.size, dtype=int)
    for k, path in enumerate(space.paths()):
        orig = 0
        for s in path:
            orig = orig * space.alphabet_size + order[s]
        idx[k] = orig
    return idx


@dataclass(frozen=True)
class KrCoupling:
    coupling: Coupling


def kr_coupling(eta: PathMeasure, nu: PathMeasure, x_order: Sequence | None = None,
                y_order: Sequence | None = None) -> KrCoupling:
    """Increasing Knothe-Rosenblatt rearrangement of ``eta`` and ``nu``.

    ``x_order`` / ``y_order`` list the alphabet symbols (indices or labels)
    from smallest to largest; the default is index order.
    """
    xs, ys = eta.space, nu.space
    if xs.horizon != ys.horizon:
        raise InputError(f"horizons differ: {xs.horizon} vs {ys.horizon}")
    px, py = _path_permutation(xs, x_order), _path_permutation(ys, y_order)
    a = eta.weights if px is None else eta.weights[px]
    b = nu.weights if py is None else nu.weights[py]
    P = _kr(a, b, xs.alphabet_size, ys.alphabet_size, xs.horizon)
    if px is not None:
        Q = np.zeros_like(P)
        Q[px] = P
        P = Q
    if py is not None:
        Q = np.zeros_like(P)
        Q[:, py] = P
        P = Q
    return KrCoupling(Coupling(xs, ys, P / P.sum()))


@dataclass(frozen=True)
class KrCheck:
    kr_value: float
    lp_value: float
    gap: float
    causality_residual: float


def kr_optimality_check(eta: PathMeasure, nu: PathMeasure, f, x_order=None, y_order=None) -> KrCheck:
    """Compare the cost of the KR coupling with the exact causal optimum.

    Under the independence/convexity conditions probed below the gap is zero.
    """
    kr = kr_coupling(eta, nu, x_order, y_order).coupling
    f = np.asarray(f, dtype=float)
    basis = build_basis(eta, nu.space)
    lp_value, _ = cot_lp_oracle(eta, nu, f, basis)
    value = kr.integrate(f)
    return KrCheck(value, lp_value, value - lp_value, causality_residual(kr, basis))


def is_submodular(k, strict: bool = True, tol: float = 0.0) -> bool:
    """Discrete Spence-Mirrlees test on every adjacent 2x2 minor of ``k``:
    ``k[u+1, z+1] + k[u, z] < k[u+1, z] + k[u, z+1]``."""
    k = np.asarray(k, dtype=float)
    if k.ndim != 2:
        raise InputError("k must be a matrix")
    d = k[1:, 1:] + k[:-1, :-1] - k[1:, :-1] - k[:-1, 1:]
    if d.size == 0:
        return True
    return bool(np.all(d < -tol)) if strict else bool(np.all(d <= tol))


def has_independent_marginals(eta: PathMeasure, tol: float = 1e-12) -> bool:
    space = eta.space
    n, T = space.alphabet_size, space.horizon
    W = eta.weights.reshape((n,) * T)
    prod = np.ones(())
    for t in range(T):
        other = tuple(s for s in range(T) if s != t)
        prod = np.multiply.outer(prod, W.sum(axis=other))
    return bool(np.abs(prod.reshape(-1) - eta.weights).max() <= tol)


def has_independent_increments(eta: PathMeasure, values=None, tol: float = 1e-12) -> bool:
    """Whether ``x_t - x_{t-1}`` is independent of ``(x_1, ..., x_{t-1})`` under ``eta``.

    ``values[s]`` is the real number attached to symbol ``s`` (default ``s``).
    """
    space = eta.space
    n, T = space.alphabet_size, space.horizon
    vals = np.arange(n, dtype=float) if values is None else np.asarray(values, dtype=float)
    if vals.shape != (n,):
        raise InputError(f"need {n} symbol values, got {vals.shape}")
    for t in range(1, T):
        node_w = eta.prefix_weights(t)
        nxt = eta.prefix_weights(t + 1).reshape(-1, n)
        laws = []
        for node in np.flatnonzero(node_w > 0):
            last = vals[node % n]
            law = {}
            for s in range(n):
                p = nxt[node, s] / node_w[node]
                if p > tol:
                    key = round(float(vals[s] - last), 12)
                    law[key] = law.get(key, 0.0) + p
            laws.append(law)
        ref = laws[0]
        for law in laws[1:]:
            keys = set(ref) | set(law)
            if any(abs(ref.get(k, 0.0) - law.get(k, 0.0)) > 1e-9 for k in keys):
                return False
    return True
