"""Entropy-regularized optimal transport between path measures (Sinkhorn)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .errors import ConvergenceError, InputError
from .path_space import Coupling, PathMeasure

LOG_DOMAIN_EPS = 0.05


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.01
    max_iterations: int = 50_000
    marginal_tolerance: float = 1e-9
    log_domain: bool | None = None  # None: log domain iff epsilon <= 0.05
    # Sweeps before switching to Newton steps on the potentials; None disables.
    newton_after: int | None = 200

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InputError(f"epsilon must be positive, got {self.epsilon}")
        if not self.marginal_tolerance > 0:
            raise InputError("marginal_tolerance must be positive")

    @property
    def use_log(self) -> bool:
        if self.log_domain is None:
            return self.epsilon <= LOG_DOMAIN_EPS
        return bool(self.log_domain)


@dataclass(frozen=True)
class SinkhornSolution:
    """Regularized optimum and its dual potentials.

    Rows/columns without target mass carry potential ``-inf``, so
    ``coupling[i, j] = exp((phi[i] + psi[j] - cost[i, j]) / epsilon)`` holds
    for every entry.  ``psi`` has mean zero over the supported y-paths.
    """

    coupling: Coupling
    phi: np.ndarray
    psi: np.ndarray
    primal_value: float
    dual_value: float
    iterations: int
    marginal_gap: float
    epsilon: float


def entropy(pi) -> float:
    """``-sum pi log pi`` with ``0 log 0 = 0``."""
    M = pi.matrix if isinstance(pi, Coupling) else np.asarray(pi, dtype=float)
    pos = M[M > 0]
    return float(-np.sum(pos * np.log(pos)))


def entropy_bound(n_x_paths: int, n_y_paths: int) -> float:
    """Uniform upper bound on the entropy of any coupling: ``|X^T| |Y^T| / e``."""
    return n_x_paths * n_y_paths / np.e


def regularized_cost(cost, matrix, epsilon) -> float:
    return float(np.sum(np.asarray(cost) * matrix)) - epsilon * entropy(matrix)


def dual_objective(eta_w, nu_w, phi, psi, cost, epsilon) -> float:
    """Dual of the regularized problem, restricted to the supports.

    Equals the primal value at the optimum; the ``+ epsilon`` makes the
    constant match ``Ent(pi) = -sum pi log pi``.
    """
    I, J = eta_w > 0, nu_w > 0
    ph, ps = phi[I], psi[J]
    z = (ph[:, None] + ps[None, :] - cost[np.ix_(I, J)]) / epsilon
    return float(eta_w[I] @ ph + nu_w[J] @ ps - epsilon * np.exp(z).sum() + epsilon)


def _newton_polish(a, b, C, eps, f, g, tol, max_steps=200):
    """Levenberg-Marquardt ascent on the dual potentials ``(f, g)``.

    Returns ``(f, g, converged)``; the target is ``tol / 10`` so the final
    two-sided marginal check has room for round-off.
    """
    na = a.size

    def state(f, g):
        P = np.exp((f[:, None] + g[None, :] - C) / eps)
        D = a @ f + b @ g - eps * P.sum()
        return D, np.concatenate([a - P.sum(axis=1), b - P.sum(axis=0)]), P

    mu = None
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        D, grad, P = state(f, g)
        for _ in range(max_steps):
            if max(np.abs(grad[:na]).sum(), np.abs(grad[na:]).sum()) <= 0.1 * tol:
                return f, g, True
            r, c = P.sum(axis=1), P.sum(axis=0)
            H = np.block([[np.diag(r), P], [P.T, np.diag(c)]]) / eps
            # Jacobi scaling keeps the eigen-solve accurate across scales.
            sc = 1.0 / np.sqrt(np.maximum(np.diag(H), 1e-300))
            evals, evecs = np.linalg.eigh(H * sc[:, None] * sc[None, :])
            evals = np.maximum(evals, 0.0)
            if mu is None:
                mu = 1e-6 * evals.max()
            proj = evecs.T @ (sc * grad)
            gmax = np.abs(grad).max()
            while True:
                step = sc * (evecs @ (proj / (evals + mu + 1e-300)))
                D_t, grad_t, P_t = state(f + step[:na], g + step[na:])
                if np.isfinite(D_t) and np.all(np.isfinite(grad_t)) and (
                        D_t >= D + 1e-4 * (grad @ step)
                        or (D_t >= D - 1e-13 * max(1.0, abs(D)) and np.abs(grad_t).max() < gmax)):
                    mu = max(mu / 4.0, 1e-12 * evals.max())
                    break
                mu *= 4.0
                if mu > 1e30:
                    return f, g, False
            f, g = f + step[:na], g + step[na:]
            D, grad, P = D_t, grad_t, P_t
    return f, g, max(np.abs(grad[:na]).sum(), np.abs(grad[na:]).sum()) <= tol


def sinkhorn(eta: PathMeasure, nu: PathMeasure, cost, config: SinkhornConfig = SinkhornConfig(),
             init=None, history: list | None = None) -> SinkhornSolution:
    """Solve ``min_pi <cost, pi> - eps Ent(pi)`` over couplings of ``eta`` and ``nu``.

    Parameters
    ----------
    eta, nu : PathMeasure
        Target marginals. Zero-mass entries are excluded from the iteration.
    cost : array_like, shape (len(eta), len(nu))
        Finite cost matrix.
    config : SinkhornConfig
    init : tuple of ndarray, optional
        Warm-start potentials ``(phi, psi)``; only ``psi`` is used.
    history : list, optional
        If given, the dual objective after every sweep is appended to it.

    Raises
    ------
    ConvergenceError
        If the L1 marginal gap is above tolerance after ``max_iterations``.
    """
    a = eta.weights
    b = nu.weights
    C = np.asarray(cost, dtype=float)
    if C.shape != (a.size, b.size):
        raise InputError(f"cost has shape {C.shape}, expected ({a.size}, {b.size})")
    if not np.all(np.isfinite(C)):
        raise InputError("cost matrix has non-finite entries")
    eps = config.epsilon
    I, J = a > 0, b > 0
    aI, bJ = a[I], b[J]
    CIJ = C[np.ix_(I, J)]
    log_a, log_b = np.log(aI), np.log(bJ)

    if init is not None and np.all(np.isfinite(np.asarray(init[1])[J])):
        g = np.asarray(init[1], dtype=float)[J].copy()
    else:
        g = np.zeros(bJ.size)

    it = 0
    gap = np.inf
    if config.use_log:
        Z = -CIJ / eps
        f = np.zeros(aI.size)
        polished = False
        for it in range(1, config.max_iterations + 1):
            f = eps * (log_a - logsumexp(Z + g[None, :] / eps, axis=1))
            g = eps * (log_b - logsumexp(Z + f[:, None] / eps, axis=0))
            P = np.exp(Z + (f[:, None] + g[None, :]) / eps)
            gap = np.abs(P.sum(axis=1) - aI).sum()
            if history is not None:
                history.append(dual_objective(aI, bJ, f, g, CIJ, eps))
            if gap <= config.marginal_tolerance:
                break
            if not polished and config.newton_after is not None and it >= config.newton_after:
                # Sweeps converge linearly with a rate that degrades as the plan
                # sparsifies; finish with Newton on the dual instead.
                polished = True
                f, g, ok = _newton_polish(aI, bJ, CIJ, eps, f, g, config.marginal_tolerance)
                if ok:
                    break
    else:
        # Shift the cost so the kernel's largest entry is 1; undone on phi.
        shift = CIJ.min()
        K = np.exp(-(CIJ - shift) / eps)
        v = np.exp(g / eps - (g / eps).max())
        with np.errstate(over="raise", divide="raise", invalid="raise"):
            try:
                for it in range(1, config.max_iterations + 1):
                    u = aI / (K @ v)
                    v = bJ / (K.T @ u)
                    P = u[:, None] * K * v[None, :]
                    gap = np.abs(P.sum(axis=1) - aI).sum()
                    if history is not None:
                        history.append(dual_objective(
                            aI, bJ, eps * np.log(u) + shift, eps * np.log(v), CIJ, eps))
                    if gap <= config.marginal_tolerance:
                        break
                    if config.newton_after is not None and it >= config.newton_after:
                        raise FloatingPointError  # hand over to the log-domain path
            except FloatingPointError:
                # Kernel under/overflow: fall back to the stabilized iteration.
                cfg = replace(config, log_domain=True)
                return sinkhorn(eta, nu, cost, cfg, init=init, history=history)
        f = eps * np.log(u) + shift
        g = eps * np.log(v)

    # Center psi; the constant goes into phi.
    c = g.mean()
    g = g - c
    f = f + c
    phi = np.full(a.size, -np.inf)
    psi = np.full(b.size, -np.inf)
    phi[I] = f
    psi[J] = g
    M = np.zeros_like(C)
    M[np.ix_(I, J)] = np.exp((f[:, None] + g[None, :] - CIJ) / eps)
    gap = max(np.abs(M.sum(axis=1) - a).sum(), np.abs(M.sum(axis=0) - b).sum())
    if gap > config.marginal_tolerance:
        raise ConvergenceError(
            f"Sinkhorn did not reach marginal tolerance {config.marginal_tolerance:g} "
            f"in {config.max_iterations} iterations (gap {gap:.3g})",
            gap=gap,
        )
    pi = Coupling(eta.space, nu.space, M / M.sum(), atol=max(1e-12, 10 * gap))
    primal = regularized_cost(C, pi.matrix, eps)
    dual = dual_objective(a, b, phi, psi, C, eps)
    return SinkhornSolution(pi, phi, psi, primal, dual, it, float(gap), eps)
