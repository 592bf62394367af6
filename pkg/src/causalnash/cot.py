"""Causal optimal transport by concave ascent over the causality multipliers.

For a multiplier vector ``lam`` the inner problem

    OT(lam) = min_{pi in Pi(eta, nu)} <f + lam . e, pi> - eps Ent(pi)

is solved by Sinkhorn.  ``OT`` is concave in ``lam`` with gradient
``<e_k, pi*(lam)>``, and its supremum is the entropic causal transport
value.  Also provides the unregularized LP oracle used for verification.
"""

from __future__ import annotations

import logging
import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.optimize import linprog, minimize

from .causal_basis import CausalBasis, build_basis, causality_residual
from .entropic_ot import SinkhornConfig, SinkhornSolution, dual_objective, regularized_cost, sinkhorn
from .errors import ConvergenceError, InputError, PreconditionError
from .path_space import Coupling, PathMeasure

log = logging.getLogger(__name__)

log = logging.getLogger(__name__)

StepRule = Literal["newton", "lbfgs", "backtracking", "fixed"]


@dataclass(frozen=True)
class CotConfig:
    sinkhorn: SinkhornConfig = field(default_factory=lambda: SinkhornConfig(marginal_tolerance=1e-12))
    outer_tolerance: float = 1e-9
    gradient_tolerance: float = 1e-7
    max_outer_iterations: int = 5000
    step_rule: StepRule = "newton"
    step: float = 1.0
    lambda_init: Literal["zero", "random"] = "zero"
    seed: int | None = None

    def __post_init__(self):
        if not self.outer_tolerance > 0:
            raise InputError("outer_tolerance must be positive")
        if self.step_rule not in ("newton", "lbfgs", "backtracking", "fixed"):
            raise InputError(f"unknown step rule {self.step_rule!r}")

    @property
    def epsilon(self) -> float:
        return self.sinkhorn.epsilon


@dataclass(frozen=True)
class CotSolution:
    coupling: Coupling
    lam: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    value: float
    residual: float
    inner_history: tuple[float, ...]
    inner: SinkhornSolution


class _Dual:
    """``lam -> OT(lam)`` with warm-started Sinkhorn and a small cache."""

    def __init__(self, eta, nu, f, basis, cfg, warm=None):
        self.eta, self.nu, self.f, self.basis, self.cfg = eta, nu, np.asarray(f, float), basis, cfg
        self.warm = warm
        self.last_lam = None
        self.last = None
        self.evaluations = 0

    def solve(self, lam) -> SinkhornSolution:
        lam = np.asarray(lam, dtype=float)
        if self.last_lam is not None and np.array_equal(lam, self.last_lam):
            return self.last
        cost = self.f + self.basis.combine(lam)
        sol = sinkhorn(self.eta, self.nu, cost, self.cfg, init=self.warm)
        self.warm = (sol.phi, sol.psi)
        self.last_lam, self.last = lam.copy(), sol
        self.evaluations += 1
        return sol

    def value_grad(self, lam):
        sol = self.solve(lam)
        return sol.primal_value, self.basis.pairings(sol.coupling.matrix)


def _check_inputs(eta, nu, f, basis):
    f = np.asarray(f, dtype=float)
    if f.shape != (eta.space.size, nu.space.size):
        raise InputError(f"cost has shape {f.shape}, expected ({eta.space.size}, {nu.space.size})")
    if not np.all(np.isfinite(f)):
        raise InputError("cost matrix has non-finite entries")
    if basis is not None:
        if basis.eta.space != eta.space or basis.y_space.size != nu.space.size:
            raise PreconditionError("basis was built for different path spaces")
        if np.abs(basis.eta.weights - eta.weights).max() > 1e-12:
            raise PreconditionError("basis was built from a different eta")
    return f


def cot_solve(eta: PathMeasure, nu: PathMeasure, f, basis: CausalBasis | None = None,
              config: CotConfig = CotConfig(), lam0=None, warm=None) -> CotSolution:
    """Entropic causal transport from ``eta`` to ``nu`` for cost ``f``.

    ``lam0`` and ``warm`` (Sinkhorn potentials) allow warm starts from a
    previous solve, which the equilibrium solvers use heavily.
    """
    if basis is None:
        basis = build_basis(eta, nu.space)
    f = _check_inputs(eta, nu, f, basis)
    dual = _Dual(eta, nu, f, basis, config.sinkhorn, warm)
    K = basis.size
    if lam0 is not None:
        lam = np.asarray(lam0, dtype=float).copy()
        if lam.shape != (K,):
            raise InputError(f"lam0 has shape {lam.shape}, expected ({K},)")
    elif config.lambda_init == "random":
        lam = np.random.default_rng(config.seed).normal(size=K)
    else:
        lam = np.zeros(K)

    history = []
    if K == 0:
        sol = dual.solve(lam)
        history.append(sol.primal_value)
        return _finish(sol, lam, basis, history, f)

    if config.step_rule == "newton":
        start = dual.solve(lam)
        history.append(start.primal_value)
        joint = _joint_newton(eta, nu, f, basis, config, lam, start)
        if joint is not None:
            sol, lam = joint
            history.append(sol.primal_value)
            return _finish(sol, lam, basis, history, f)
        # Fall back to the Sinkhorn-based ascent from the start point.
        lam = _ascend_lbfgs(dual, lam, config, history)
        lam = _ascend_newton(dual, lam, config, history)
    elif config.step_rule == "lbfgs":
        # Quasi-Newton to get close, exact Newton to finish.
        lam = _ascend_lbfgs(dual, lam, config, history)
        lam = _ascend_newton(dual, lam, config, history)
    else:
        lam = _ascend_gradient(dual, lam, config, history)
    return _finish(dual.solve(lam), lam, basis, history, f)


def _finish(sol, lam, basis, history, f):
    res = causality_residual(sol.coupling, basis, atol=1e-8) if basis.size else 0.0
    # Value of the returned plan for the original cost (no multiplier term).
    value = regularized_cost(f, sol.coupling.matrix, sol.epsilon)
    return CotSolution(sol.coupling, lam, sol.phi, sol.psi, value, res,
                       tuple(history), sol)


def _ascend_lbfgs(dual, lam, config, history):
    def fun(x):
        v, g = dual.value_grad(x)
        return -v, -g

    def cb(xk):
        history.append(dual.value_grad(xk)[0])

    try:
        res = minimize(fun, lam, jac=True, method="L-BFGS-B", callback=cb,
                       options={"maxiter": config.max_outer_iterations, "gtol": config.gradient_tolerance,
                                "ftol": 1e-15, "maxcor": 30})
    except ConvergenceError:
        # A trial point far out made Sinkhorn fail; resume from the last good iterate.
        return dual.last_lam if dual.last_lam is not None else lam
    return res.x


def reduced_hessian(sol: SinkhornSolution, basis: CausalBasis) -> np.ndarray:
    """Hessian of ``lam -> OT(lam)`` at the Sinkhorn optimum ``sol``.

    Obtained by eliminating the potentials from the Hessian of the joint
    dual: ``-(1/eps) E^T (W - W A (A^T W A)^+ A^T W) E`` where ``W = diag(pi)``,
    ``A`` maps potentials to entries and ``E`` stacks the basis elements.
    """
    P = sol.coupling.matrix
    I = P.sum(axis=1) > 0
    J = P.sum(axis=0) > 0
    nI, nJ = I.sum(), J.sum()
    w = P[np.ix_(I, J)].reshape(-1)
    A = np.hstack([np.kron(np.eye(nI), np.ones((nJ, 1))), np.kron(np.ones((nI, 1)), np.eye(nJ))])
    E = basis.elements[:, I][:, :, J].reshape(basis.size, -1).T
    WA = A * w[:, None]
    WE = E * w[:, None]
    proj = np.linalg.pinv(A.T @ WA, hermitian=True)
    M = E.T @ WE - WE.T @ A @ proj @ (A.T @ WE)
    return -(M + M.T) / (2.0 * sol.epsilon)


def nu_hessian(pi: Coupling, epsilon: float, basis: CausalBasis | None = None) -> np.ndarray:
    """Hessian of ``nu -> OT_eps(eta, nu)`` (causal if ``basis`` is given).

    ``d psi / d nu`` by implicit differentiation of the dual optimality
    conditions: ``eps * [(B^T W B)^+]_{psi, psi}`` with ``W = diag(pi)`` and
    ``B`` the map from ``(phi, psi, lam)`` to the exponent.  Rows and columns
    of y-paths without mass are zero.  Only its action on directions summing
    to zero is meaningful.
    """
    P = pi.matrix
    I = P.sum(axis=1) > 0
    J = P.sum(axis=0) > 0
    nI, nJ = int(I.sum()), int(J.sum())
    w = P[np.ix_(I, J)].reshape(-1)
    B = np.hstack([np.kron(np.eye(nI), np.ones((nJ, 1))), np.kron(np.ones((nI, 1)), np.eye(nJ))])
    if basis is not None and basis.size:
        E = basis.elements[:, I][:, :, J].reshape(basis.size, -1).T
        B = np.hstack([B, -E])
    G = np.linalg.pinv((B * w[:, None]).T @ B, hermitian=True, rcond=1e-13)
    H = np.zeros((P.shape[1], P.shape[1]))
    H[np.ix_(J, J)] = epsilon * G[nI:nI + nJ, nI:nI + nJ]
    return (H + H.T) / 2.0


def _newton_direction(H, grad):
    # -H is positive semidefinite; drop curvature below a relative cutoff.
    w, V = np.linalg.eigh(-H)
    keep = w > 1e-10 * max(w.max(), 0.0)
    if not keep.any():
        return grad.copy()
    Vk = V[:, keep]
    direction = Vk @ ((Vk.T @ grad) / w[keep])
    # Gradient part in the flat directions is followed with a unit step.
    direction += grad - Vk @ (Vk.T @ grad)
    return direction


def _ascend_newton(dual, lam, config, history):
    """Damped Newton ascent with the exact reduced Hessian.

    A max-norm trust region guards against the near-flat curvature typical
    of almost deterministic plans.  Close to the optimum the value changes
    sit at rounding level, so a step is also accepted when it does not lose
    value beyond noise and shrinks the gradient.
    """
    value, grad = dual.value_grad(lam)
    if not history:
        history.append(value)
    gnorm = np.abs(grad).max()
    radius = 1.0
    stalls = 0
    for _ in range(config.max_outer_iterations):
        if gnorm <= config.gradient_tolerance:
            return lam
        H = reduced_hessian(dual.solve(lam), dual.basis)
        direction = _newton_direction(H, grad)
        if not grad @ direction > 0:
            direction = grad.copy()
        length = np.abs(direction).max()
        truncated = length > radius
        if truncated:
            direction = direction * (radius / length)
        slope = grad @ direction
        trial = lam + direction
        try:
            new_value, new_grad = dual.value_grad(trial)
        except ConvergenceError:
            new_value, new_grad = -np.inf, grad
        new_gnorm = np.abs(new_grad).max()
        noise = 1e-12 * max(1.0, abs(value))
        armijo = new_value >= value + 1e-4 * slope
        flat = new_value >= value - noise and new_gnorm < gnorm
        if np.isfinite(new_value) and (armijo or flat):
            lam, value, grad, gnorm = trial, new_value, new_grad, new_gnorm
            history.append(value)
            if truncated:
                radius *= 4.0
            stalls = 0
        else:
            radius = min(radius, length) * 0.25
            stalls += 1
            if radius < 1e-12 or stalls > 60:
                break
    if gnorm > config.gradient_tolerance:
        raise ConvergenceError(
            f"causal transport ascent stopped with gradient norm {gnorm:.3g} "
            f"(tolerance {config.gradient_tolerance:g})", gap=gnorm, partial=lam)
    return lam


def _joint_newton(eta, nu, f, basis, config, lam, start, max_steps=2000):
    """Damped Newton ascent on the full dual ``(phi, psi, lam)``.

    The dual ``D = phi.eta + psi.nu - eps sum exp((phi + psi - f - lam.e) / eps) + eps``
    is concave with Hessian ``-(1/eps) B^T diag(pi) B``, ``B = [A, -E]``.  Each
    step is a small least-squares solve, so this avoids re-running Sinkhorn
    to full accuracy at every multiplier.  Returns None when it stalls.
    """
    eps = config.epsilon
    tol = config.sinkhorn.marginal_tolerance
    a, b = eta.weights, nu.weights
    I, J = a > 0, b > 0
    nI, nJ, K = int(I.sum()), int(J.sum()), basis.size
    aI, bJ = a[I], b[J]
    FIJ = f[np.ix_(I, J)]
    E = basis.elements[:, I][:, :, J]
    Ef = E.reshape(K, -1)
    A = np.hstack([np.kron(np.eye(nI), np.ones((nJ, 1))), np.kron(np.ones((nI, 1)), np.eye(nJ))])
    B = np.hstack([A, -Ef.T])

    def state(z):
        ph, ps, lm = z[:nI], z[nI:nI + nJ], z[nI + nJ:]
        C = FIJ + np.tensordot(lm, E, axes=1)
        P = np.exp((ph[:, None] + ps[None, :] - C) / eps)
        D = aI @ ph + bJ @ ps - eps * P.sum()
        grad = np.concatenate([aI - P.sum(axis=1), bJ - P.sum(axis=0), Ef @ P.reshape(-1)])
        return D, grad, P

    z = np.concatenate([start.phi[I], start.psi[J], np.asarray(lam, float)])
    # Levenberg-Marquardt damping: near-flat directions (tiny plan entries)
    # get gradient-like steps of length ~ 1/mu instead of huge Newton steps.
    mu = None
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        D, grad, P = state(z)
        for _ in range(max_steps):
            marg = max(np.abs(grad[:nI]).sum(), np.abs(grad[nI:nI + nJ]).sum())
            causal = np.abs(grad[nI + nJ:]).max() if K else 0.0
            if marg <= 0.1 * tol and causal <= config.gradient_tolerance:
                break
            w = P.reshape(-1)
            H = (B * w[:, None]).T @ B / eps
            # Jacobi scaling keeps the eigen-solve accurate across scales.
            dg = np.diag(H)
            sc = 1.0 / np.sqrt(np.where(dg > 1e-300, dg, 1.0))
            evals, evecs = np.linalg.eigh(H * sc[:, None] * sc[None, :])
            evals = np.maximum(evals, 0.0)
            floor = 1e-15 * max(evals.max(), 1e-300)
            if mu is None:
                mu = 1e-6 * evals.max()
            proj = evecs.T @ (sc * grad)
            gmax = np.abs(grad).max()
            while True:
                step = sc * (evecs @ (proj / (evals + mu + floor)))
                D_t, grad_t, P_t = state(z + step)
                ok = np.isfinite(D_t) and np.all(np.isfinite(grad_t))
                if ok and (D_t >= D + 1e-4 * (grad @ step) or (
                        D_t >= D - 1e-13 * max(1.0, abs(D)) and np.abs(grad_t).max() < gmax)):
                    mu = max(mu / 4.0, 1e-12 * evals.max())
                    break
                mu *= 4.0
                if mu > 1e30:
                    log.debug("joint Newton damping blew up (gradient %.3g)", gmax)
                    return None
            z, D, grad, P = z + step, D_t, grad_t, P_t
        else:
            log.debug("joint Newton hit the step limit")
            return None
    ph, ps, lm = z[:nI], z[nI:nI + nJ], z[nI + nJ:]
    c = ps.mean()
    phi = np.full(a.size, -np.inf)
    psi = np.full(b.size, -np.inf)
    phi[I], psi[J] = ph + c, ps - c
    M = np.zeros(f.shape)
    M[np.ix_(I, J)] = P
    gap = max(np.abs(M.sum(axis=1) - a).sum(), np.abs(M.sum(axis=0) - b).sum())
    if gap > tol:
        log.debug("joint Newton ended with marginal gap %.3g", gap)
        return None
    pi = Coupling(eta.space, nu.space, M / M.sum(), atol=max(1e-12, 10 * gap))
    cost = f + basis.combine(lm)
    sol = SinkhornSolution(pi, phi, psi, regularized_cost(f, pi.matrix, eps),
                           dual_objective(a, b, phi, psi, cost, eps) + float(lm @ basis.pairings(pi.matrix)),
                           start.iterations, float(gap), eps)
    return sol, lm


def _ascend_gradient(dual, lam, config, history):
    """Gradient ascent; with ``step_rule='fixed'`` this is plain ascent with step
    ``config.step``, otherwise the step adapts by backtracking (Armijo)."""
    value, grad = dual.value_grad(lam)
    if not history:
        history.append(value)
    step = config.step
    gnorm = np.abs(grad).max()
    for _ in range(config.max_outer_iterations):
        if gnorm <= config.gradient_tolerance:
            return lam
        if config.step_rule == "fixed":
            lam = lam + step * grad
            new_value, new_grad = dual.value_grad(lam)
        else:
            g2 = grad @ grad
            noise = 1e-12 * max(1.0, abs(value))
            while True:
                trial = lam + step * grad
                try:
                    new_value, new_grad = dual.value_grad(trial)
                except ConvergenceError:
                    new_value = -np.inf
                if new_value >= value + 0.25 * step * g2 or step < 1e-12:
                    break
                # Near the optimum value changes drown in Sinkhorn noise; a
                # flat step that shrinks the gradient is still progress.
                if new_value >= value - noise and np.abs(new_grad).max() < gnorm:
                    break
                step *= 0.5
            lam = trial
            step *= 2.0
        improvement = new_value - value
        value, grad = new_value, new_grad
        gnorm = np.abs(grad).max()
        history.append(value)
        if gnorm <= config.gradient_tolerance:
            return lam
        if 0 <= improvement <= config.outer_tolerance * max(1.0, abs(value)) and \
                config.step_rule == "fixed":
            return lam
    if gnorm > config.gradient_tolerance:
        raise ConvergenceError(
            f"causal transport ascent stopped after {config.max_outer_iterations} iterations "
            f"with gradient norm {gnorm:.3g}", gap=gnorm, partial=lam)
    return lam


def ot_static(eta: PathMeasure, nu: PathMeasure, f, config: CotConfig = CotConfig(),
              warm=None) -> SinkhornSolution:
    """Regularized transport without the causality constraint."""
    f = _check_inputs(eta, nu, f, None)
    return sinkhorn(eta, nu, f, config.sinkhorn, init=warm)


def transport_lp_oracle(eta: PathMeasure, nu: PathMeasure, f, basis: CausalBasis | None = None):
    """Exact minimum of ``<f, pi>`` over couplings of ``eta``/``nu``, restricted to
    causal ones when ``basis`` is given.  Returns ``(value, Coupling)``."""
    f = _check_inputs(eta, nu, f, basis)
    nx, ny = f.shape
    if nx * ny > 4096:
        raise PreconditionError(f"LP oracle is limited to 4096 variables, got {nx * ny}")
    rows = [np.kron(np.eye(nx), np.ones((1, ny))), np.kron(np.ones((1, nx)), np.eye(ny))]
    rhs = [eta.weights, nu.weights]
    if basis is not None and basis.size:
        rows.append(basis.elements.reshape(basis.size, -1))
        rhs.append(np.zeros(basis.size))
    res = linprog(f.reshape(-1), A_eq=np.vstack(rows), b_eq=np.concatenate(rhs),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP oracle failed: {res.message}")
    P = np.clip(res.x.reshape(nx, ny), 0.0, None)
    return float(f.reshape(-1) @ res.x), Coupling(eta.space, nu.space, P / P.sum(), atol=1e-7)


def cot_lp_oracle(eta: PathMeasure, nu: PathMeasure, f, basis: CausalBasis | None = None):
    """Exact (unregularized) causal transport value and an optimal coupling."""
    if basis is None:
        basis = build_basis(eta, nu.space)
    return transport_lp_oracle(eta, nu, f, basis)
