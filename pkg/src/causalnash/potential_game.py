"""Mean-field potential games on path spaces and their equilibria.

An agent of type path ``x`` choosing action path ``y`` pays
``f(x, y) + V[nu](y)`` where ``nu`` is the population's action law and
``V`` is the first variation of an energy ``E``.  Equilibria minimize
``L(nu) = COT(eta, nu) + E(nu)`` over the simplex; the social planner
instead minimizes the total cost ``COT(eta, nu) + sum V[nu] nu``.  Both are
solved by descent on ``nu`` over the simplex, with the transport potential
``psi`` supplying the gradient of the transport term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Union

import numpy as np

from .causal_basis import build_basis, causality_residual
from .cot import CotConfig, cot_solve, nu_hessian, ot_static
from .errors import ConvergenceError, DomainError, InputError, PreconditionError
from .path_space import Coupling, PathMeasure, PathSpace

log = logging.getLogger(__name__)

Mode = Literal["dynamic", "static", "social"]


def _weights(nu) -> np.ndarray:
    if isinstance(nu, PathMeasure):
        return nu.weights
    return np.asarray(nu, dtype=float)


def _symmetric(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"{name} must be a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InputError(f"{name} has non-finite entries")
    if np.abs(M - M.T).max() > 1e-12 * max(1.0, np.abs(M).max()):
        raise InputError(f"{name} must be symmetric")
    M = (M + M.T) / 2.0
    M.setflags(write=False)
    return M


@dataclass(frozen=True)
class QuadraticEnergy:
    """``E(nu) = nu^T A nu / 2`` with ``V[nu] = A nu``."""

    A: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _symmetric(self.A, "A"))

    @property
    def size(self) -> int:
        return self.A.shape[0]

    def value(self, w):
        return 0.5 * float(w @ self.A @ w)

    def variation(self, w):
        return self.A @ w

    def social_gradient(self, w):
        return 2.0 * (self.A @ w)

    def hessian(self, w):
        return self.A

    def social_hessian(self, w):
        return 2.0 * self.A

    def curvature_form(self) -> np.ndarray:
        return self.A


@dataclass(frozen=True)
class AttractiveEnergy:
    """``E(nu) = sum_{y,z} kernel[y, z] nu(y) nu(z) / 2``."""

    kernel: np.ndarray

    def __post_init__(self):
        K = _symmetric(self.kernel, "kernel")
        if np.any(K < 0):
            raise InputError("attractive kernel must be nonnegative")
        object.__setattr__(self, "kernel", K)

    @property
    def size(self) -> int:
        return self.kernel.shape[0]

    def value(self, w):
        return 0.5 * float(w @ self.kernel @ w)

    def variation(self, w):
        return self.kernel @ w

    def social_gradient(self, w):
        # Kernel symmetry makes the derivative of sum V nu equal to 2 V.
        return 2.0 * (self.kernel @ w)

    def hessian(self, w):
        return self.kernel

    def social_hessian(self, w):
        return 2.0 * self.kernel

    def curvature_form(self) -> np.ndarray:
        return self.kernel


@dataclass(frozen=True)
class RepulsiveEnergy:
    """Congestion measured against a reference law ``m``.

    ``V[nu](y) = c(y) * (nu(y) / m(y))**q`` and
    ``E(nu) = sum_y m(y) H(y, nu(y) / m(y))`` with ``H(y, u) = c(y) u**(q+1) / (q+1)``.
    """

    reference: np.ndarray
    c: np.ndarray
    q: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.reference, dtype=float)
        if m.ndim != 1 or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
            raise InputError("reference must be a probability vector")
        c = np.broadcast_to(np.asarray(self.c, dtype=float), m.shape).copy()
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise InputError("congestion coefficients c must be finite and nonnegative")
        if not (np.isfinite(self.q) and self.q >= 0):
            raise InputError(f"congestion exponent q must be >= 0, got {self.q}")
        m.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "reference", m)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "q", float(self.q))

    @property
    def size(self) -> int:
        return self.reference.size

    def _density(self, w):
        m = self.reference
        off = m <= 0
        if np.any(w[off] > 0):
            raise DomainError("nu charges a point of zero reference mass (nu is not << m)")
        u = np.zeros_like(w)
        u[~off] = w[~off] / m[~off]
        return u, off

    def h(self, u):
        # 0**0 = 1 so that q = 0 gives the constant congestion c
        return self.c * np.power(u, self.q)

    def value(self, w):
        u, off = self._density(w)
        H = self.c * np.power(u, self.q + 1.0) / (self.q + 1.0)
        return float(np.sum((self.reference * H)[~off]))

    def variation(self, w):
        u, off = self._density(w)
        v = self.h(u)
        return np.where(off, 0.0, v)

    def social_gradient(self, w):
        u, off = self._density(w)
        return np.where(off, 0.0, (self.q + 1.0) * self.h(u))

    def _dh(self, w):
        u, off = self._density(w)
        m = np.where(off, 1.0, self.reference)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = self.c * self.q * np.power(u, self.q - 1.0) / m if self.q > 0 else np.zeros_like(u)
        return np.where(off, 0.0, d)

    def hessian(self, w):
        return np.diag(self._dh(w))

    def social_hessian(self, w):
        return np.diag((self.q + 1.0) * self._dh(w))

    def curvature_form(self):
        return None


EnergySpec = Union[QuadraticEnergy, RepulsiveEnergy, AttractiveEnergy]


def first_variation(energy: EnergySpec, nu) -> np.ndarray:
    """The vector ``V[nu]`` over y-paths."""
    w = _weights(nu)
    if w.shape != (energy.size,):
        raise InputError(f"nu has shape {w.shape}, energy expects ({energy.size},)")
    return np.asarray(energy.variation(w), dtype=float)


def energy_value(energy: EnergySpec, nu) -> float:
    w = _weights(nu)
    if w.shape != (energy.size,):
        raise InputError(f"nu has shape {w.shape}, energy expects ({energy.size},)")
    return energy.value(w)


def interaction_cost(energy: EnergySpec, nu) -> float:
    """``sum_y V[nu](y) nu(y)``, the mean-field part of the total cost."""
    w = _weights(nu)
    return float(first_variation(energy, w) @ w)


def is_strictly_convex(energy: EnergySpec, tol: float = 1e-12) -> bool:
    """Strict convexity of ``E`` along the simplex (directions summing to zero)."""
    if isinstance(energy, RepulsiveEnergy):
        return energy.q > 0 and bool(np.all(energy.c[energy.reference > 0] > 0))
    M = energy.curvature_form()
    k = M.shape[0]
    if k == 1:
        return True
    # Orthonormal basis of the tangent space {v : sum v = 0}.
    Q = np.linalg.qr(np.eye(k) - 1.0 / k)[0][:, : k - 1]
    return bool(np.linalg.eigvalsh(Q.T @ M @ Q).min() > tol)


def ll_monotonicity_check(energy: EnergySpec, trials: int = 1000, seed: int = 0) -> bool:
    """Sample pairs ``nu, nu'`` and test ``sum (V[nu] - V[nu'])(nu - nu') >= -1e-10``.

    Vertex pairs (point masses) are always included, then ``trials``
    Dirichlet pairs.  Only points with positive reference mass are used for
    repulsive energies.
    """
    k = energy.size
    allowed = np.ones(k, bool)
    if isinstance(energy, RepulsiveEnergy):
        allowed = energy.reference > 0
    idx = np.flatnonzero(allowed)
    pairs = []
    for a in idx:
        for b in idx:
            if a < b:
                u, v = np.zeros(k), np.zeros(k)
                u[a] = v[b] = 1.0
                pairs.append((u, v))
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        u, v = np.zeros(k), np.zeros(k)
        u[idx] = rng.dirichlet(np.full(idx.size, 0.5))
        v[idx] = rng.dirichlet(np.full(idx.size, 0.5))
        pairs.append((u, v))
    for u, v in pairs:
        if (energy.variation(u) - energy.variation(v)) @ (u - v) < -1e-10:
            return False
    return True


@dataclass(frozen=True)
class PotentialGame:
    eta: PathMeasure
    y_space: PathSpace
    f: np.ndarray
    energy: EnergySpec

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        shape = (self.eta.space.size, self.y_space.size)
        if f.shape != shape:
            raise InputError(f"cost f has shape {f.shape}, expected {shape}")
        if not np.all(np.isfinite(f)):
            raise InputError("cost f must be finite")
        if self.energy.size != self.y_space.size:
            raise InputError(
                f"energy acts on {self.energy.size} points but there are {self.y_space.size} y-paths"
            )
        f.setflags(write=False)
        object.__setattr__(self, "f", f)

    @property
    def x_space(self) -> PathSpace:
        return self.eta.space

    def with_eta(self, eta: PathMeasure) -> PotentialGame:
        return replace(self, eta=eta)


@dataclass(frozen=True)
class EquilibriumConfig:
    """``step_rule='gradient'`` is the plain scheme: step ``-delta (psi + V)``,
    clamp at zero, renormalize, with ``delta`` adapted by backtracking.
    ``'newton'`` (default) uses the Hessian of the objective on the simplex
    and falls back to the gradient step when that fails."""

    cot: CotConfig = field(default_factory=CotConfig)
    step_rule: Literal["newton", "gradient"] = "newton"
    delta: float = 1.0  # initial gradient step
    stationarity_tolerance: float = 1e-5
    max_iterations: int = 5000
    support_threshold: float = 1e-8

    def __post_init__(self):
        if not self.delta > 0:
            raise InputError("delta must be positive")
        if self.step_rule not in ("newton", "gradient"):
            raise InputError(f"unknown step rule {self.step_rule!r}")
        if not self.stationarity_tolerance > 0:
            raise InputError("stationarity_tolerance must be positive")

    @property
    def epsilon(self) -> float:
        return self.cot.epsilon


@dataclass(frozen=True)
class Certificate:
    marginal_gap: float
    causality_residual: float
    stationarity_gap: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class EquilibriumResult:
    mode: str
    coupling: Coupling
    nu_hat: PathMeasure
    lam: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    transport_value: float
    energy_value: float
    variational_value: float
    total_cost: float
    certificate: Certificate
    objective_history: tuple[float, ...] = ()

    def direction(self, game: PotentialGame) -> np.ndarray:
        """``psi + V[nu_hat]`` centred to sum zero."""
        d = self.psi + first_variation(game.energy, self.nu_hat)
        return d - d[np.isfinite(d)].mean()


@dataclass
class _Inner:
    value: float
    coupling: Coupling
    lam: np.ndarray
    phi: np.ndarray
    psi: np.ndarray


def _inner_solver(game: PotentialGame, config: EquilibriumConfig, causal: bool):
    if causal:
        basis = build_basis(game.eta, game.y_space)

        def solve(nu, prev):
            lam0 = prev.lam if prev is not None else None
            warm = (prev.phi, prev.psi) if prev is not None else None
            s = cot_solve(game.eta, nu, game.f, basis, config.cot, lam0=lam0, warm=warm)
            return _Inner(s.value, s.coupling, s.lam, s.phi, s.psi)
        return solve, basis

    def solve(nu, prev):
        warm = (prev.phi, prev.psi) if prev is not None else None
        s = ot_static(game.eta, nu, game.f, config.cot, warm=warm)
        return _Inner(s.primal_value, s.coupling, np.zeros(0), s.phi, s.psi)
    return solve, None


def _allowed(game: PotentialGame) -> np.ndarray:
    if isinstance(game.energy, RepulsiveEnergy):
        return game.energy.reference > 0
    return np.ones(game.y_space.size, bool)


def _start(game, nu0, allowed):
    if nu0 is None:
        w = allowed / allowed.sum()
    else:
        w = _weights(nu0).astype(float)
        if w.shape != (game.y_space.size,):
            raise InputError(f"initial nu has shape {w.shape}, expected ({game.y_space.size},)")
        if np.any(w[allowed] <= 0) or np.any(w[~allowed] > 0):
            raise PreconditionError("initial nu must charge exactly the admissible action paths")
    return w / w.sum()


def _gap(d, w, allowed, threshold):
    da = d[allowed]
    sup = w[allowed] > threshold
    return float(np.max(np.abs(da[sup] - da.min())))


def _descend(game: PotentialGame, config: EquilibriumConfig, mode: str, nu0=None) -> EquilibriumResult:
    causal = mode in ("dynamic", "social")
    solve, basis = _inner_solver(game, config, causal)
    energy = game.energy
    if mode == "social":
        extra_value = lambda w: interaction_cost(energy, w)  # noqa: E731
        extra_grad, extra_hess = energy.social_gradient, energy.social_hessian
    else:
        extra_value = energy.value
        extra_grad, extra_hess = energy.variation, energy.hessian
    allowed = _allowed(game)
    idx = np.flatnonzero(allowed)
    space = game.y_space
    eps = config.epsilon

    def evaluate(w, prev):
        inner = solve(PathMeasure(space, w, atol=1e-9), prev)
        d = np.where(allowed, inner.psi + extra_grad(w), 0.0)
        d[allowed] -= d[allowed].mean()
        return inner.value + extra_value(w), d, inner

    def newton_direction(w, d, inner):
        H = nu_hessian(inner.coupling, eps, basis) + extra_hess(w)
        H = H[np.ix_(idx, idx)]
        k = idx.size
        # Minimize the quadratic model on the tangent space of the simplex.
        KKT = np.block([[H, np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
        sol = np.linalg.lstsq(KKT, np.concatenate([-d[idx], [0.0]]), rcond=1e-12)[0]
        s = np.zeros_like(w)
        s[idx] = sol[:k]
        return s

    def acceptable(L_t, gap_t, slope):
        noise = 1e-12 * max(1.0, abs(L))
        return L_t <= L + 1e-4 * slope or (L_t <= L + noise and gap_t < gap)

    w = _start(game, nu0, allowed)
    L, d, inner = evaluate(w, None)
    gap = _gap(d, w, allowed, config.support_threshold)
    history = [L]
    delta = config.delta
    it = 0
    while gap > config.stationarity_tolerance and it < config.max_iterations:
        it += 1
        found = None
        if config.step_rule == "newton":
            s = newton_direction(w, d, inner)
            slope = d @ s
            if slope < 0:
                neg = s < 0
                # Stay strictly inside the simplex.
                t = min(1.0, 0.9 * np.min(-w[neg] / s[neg])) if neg.any() else 1.0
                for _ in range(40):
                    trial = np.where(allowed, w + t * s, 0.0)
                    trial /= trial.sum()
                    L_t, d_t, inner_t = evaluate(trial, inner)
                    gap_t = _gap(d_t, trial, allowed, config.support_threshold)
                    if acceptable(L_t, gap_t, t * slope):
                        found = trial, L_t, d_t, inner_t, gap_t
                        break
                    t *= 0.5
        if found is None:
            for _ in range(60):
                # Descent step, clamped at zero and renormalized onto the simplex.
                trial = np.where(allowed, np.maximum(w - delta * d, 0.0), 0.0)
                if not np.all(trial[allowed] > 0):
                    # Keep full support: the entropic problem never sits on the boundary.
                    delta *= 0.5
                    continue
                trial /= trial.sum()
                L_t, d_t, inner_t = evaluate(trial, inner)
                gap_t = _gap(d_t, trial, allowed, config.support_threshold)
                if acceptable(L_t, gap_t, d @ (trial - w)):
                    found = trial, L_t, d_t, inner_t, gap_t
                    delta = min(delta * 2.0, 1e6)
                    break
                delta *= 0.5
        if found is None:
            break
        w, L, d, inner, gap = found
        history.append(L)

    converged = gap <= config.stationarity_tolerance
    result = _result(game, mode, w, inner, d, gap, it, converged, history, basis)
    if not converged:
        raise ConvergenceError(
            f"{mode} equilibrium search stopped after {it} iterations with stationarity gap "
            f"{gap:.3g} (tolerance {config.stationarity_tolerance:g})", gap=gap, partial=result)
    log.debug("%s equilibrium: %d iterations, gap %.3g", mode, it, gap)
    return result


def _result(game, mode, w, inner, d, gap, it, converged, history, basis):
    pi = inner.coupling
    nu_hat = PathMeasure(game.y_space, pi.matrix.sum(axis=0), atol=1e-9)
    marg = max(np.abs(pi.matrix.sum(axis=1) - game.eta.weights).sum(),
               np.abs(pi.matrix.sum(axis=0) - w).sum())
    res = causality_residual(pi, basis, atol=1e-8) if basis is not None else float("nan")
    energy = game.energy
    E = energy_value(energy, nu_hat)
    return EquilibriumResult(
        mode=mode,
        coupling=pi,
        nu_hat=nu_hat,
        lam=inner.lam,
        phi=inner.phi,
        psi=inner.psi,
        transport_value=inner.value,
        energy_value=E,
        variational_value=inner.value + E,
        total_cost=inner.value + interaction_cost(energy, nu_hat),
        certificate=Certificate(float(marg), float(res), float(gap), it, bool(converged)),
        objective_history=tuple(history),
    )


def cournot_nash(game: PotentialGame, config: EquilibriumConfig = EquilibriumConfig(),
                 nu0=None) -> EquilibriumResult:
    """Dynamic equilibrium: minimize ``COT(eta, nu) + E(nu)`` over action laws.

    Raises ConvergenceError (with the partial result attached) if the
    stationarity gap stays above tolerance.
    """
    return _descend(game, config, "dynamic", nu0)


def cournot_nash_static(game: PotentialGame, config: EquilibriumConfig = EquilibriumConfig(),
                        nu0=None) -> EquilibriumResult:
    """Static equilibrium: as ``cournot_nash`` with plain transport (types fully known)."""
    return _descend(game, config, "static", nu0)


def social_optimum(game: PotentialGame, config: EquilibriumConfig = EquilibriumConfig(),
                   nu0=None) -> EquilibriumResult:
    """Planner's optimum of the total cost ``COT(eta, nu) + sum V[nu] nu``."""
    return _descend(game, config, "social", nu0)


SOLVERS: dict[str, Callable] = {
    "dynamic": cournot_nash,
    "static": cournot_nash_static,
    "social": social_optimum,
}


def total_cost(game: PotentialGame, nu, config: EquilibriumConfig = EquilibriumConfig()) -> float:
    """``COT(eta, nu) + sum V[nu] nu`` with the regularized causal transport value."""
    nu = nu if isinstance(nu, PathMeasure) else PathMeasure(game.y_space, _weights(nu), atol=1e-9)
    s = cot_solve(game.eta, nu, game.f, None, config.cot)
    return s.value + interaction_cost(game.energy, nu)


@dataclass(frozen=True)
class PriceOfAnarchy:
    value: float
    nash_total_cost: float
    social_total_cost: float
    degenerate: bool  # both unregularized costs vanish; value set to 1 by convention
    nonunique_risk: bool  # energy not strictly convex, so the unregularized Nash set may not be a point


def price_of_anarchy(game: PotentialGame, config: EquilibriumConfig = EquilibriumConfig(),
                     nash: EquilibriumResult | None = None,
                     social: EquilibriumResult | None = None) -> PriceOfAnarchy:
    """Ratio of the Nash total cost to the social optimum's total cost.

    The numerator uses the single computed equilibrium; with ``eps > 0`` the
    regularized equilibrium is unique.
    """
    nash = nash or cournot_nash(game, config)
    social = social or social_optimum(game, config)
    num, den = nash.total_cost, social.total_cost
    risk = not is_strictly_convex(game.energy)
    # The entropic term shifts both costs below zero when nothing is at
    # stake, so degeneracy is judged on the unregularized costs of the plans.
    plain = [r.coupling.integrate(game.f) + interaction_cost(game.energy, r.nu_hat)
             for r in (nash, social)]
    if max(abs(plain[0]), abs(plain[1])) <= 1e-12:
        return PriceOfAnarchy(1.0, num, den, True, risk)
    if den <= 0:
        raise PreconditionError(
            f"social total cost {den:.6g} is not positive; the ratio is not meaningful")
    return PriceOfAnarchy(num / den, num, den, False, risk)
