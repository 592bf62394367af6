"""Monte-Carlo check that a mean-field equilibrium is an approximate Nash
equilibrium of the N-player game.

Every player draws a type path from ``eta`` and plays the equilibrium
coupling's conditional kernel, revealed stage by stage.  Player 0's cost
against the empirical action law of the other ``N - 1`` players is compared
with the best pure adapted deviation, evaluated on the same samples.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .causal_basis import build_basis, causality_residual
from .errors import InputError, PreconditionError
from .path_space import Coupling, PathMeasure
from .potential_game import PotentialGame, first_variation

log = logging.getLogger(__name__)

MAX_ENUMERATED_MAPS = 1 << 16


@dataclass(frozen=True)
class LiftedStrategy:
    """``kernels[t-1][x_node, y_node, b]`` is the probability of action ``b``
    at time ``t`` given the type prefix ``x_node`` (length ``t``) and the
    action prefix ``y_node`` (length ``t - 1``)."""

    eta: PathMeasure
    y_space: object
    kernels: tuple[np.ndarray, ...]

    def reassemble(self) -> np.ndarray:
        """``eta(x) * prod_t K_t(y_t | x_{<=t}, y_{<t})`` as a matrix."""
        xs, ys = self.eta.space, self.y_space
        n, m, T = xs.alphabet_size, ys.alphabet_size, xs.horizon
        x_idx = np.arange(xs.size)[:, None]
        y_idx = np.arange(ys.size)[None, :]
        P = np.broadcast_to(self.eta.weights[:, None], (xs.size, ys.size)).copy()
        for t in range(1, T + 1):
            xn = xs.prefix_index(x_idx, t)
            yn = ys.prefix_index(y_idx, t - 1) if t > 1 else np.zeros_like(y_idx)
            b = ys.symbol_at(y_idx, t)
            P = P * self.kernels[t - 1][xn, yn, b]
        return P

    def reassembly_error(self, pi: Coupling) -> float:
        return float(np.abs(self.reassemble() - pi.matrix).max())

    def sample(self, x_paths, uniforms) -> np.ndarray:
        """Action paths for type paths ``x_paths`` using one uniform per stage.

        ``uniforms`` has shape ``x_paths.shape + (T,)``; sampling is by inverse
        CDF so equal uniforms give equal choices (common random numbers).
        """
        xs, ys = self.eta.space, self.y_space
        m, T = ys.alphabet_size, xs.horizon
        y_node = np.zeros(np.shape(x_paths), dtype=int)
        for t in range(1, T + 1):
            probs = self.kernels[t - 1][xs.prefix_index(x_paths, t), y_node]
            cdf = np.cumsum(probs, axis=-1)
            b = (uniforms[..., t - 1, None] >= cdf[..., :-1]).sum(axis=-1)
            y_node = y_node * m + np.minimum(b, m - 1)
        return y_node


def lift(pi_hat: Coupling, eta: PathMeasure, tol: float = 1e-6) -> LiftedStrategy:
    """Disintegrate a causal coupling into stage-wise kernels.

    Raises PreconditionError if ``pi_hat`` is not causal (residual above
    ``tol``) or its x-marginal is not ``eta``.
    """
    xs, ys = pi_hat.x_space, pi_hat.y_space
    if xs != eta.space:
        raise PreconditionError("coupling and eta live on different path spaces")
    if xs.horizon != ys.horizon:
        raise PreconditionError("type and action paths must have the same horizon")
    res = causality_residual(pi_hat, build_basis(eta, ys), atol=max(tol, 1e-9))
    if res > tol:
        raise PreconditionError(f"coupling is not causal (residual {res:.3g} > {tol:g})")
    n, m, T = xs.alphabet_size, ys.alphabet_size, xs.horizon
    M = pi_hat.matrix.reshape((n,) * T + (m,) * T)
    kernels = []
    for t in range(1, T + 1):
        # Joint law of (x_{<=t}, y_{<=t}) as (n**t, m**(t-1), m).
        axes = tuple(range(t, T)) + tuple(range(T + t, 2 * T))
        J = M.sum(axis=axes).reshape(n**t, m ** (t - 1), m)
        tot = J.sum(axis=2, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            K = np.where(tot > 0, J / np.where(tot > 0, tot, 1.0), 1.0 / m)
        K = K / K.sum(axis=2, keepdims=True)
        K.setflags(write=False)
        kernels.append(K)
    return LiftedStrategy(eta, ys, tuple(kernels))


def adapted_map_count(n: int, m: int, T: int) -> int:
    return int(np.prod([m ** (n**t) for t in range(1, T + 1)], dtype=object))


def adapted_maps(x_space, y_space):
    """Yield every pure adapted map as an array ``y_index[x_index]``."""
    n, m, T = x_space.alphabet_size, y_space.alphabet_size, x_space.horizon
    x_idx = np.arange(x_space.size)
    nodes = [x_space.prefix_index(x_idx, t) for t in range(1, T + 1)]
    choices = [itertools.product(range(m), repeat=n**t) for t in range(1, T + 1)]
    for rule in itertools.product(*[list(c) for c in choices]):
        y = np.zeros(x_space.size, dtype=int)
        for t in range(T):
            y = y * m + np.asarray(rule[t])[nodes[t]]
        yield y


def best_adapted_map(G, x_space, y_space) -> np.ndarray:
    """Minimize ``sum_x G[x, sigma(x)]`` over adapted maps by backward induction."""
    n, m, T = x_space.alphabet_size, y_space.alphabet_size, x_space.horizon
    choice = [None] * T
    # value[x_node, y_node]: best cost of the x-subtree given the action prefix.
    V = np.asarray(G, dtype=float).reshape(n**T, m ** (T - 1), m)
    for t in range(T, 0, -1):
        choice[t - 1] = V.argmin(axis=2)
        value = V.min(axis=2)  # (n**t, m**(t-1))
        if t > 1:
            V = value.reshape(n ** (t - 1), n, m ** (t - 2), m).sum(axis=1)
    x_idx = np.arange(x_space.size)
    y = np.zeros(x_space.size, dtype=int)
    for t in range(1, T + 1):
        y = y * m + choice[t - 1][x_space.prefix_index(x_idx, t), y]
    return y


@dataclass(frozen=True)
class NashGapReport:
    N: int
    samples: int
    seed: int
    incumbent_cost: float
    incumbent_se: float
    best_deviation_cost: float
    best_deviation_se: float
    gap: float
    gap_se: float
    best_deviation: tuple[int, ...]
    deviations_evaluated: int
    low_samples: bool


def _mean_se(v):
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")


def estimate_gap(strategy: LiftedStrategy, game: PotentialGame, N: int, samples: int,
                 seed: int, exhaustive: bool | None = None) -> NashGapReport:
    """Estimate how much player 0 gains by deviating to a pure adapted strategy.

    For ``N = 1`` there are no other players and the mean-field term is
    evaluated at the strategy's own action law instead (a single-agent
    diagnostic).  ``exhaustive`` forces or forbids enumerating all adapted
    maps; by default they are enumerated when there are at most 2**16.
    """
    if seed is None:
        raise InputError("a seed is required for reproducible gap estimates")
    if int(N) < 1 or int(samples) < 2:
        raise InputError("need N >= 1 and at least 2 samples")
    N, samples = int(N), int(samples)
    xs, ys = game.x_space, game.y_space
    if strategy.eta.space != xs or strategy.y_space != ys:
        raise PreconditionError("strategy and game live on different path spaces")
    T = xs.horizon
    rng = np.random.default_rng(seed)
    eta_w = game.eta.weights
    f = game.f

    x0 = rng.choice(xs.size, size=samples, p=eta_w)
    y0 = strategy.sample(x0, rng.random((samples, T)))
    if N == 1:
        nu = PathMeasure(ys, strategy.reassemble().sum(axis=0), atol=1e-9)
        Vm = np.broadcast_to(first_variation(game.energy, nu), (samples, ys.size))
    else:
        xo = rng.choice(xs.size, size=(samples, N - 1), p=eta_w)
        yo = strategy.sample(xo, rng.random((samples, N - 1, T)))
        counts = np.zeros((samples, ys.size))
        np.add.at(counts, (np.repeat(np.arange(samples), N - 1), yo.reshape(-1)), 1.0)
        emp = counts / (N - 1)
        Vm = np.stack([first_variation(game.energy, row) for row in emp])

    rows = np.arange(samples)
    incumbent = f[x0, y0] + Vm[rows, y0]
    # Cost of playing y against sample s's empirical law, for the sampled type.
    C = f[x0] + Vm  # (samples, m**T)
    G = np.zeros((xs.size, ys.size))
    np.add.at(G, x0, C)
    G /= samples

    total = adapted_map_count(xs.alphabet_size, ys.alphabet_size, T)
    if exhaustive is None:
        exhaustive = total <= MAX_ENUMERATED_MAPS
    if exhaustive:
        best, best_val = None, np.inf
        for sigma in adapted_maps(xs, ys):
            v = G[np.arange(xs.size), sigma].sum()
            if v < best_val:
                best, best_val = sigma, v
        evaluated = total
    else:
        best = best_adapted_map(G, xs, ys)
        evaluated = 1
    deviation = C[rows, best[x0]]

    inc_mean, inc_se = _mean_se(incumbent)
    dev_mean, dev_se = _mean_se(deviation)
    gap_mean, gap_se = _mean_se(incumbent - deviation)
    return NashGapReport(N, samples, int(seed), inc_mean, inc_se, dev_mean, dev_se, gap_mean, gap_se,
                         tuple(int(v) for v in best), int(evaluated), samples < 100)
