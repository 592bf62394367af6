"""Finite path spaces, path measures and couplings.

Paths of length ``T`` over an alphabet of size ``n`` are indexed
lexicographically with the time-1 symbol most significant, so the paths
sharing a prefix of length ``t`` occupy one contiguous block of
``n**(T - t)`` indices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError

PROB_ATOL = 1e-12


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PathSpace:
    alphabet_size: int
    horizon: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if int(self.alphabet_size) < 1 or int(self.horizon) < 1:
            raise InputError("alphabet_size and horizon must be positive integers")
        object.__setattr__(self, "alphabet_size", int(self.alphabet_size))
        object.__setattr__(self, "horizon", int(self.horizon))
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != self.alphabet_size:
                raise InputError(
                    f"got {len(labels)} labels for an alphabet of size {self.alphabet_size}"
                )
            if len(set(labels)) != len(labels):
                raise InputError("alphabet labels must be distinct")
            object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        """Number of full paths."""
        return self.alphabet_size**self.horizon

    def nodes_at(self, t: int) -> int:
        """Number of tree nodes (prefixes) of length ``t``."""
        return self.alphabet_size**t

    @property
    def total_nodes(self) -> int:
        return sum(self.nodes_at(t) for t in range(1, self.horizon + 1))

    def paths(self):
        """All paths as symbol tuples, in index order."""
        return list(itertools.product(range(self.alphabet_size), repeat=self.horizon))

    def path_label(self, index: int) -> str:
        path = path_of_index(self, index)
        if self.labels is None:
            return ",".join(str(s) for s in path)
        return ",".join(self.labels[s] for s in path)

    def path_labels(self) -> list[str]:
        return [self.path_label(i) for i in range(self.size)]

    def prefix_index(self, index, t: int):
        """Index of the length-``t`` prefix node of path(s) ``index``."""
        return np.asarray(index) // self.alphabet_size ** (self.horizon - t)

    def symbol_at(self, index, t: int):
        """Symbol at time ``t`` (1-based) of path(s) ``index``."""
        return (np.asarray(index) // self.alphabet_size ** (self.horizon - t)) % self.alphabet_size

    def symbol_of(self, label: str) -> int:
        if self.labels is None:
            return int(label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise InputError(f"unknown symbol {label!r}; alphabet is {self.labels}") from None


def index_of_path(space: PathSpace, path: Sequence[int]) -> int:
    path = tuple(path)
    if len(path) != space.horizon:
        raise InputError(f"path {path} has length {len(path)}, expected {space.horizon}")
    idx = 0
    for s in path:
        s = int(s)
        if not 0 <= s < space.alphabet_size:
            raise InputError(f"symbol {s} out of range for alphabet size {space.alphabet_size}")
        idx = idx * space.alphabet_size + s
    return idx


def path_of_index(space: PathSpace, index: int) -> tuple[int, ...]:
    index = int(index)
    if not 0 <= index < space.size:
        raise InputError(f"index {index} out of range [0, {space.size})")
    out = []
    for _ in range(space.horizon):
        index, s = divmod(index, space.alphabet_size)
        out.append(s)
    return tuple(reversed(out))


def _check_probability(w, atol, what):
    if w.ndim != 1:
        raise InputError(f"{what} must be a vector")
    if not np.all(np.isfinite(w)):
        raise InputError(f"{what} has non-finite entries")
    if np.any(w < 0):
        raise InputError(f"{what} has negative entries (min {w.min():.3g})")
    if abs(w.sum() - 1.0) > atol:
        raise InputError(f"{what} sums to {w.sum():.15g}, not 1")


@dataclass(frozen=True)
class PathMeasure:
    space: PathSpace
    weights: np.ndarray
    atol: float = field(default=PROB_ATOL, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.space.size,):
            raise InputError(f"weights have shape {w.shape}, expected ({self.space.size},)")
        _check_probability(w, self.atol, "path measure")
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, space: PathSpace) -> PathMeasure:
        return cls(space, np.full(space.size, 1.0 / space.size))

    @classmethod
    def dirac(cls, space: PathSpace, path: Sequence[int]) -> PathMeasure:
        w = np.zeros(space.size)
        w[index_of_path(space, path)] = 1.0
        return cls(space, w)

    def prefix_weights(self, t: int) -> np.ndarray:
        """Mass of each length-``t`` prefix node."""
        if t == 0:
            return np.ones(1)
        return self.weights.reshape(self.space.nodes_at(t), -1).sum(axis=1)


@dataclass(frozen=True)
class MarkovSpec:
    """Time-inhomogeneous Markov chain on a finite alphabet.

    ``transitions[k]`` is the row-stochastic matrix used for the step from
    time ``k + 1`` to time ``k + 2``.
    """

    initial: np.ndarray
    transitions: tuple[np.ndarray, ...]

    def __post_init__(self):
        init = np.asarray(self.initial, dtype=float)
        _check_probability(init, PROB_ATOL, "initial law")
        n = init.size
        mats = []
        for k, P in enumerate(self.transitions):
            P = np.asarray(P, dtype=float)
            if P.shape != (n, n):
                raise InputError(f"transition {k} has shape {P.shape}, expected ({n}, {n})")
            for row in P:
                _check_probability(row, PROB_ATOL, f"row of transition {k}")
            mats.append(_frozen(P))
        object.__setattr__(self, "initial", _frozen(init))
        object.__setattr__(self, "transitions", tuple(mats))

    @property
    def horizon(self) -> int:
        return len(self.transitions) + 1

    @classmethod
    def symmetric(cls, initial, p: float, horizon: int) -> MarkovSpec:
        """Chain that keeps its current symbol with probability ``p`` and
        otherwise moves uniformly to one of the other symbols."""
        init = np.asarray(initial, dtype=float)
        n = init.size
        if not 0.0 <= p <= 1.0:
            raise InputError(f"stay probability {p} outside [0, 1]")
        if n == 1:
            P = np.ones((1, 1))
        else:
            P = np.full((n, n), (1.0 - p) / (n - 1))
            np.fill_diagonal(P, p)
        return cls(init, tuple(P for _ in range(horizon - 1)))


def markov_to_measure(spec: MarkovSpec, labels=None) -> PathMeasure:
    n = spec.initial.size
    w = spec.initial.copy()
    for P in spec.transitions:
        # Each path continues from its last symbol.
        w = (w[:, None] * P[np.arange(w.size) % n]).reshape(-1)
    w = np.clip(w, 0.0, None)
    return PathMeasure(PathSpace(n, spec.horizon, labels), w / w.sum())


def conditional(measure: PathMeasure, prefix: Sequence[int]) -> np.ndarray:
    """Law of the remaining ``T - t`` symbols given the first ``t``.

    Zero-probability prefixes get the uniform suffix law.
    """
    space = measure.space
    prefix = tuple(int(s) for s in prefix)
    t = len(prefix)
    if not 0 <= t < space.horizon:
        raise InputError(f"prefix length {t} must lie in [0, {space.horizon})")
    block = space.alphabet_size ** (space.horizon - t)
    start = 0
    for s in prefix:
        if not 0 <= s < space.alphabet_size:
            raise InputError(f"symbol {s} out of range")
        start = start * space.alphabet_size + s
    w = measure.weights[start * block:(start + 1) * block]
    total = w.sum()
    if total <= 0.0:
        return np.full(block, 1.0 / block)
    return w / total


def one_step_conditionals(measure: PathMeasure, t: int) -> np.ndarray:
    """Matrix ``Q[node, a] = measure(x_{t+1} = a | x_{<=t} = node)``.

    Row ``node`` ranges over length-``t`` prefixes; null nodes get uniform rows.
    """
    space = measure.space
    n = space.alphabet_size
    nxt = measure.prefix_weights(t + 1).reshape(space.nodes_at(t), n)
    tot = nxt.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        Q = np.where(tot > 0, nxt / np.where(tot > 0, tot, 1.0), 1.0 / n)
    return Q


@dataclass(frozen=True)
class Coupling:
    """Joint law on x-paths (rows) times y-paths (columns)."""

    x_space: PathSpace
    y_space: PathSpace
    matrix: np.ndarray
    atol: float = field(default=PROB_ATOL, repr=False, compare=False)

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.shape != (self.x_space.size, self.y_space.size):
            raise InputError(
                f"coupling has shape {M.shape}, expected ({self.x_space.size}, {self.y_space.size})"
            )
        if not np.all(np.isfinite(M)):
            raise InputError("coupling has non-finite entries")
        if np.any(M < 0):
            raise InputError(f"coupling has negative entries (min {M.min():.3g})")
        if abs(M.sum() - 1.0) > self.atol:
            raise InputError(f"coupling mass is {M.sum():.15g}, not 1")
        object.__setattr__(self, "matrix", _frozen(M))

    @classmethod
    def product(cls, eta: PathMeasure, nu: PathMeasure) -> Coupling:
        return cls(eta.space, nu.space, np.outer(eta.weights, nu.weights))

    def integrate(self, g) -> float:
        return float(np.sum(np.asarray(g) * self.matrix))


def marginals(pi: Coupling) -> tuple[PathMeasure, PathMeasure]:
    M = pi.matrix
    tol = max(pi.atol, PROB_ATOL)
    return (
        PathMeasure(pi.x_space, M.sum(axis=1), atol=tol),
        PathMeasure(pi.y_space, M.sum(axis=0), atol=tol),
    )
