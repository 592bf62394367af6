import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from causalnash import (EquilibriumConfig, MarkovSpec, PathSpace, PotentialGame, QuadraticEnergy,
                        markov_to_measure)
from causalnash.cot import CotConfig
from causalnash.entropic_ot import SinkhornConfig

# Case study data: rows are type paths EE, EN, NE, NN; columns action paths QQ, QS, SQ, SS.
CONGESTION_F = np.array([
    [0.0, 0.5, 0.5, 1.0],
    [0.0, 0.0, 0.5, 0.5],
    [0.0, 0.5, 0.25, 0.75],
    [0.0, 0.0, 0.0, 0.0],
])
CONGESTION_A = np.array([
    [2.0, 1.0, 1.0, 0.0],
    [1.0, 2.0, 0.0, 1.0],
    [1.0, 0.0, 2.0, 1.0],
    [0.0, 1.0, 1.0, 2.0],
])

# Reference equilibrium couplings (static = full type path known, dynamic = revealed over time).
TABLE_STATIC = {
    0.1: [[0.048, 0.001, 0.000, 0.000],
          [0.073, 0.330, 0.008, 0.038],
          [0.181, 0.006, 0.256, 0.008],
          [0.000, 0.002, 0.009, 0.039]],
    0.5: [[0.241, 0.007, 0.002, 0.000],
          [0.042, 0.189, 0.003, 0.015],
          [0.122, 0.004, 0.121, 0.004],
          [0.003, 0.016, 0.042, 0.189]],
    0.9: [[0.435, 0.013, 0.002, 0.000],
          [0.009, 0.039, 0.000, 0.002],
          [0.032, 0.001, 0.017, 0.001],
          [0.011, 0.051, 0.070, 0.318]],
}
TABLE_DYNAMIC = {
    0.1: [[0.045, 0.001, 0.004, 0.000],
          [0.075, 0.339, 0.007, 0.030],
          [0.158, 0.005, 0.279, 0.008],
          [0.003, 0.015, 0.006, 0.026]],
    0.5: [[0.238, 0.007, 0.005, 0.000],
          [0.044, 0.201, 0.001, 0.004],
          [0.061, 0.002, 0.181, 0.006],
          [0.011, 0.052, 0.034, 0.153]],
    0.9: [[0.435, 0.013, 0.002, 0.000],
          [0.009, 0.041, 0.000, 0.000],
          [0.009, 0.000, 0.040, 0.001],
          [0.015, 0.066, 0.066, 0.302]],
}

XS = PathSpace(2, 2, ("E", "N"))
YS = PathSpace(2, 2, ("Q", "S"))


def congestion_game(p: float) -> PotentialGame:
    eta = markov_to_measure(MarkovSpec.symmetric([0.5, 0.5], p, 2), XS.labels)
    return PotentialGame(eta, YS, CONGESTION_F, QuadraticEnergy(CONGESTION_A))


def eq_config(eps: float, **kw) -> EquilibriumConfig:
    return EquilibriumConfig(cot=CotConfig(sinkhorn=SinkhornConfig(epsilon=eps, marginal_tolerance=1e-12)),
                             **kw)


@pytest.fixture
def game_half():
    return congestion_game(0.5)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import summary_lines
    lines = list(summary_lines())
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
