"""Entropic causal optimal transport and dynamic Cournot-Nash equilibria on finite path spaces."""

from .causal_basis import CausalBasis, build_basis, causality_residual
from .config import GameConfig, load_config
from .cot import CotConfig, CotSolution, cot_lp_oracle, cot_solve, ot_static, transport_lp_oracle
from .entropic_ot import SinkhornConfig, SinkhornSolution, entropy, sinkhorn
from .errors import ConvergenceError, DomainError, InputError, PreconditionError
from .knothe_rosenblatt import kr_coupling, kr_optimality_check
from .nplayer_verify import estimate_gap, lift
from .path_space import Coupling, MarkovSpec, PathMeasure, PathSpace, markov_to_measure
from .potential_game import (AttractiveEnergy, EquilibriumConfig, EquilibriumResult, PotentialGame,
                             QuadraticEnergy, RepulsiveEnergy, cournot_nash, cournot_nash_static,
                             price_of_anarchy, social_optimum)

__all__ = [
    "AttractiveEnergy", "CausalBasis", "ConvergenceError", "CotConfig", "CotSolution", "Coupling",
    "DomainError", "EquilibriumConfig", "EquilibriumResult", "GameConfig", "InputError",
    "MarkovSpec", "PathMeasure", "PathSpace", "PotentialGame", "PreconditionError",
    "QuadraticEnergy", "RepulsiveEnergy", "SinkhornConfig", "SinkhornSolution", "build_basis",
    "causality_residual", "cot_lp_oracle", "cot_solve", "cournot_nash", "cournot_nash_static",
    "entropy", "estimate_gap", "kr_coupling", "kr_optimality_check", "lift", "load_config",
    "markov_to_measure", "ot_static", "price_of_anarchy", "sinkhorn", "social_optimum",
    "transport_lp_oracle",
]
