"""Tropical and rational dynamics of automata."""

from .automata import AutomatonSpec, act, builtin
from .dynamics import OrbitGrid, run
from .errors import TropdynError
from .reports import BoundReport
from .tropical import MaxPlusPresentation, TropicalParam, eval_dequantized, eval_maxplus, eval_rational

__version__ = "0.1.0"

__all__ = [
    "AutomatonSpec",
    "BoundReport",
    "MaxPlusPresentation",
    "OrbitGrid",
    "TropdynError",
    "TropicalParam",
    "act",
    "builtin",
    "eval_dequantized",
    "eval_maxplus",
    "eval_rational",
    "run",
]
