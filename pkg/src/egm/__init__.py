"""Biquaternion electro-gravimagnetic field toolkit.

Algebra, spacetime grids and the mutual complex gradients, field and
charge-current quantities, Lorentz sandwiches, Kirchhoff-type Cauchy
solvers, interaction laws and a scenario-driven command line.
"""

__version__ = "0.1.0"

from .biquat import E1, E2, E3, ONE, ZERO, Biquaternion, bq_bar, bq_dot, bq_mul, bq_norm, bq_pseudonorm_sq, bq_star
from .errors import *  # noqa: F401,F403
from .grid import BiquatField, Grid4, ScalarField, box_direct, box_factored, d_minus, d_plus

__all__ = [
    "Biquaternion",
    "BiquatField",
    "E1",
    "E2",
    "E3",
    "Grid4",
    "ONE",
    "ScalarField",
    "ZERO",
    "box_direct",
    "box_factored",
    "bq_bar",
    "bq_dot",
    "bq_mul",
    "bq_norm",
    "bq_pseudonorm_sq",
    "bq_star",
    "d_minus",
    "d_plus",
]
