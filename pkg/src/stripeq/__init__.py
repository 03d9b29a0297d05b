"""Equilibria of elliptic problems with reactions concentrated on a boundary strip."""
from stripeq.equilibria import (
    EquilibriumRecord,
    SolveOptions,
    chord_newton_solve,
    continue_in_epsilon,
    find_all_equilibria,
    newton_solve,
    picard_solve,
)
from stripeq.forms import Discretization, ProblemSpec, constant, linear, scaled_tanh, zero
from stripeq.geometry import (
    Mesh,
    boundary_quadrature,
    build_interval_mesh,
    build_rectangle_mesh,
    strip_quadrature,
)
from stripeq.spectral import SpectrumReport, is_hyperbolic, linearized_spectrum

__version__ = "0.1.0"

__all__ = [
    "Discretization",
    "EquilibriumRecord",
    "Mesh",
    "ProblemSpec",
    "SolveOptions",
    "SpectrumReport",
    "boundary_quadrature",
    "build_interval_mesh",
    "build_rectangle_mesh",
    "chord_newton_solve",
    "constant",
    "continue_in_epsilon",
    "find_all_equilibria",
    "is_hyperbolic",
    "linear",
    "linearized_spectrum",
    "newton_solve",
    "picard_solve",
    "scaled_tanh",
    "strip_quadrature",
    "zero",
]
