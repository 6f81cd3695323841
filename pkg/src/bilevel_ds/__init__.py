"""Derivative-free direct search for bilevel problems with an inexact lower level."""
from .core import (
    BilevelProblem,
    DirectionSet,
    EvalLedger,
    ProblemMetadata,
    SolverConfig,
    cosine_measure,
    decrease_accepted,
    evaluate_reduced,
    make_rng,
)
from .ds_directional import run_directional
from .ds_mesh import run_mesh
from .errors import *  # noqa: F401,F403
from .lower_level import ExactOracle, GradientDescentOracle, InjectedErrorOracle, gd_oracle, injected_error_oracle
from .trace import Trace, read_trace

__version__ = "0.1.0"
