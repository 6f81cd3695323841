"""Synthetic problem suite, experiment runner and solver profiles."""
from .experiment import Cell, ExperimentConfig, ExperimentResult, load_experiment, run_experiment
from .problems import ProblemInstance, get_problem, instances, suite
from .profiles import (
    ProfileTable,
    build_table,
    check_axioms,
    convergence_eval_count,
    data_profile,
    performance_profile,
)
