"""Quasi-static brittle fracture on a bond lattice.

Discrete-time evolution by incremental global minimization of elastic energy
plus new-crack surface measure, with irreversible crack accumulation, an
energy ledger, an independent brute-force oracle, and a grid-refinement
harness.
"""

from .altmin import PhaseFieldHistory, solve_step_altmin
from .config import RunConfig, build_problem, load_config, parse_config
from .crack import CrackSet, measure, measure_c, union_with_jump
from .density import (EnergyDensity, GrowthReport, check_growth,
                      default_growth_samples)
from .driver import (EnergyLedger, EvolutionResult, InitialConfiguration,
                     TimeGrid, TrajectoryRecord, check_energy_inequality,
                     energy_balance_residual, evolve, initialize,
                     work_increment)
from .harness import (Problem, RefinementStudy, balance_convergence,
                      refine_study)
from .mesh import (LoadProgram, Mesh, NotchSpec, boundary_values, build_bar,
                   build_rect, make_profile, time_derivative)
from .oracle import (BarOracle, bar_crack_time, brute_force_step,
                     expected_grid_crack_time, random_run,
                     random_step_instance, verify_trajectory)
from .solver import (DisplacementState, StepOptions, apriori_gradient_constant,
                     elastic_solve, gradient_p_norm, solve_step_exact,
                     verify_own_jump_minimality)

__version__ = "0.1.0"

__all__ = [
    "BarOracle", "CrackSet", "DisplacementState", "EnergyDensity",
    "EnergyLedger", "EvolutionResult", "GrowthReport", "InitialConfiguration",
    "LoadProgram", "Mesh", "NotchSpec", "PhaseFieldHistory", "Problem",
    "RefinementStudy", "RunConfig", "StepOptions", "TimeGrid",
    "TrajectoryRecord", "apriori_gradient_constant", "balance_convergence",
    "bar_crack_time", "boundary_values", "brute_force_step", "build_bar",
    "build_problem", "build_rect", "check_energy_inequality", "check_growth",
    "default_growth_samples", "elastic_solve", "energy_balance_residual",
    "evolve", "expected_grid_crack_time", "gradient_p_norm", "initialize",
    "load_config", "make_profile", "measure", "measure_c", "parse_config",
    "random_run", "random_step_instance", "refine_study", "solve_step_altmin",
    "solve_step_exact", "time_derivative", "union_with_jump",
    "verify_own_jump_minimality", "verify_trajectory", "work_increment",
]
